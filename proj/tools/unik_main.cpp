#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "unik/unik.hpp"

namespace {

void print_metrics(const unik::Metrics& m) {
  std::printf("samples:         %zu\n", m.samples);
  std::printf("top1:            %.4f\n", m.top1);
  std::printf("top5:            %.4f\n", m.top5);
  std::printf("mean_per_class:  %.4f\n", m.mean_per_class);
}

// Builds the architecture for eval/probe: optional config file overrides,
// joint count from the layout, coordinate count and classes from the data.
unik::NetworkConfig arch_for(const std::string& config_path,
                             const unik::JointLayout& layout,
                             const unik::DatasetSplit& split) {
  unik::TrainConfig tc;
  if (!config_path.empty()) tc = unik::parse_train_config(config_path);
  return unik::make_net_config(tc, layout.joints(), split.sequences[0].dims(),
                               split.num_classes);
}

int run_train(const std::string& config_path, long long seed_override) {
  unik::TrainConfig cfg = unik::parse_train_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  unik::TrainResult result = unik::train<float>(cfg, [](const unik::EpochRecord& r) {
    std::printf("epoch %3zu  lr %.5f  loss %.4f  train_top1 %.4f", r.epoch, r.lr, r.train_loss,
                r.train_top1);
    if (!std::isnan(r.val_top1)) std::printf("  val_top1 %.4f", r.val_top1);
    std::printf("\n");
    std::fflush(stdout);
    return true;
  });
  std::printf("checkpoints: best=%s last=%s\n", result.best_checkpoint.c_str(),
              result.last_checkpoint.c_str());
  if (result.curve.empty()) {
    std::printf("no epochs run; checkpoint equals initialization\n");
    return 0;
  }
  std::printf("final metrics (%s split):\n", result.has_val ? "val" : "train");
  print_metrics(result.final_val);
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& layout_path,
             const std::string& scores_out, const std::string& stream,
             const std::string& config_path) {
  auto layout = std::make_shared<const unik::JointLayout>(unik::load_layout(layout_path));
  unik::DatasetSplit split = unik::prepare_split(unik::parse_dataset(data, layout), *layout,
                                                 stream);
  unik::NetworkConfig nc = arch_for(config_path, *layout, split);
  unik::Rng rng(0);
  unik::Network<float> net(nc, rng);
  unik::load_checkpoint(net, ckpt);
  unik::ScoreTable scores;
  unik::Metrics m = unik::evaluate(net, split, 1200, &scores);
  if (!scores_out.empty()) unik::write_scores_csv(scores, scores_out);
  print_metrics(m);
  return 0;
}

int run_probe(const std::string& ckpt, const std::string& data, const std::string& layout_path,
              const std::string& val_data, std::size_t epochs, const std::string& stream,
              const std::string& config_path, const std::string& head_out,
              std::uint64_t seed) {
  auto layout = std::make_shared<const unik::JointLayout>(unik::load_layout(layout_path));
  unik::DatasetSplit split = unik::prepare_split(unik::parse_dataset(data, layout), *layout,
                                                 stream);
  std::unique_ptr<unik::DatasetSplit> val;
  if (!val_data.empty())
    val = std::make_unique<unik::DatasetSplit>(
        unik::prepare_split(unik::parse_dataset(val_data, layout), *layout, stream));
  unik::NetworkConfig nc = arch_for(config_path, *layout, split);
  unik::Rng rng(0);
  unik::Network<float> net(nc, rng);
  unik::load_pretrained_partial(net, ckpt, unik::RestorePolicy::backbone_only);
  auto probe = unik::linear_probe(net, split, val.get(), epochs, seed);
  std::printf("trainable params: %zu\n", probe.trainable_params);
  std::printf("train metrics:\n");
  print_metrics(probe.train_metrics);
  if (probe.has_val) {
    std::printf("val metrics:\n");
    print_metrics(probe.val_metrics);
  }
  if (!head_out.empty()) {
    unik::save_checkpoint(net, head_out, static_cast<std::uint32_t>(epochs), seed);
    std::printf("head checkpoint: %s\n", head_out.c_str());
  }
  return 0;
}

int run_fuse(const std::string& joint_csv, const std::string& bone_csv, const std::string& data,
             const std::string& out_csv) {
  unik::ScoreTable joint = unik::read_scores_csv(joint_csv);
  unik::ScoreTable bone = unik::read_scores_csv(bone_csv);
  unik::ScoreTable fused = unik::fuse_score_tables(joint, bone);
  unik::DatasetSplit split = unik::parse_dataset(data, nullptr);
  unik::Metrics m = unik::score_table_metrics(fused, unik::labels_by_id(split),
                                              fused.classes());
  if (!out_csv.empty()) {
    // Renormalize so the written rows are distributions again.
    for (auto& row : fused.rows)
      for (double& v : row) v *= 0.5;
    unik::write_scores_csv(fused, out_csv);
  }
  print_metrics(m);
  return 0;
}

int run_synth(const std::string& spec_path, const std::string& out_dir) {
  unik::SynthSpec spec = unik::parse_synth_spec(spec_path);
  auto layout = std::make_shared<const unik::JointLayout>(
      unik::JointLayout::for_joints(spec.joints));
  unik::DatasetSplit split = unik::synth_generate(spec, layout);
  std::filesystem::create_directories(out_dir);
  std::filesystem::path dir(out_dir);
  unik::write_dataset(split, (dir / "data.jsonl").string());
  unik::save_layout(*layout, (dir / "layout.json").string());
  std::printf("wrote %zu clips to %s\n", split.sequences.size(),
              (dir / "data.jsonl").string().c_str());
  return 0;
}

int run_params(const std::string& config_path) {
  unik::TrainConfig tc = unik::parse_train_config(config_path);
  std::size_t joints = tc.joints;
  if (!tc.layout.empty()) joints = unik::load_layout(tc.layout).joints();
  if (joints == 0) throw unik::config_error("params: set joints or layout in the config");
  if (tc.c_in == 0) throw unik::config_error("params: set c_in in the config");
  if (tc.num_classes == 0) throw unik::config_error("params: set num_classes in the config");
  unik::NetworkConfig nc = unik::make_net_config(tc, joints, tc.c_in, tc.num_classes);
  unik::ParamCounts counts = unik::count_params(nc);
  for (const auto& [name, n] : counts.modules) std::printf("%-12s %10zu\n", name.c_str(), n);
  std::printf("%-12s %10zu\n", "backbone", counts.backbone);
  std::printf("%-12s %10zu\n", "classifier", counts.classifier);
  std::printf("%-12s %10zu\n", "total", counts.total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UNIK skeleton-based action recognition"};
  app.require_subcommand(1);

  std::string config_path;
  long long seed_override = -1;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "key = value config file")->required();
  train_cmd->add_option("--seed", seed_override, "override the config seed");

  std::string ckpt, data, layout_path, scores_out, stream = "joint", arch_config;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", data, "JSONL dataset")->required();
  eval_cmd->add_option("--layout", layout_path, "joint layout JSON")->required();
  eval_cmd->add_option("--scores-out", scores_out, "write per-clip softmax scores CSV");
  eval_cmd->add_option("--stream", stream, "joint or bone (default joint)");
  eval_cmd->add_option("--config", arch_config, "config file with architecture overrides");

  std::string probe_ckpt, probe_data, probe_layout, probe_val, probe_stream = "joint";
  std::string probe_config, head_out = "probe_head.ckpt";
  std::size_t probe_epochs = 100;
  std::uint64_t probe_seed = 0;
  auto* probe_cmd = app.add_subcommand("probe", "linear probe on a frozen backbone");
  probe_cmd->add_option("--ckpt", probe_ckpt, "backbone checkpoint")->required();
  probe_cmd->add_option("--data", probe_data, "JSONL dataset")->required();
  probe_cmd->add_option("--layout", probe_layout, "joint layout JSON")->required();
  probe_cmd->add_option("--epochs", probe_epochs, "head training epochs")->required();
  probe_cmd->add_option("--val", probe_val, "validation JSONL dataset");
  probe_cmd->add_option("--stream", probe_stream, "joint or bone");
  probe_cmd->add_option("--config", probe_config, "config file with architecture overrides");
  probe_cmd->add_option("--head-out", head_out, "trained head checkpoint path");
  probe_cmd->add_option("--seed", probe_seed, "probe seed");

  std::string fuse_joint, fuse_bone, fuse_data, fuse_out;
  auto* fuse_cmd = app.add_subcommand("fuse", "fuse joint and bone softmax scores");
  fuse_cmd->add_option("--joint", fuse_joint, "joint-stream scores CSV")->required();
  fuse_cmd->add_option("--bone", fuse_bone, "bone-stream scores CSV")->required();
  fuse_cmd->add_option("--data", fuse_data, "JSONL dataset with ground-truth labels")->required();
  fuse_cmd->add_option("--out", fuse_out, "write fused scores CSV");

  std::string synth_spec, synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--spec", synth_spec, "key = value synth spec file")->required();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  std::string params_config;
  auto* params_cmd = app.add_subcommand("params", "print parameter counts for a config");
  params_cmd->add_option("--config", params_config, "key = value config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train_cmd->parsed()) return run_train(config_path, seed_override);
    if (eval_cmd->parsed()) return run_eval(ckpt, data, layout_path, scores_out, stream,
                                            arch_config);
    if (probe_cmd->parsed())
      return run_probe(probe_ckpt, probe_data, probe_layout, probe_val, probe_epochs,
                       probe_stream, probe_config, head_out, probe_seed);
    if (fuse_cmd->parsed()) return run_fuse(fuse_joint, fuse_bone, fuse_data, fuse_out);
    if (synth_cmd->parsed()) return run_synth(synth_spec, synth_out);
    if (params_cmd->parsed()) return run_params(params_config);
  } catch (const unik::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const unik::checkpoint_error& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 3;
  } catch (const unik::data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const unik::dim_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
