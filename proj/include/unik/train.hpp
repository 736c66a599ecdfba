#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unik/checkpoint.hpp"
#include "unik/dataset.hpp"
#include "unik/metrics.hpp"
#include "unik/net.hpp"
#include "unik/optim.hpp"
#include "unik/skeleton.hpp"

namespace unik {

// ---------------------------------------------------------------------------
// Training configuration (flat key = value files)
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::string train_data;
  std::string val_data;
  std::string layout;
  std::string stream = "joint";  // joint | bone
  std::size_t epochs = 50;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::size_t> decay_epochs;
  double decay_factor = 0.1;
  std::size_t batch_size = 8;
  std::size_t T_sample = 64;
  std::uint64_t seed = 0;
  std::string mode = "scratch";  // scratch | finetune | probe
  std::string init_checkpoint;

  // Architecture overrides; zero/empty means "derive from data or default".
  std::size_t joints = 0;
  std::size_t c_in = 0;
  std::size_t num_classes = 0;
  std::size_t persons = 1;
  std::size_t heads = 3;
  std::size_t tau = 1;
  std::size_t kernel_t = 9;
  std::vector<std::size_t> channels;
  std::vector<std::size_t> dilations;

  std::string out_dir = ".";
  std::size_t max_eval_frames = 1200;

  void validate() const {
    if (mode != "scratch" && mode != "finetune" && mode != "probe")
      throw config_error("config: mode must be scratch, finetune or probe, got '" + mode + "'");
    if (stream != "joint" && stream != "bone")
      throw config_error("config: stream must be joint or bone, got '" + stream + "'");
    if ((mode == "probe" || mode == "finetune") && init_checkpoint.empty())
      throw config_error("config: mode '" + mode + "' requires init_checkpoint");
    if (lr0 <= 0) throw config_error("config: lr0 must be positive");
    if (momentum < 0 || momentum >= 1) throw config_error("config: momentum must be in [0,1)");
    if (weight_decay < 0) throw config_error("config: weight_decay must be non-negative");
    if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
    if (T_sample < 1) throw config_error("config: T_sample must be >= 1");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
        throw config_error("config: decay_epochs must be strictly increasing");
      if (decay_epochs[i] >= epochs && epochs > 0)
        throw config_error("config: decay epoch " + std::to_string(decay_epochs[i]) +
                           " is not below epochs " + std::to_string(epochs));
    }
  }
};

namespace train_detail {

inline std::vector<std::size_t> parse_size_list(const std::string& value,
                                                const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(item)));
    } catch (const std::exception&) {
      throw config_error("config: bad list entry '" + item + "' for key '" + key + "'");
    }
  }
  return out;
}

}  // namespace train_detail

inline TrainConfig parse_train_config_text(const std::string& text) {
  TrainConfig cfg;
  std::stringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "train_data") cfg.train_data = value;
      else if (key == "val_data") cfg.val_data = value;
      else if (key == "layout") cfg.layout = value;
      else if (key == "stream") cfg.stream = value;
      else if (key == "epochs") cfg.epochs = std::stoull(value);
      else if (key == "lr0") cfg.lr0 = std::stod(value);
      else if (key == "momentum") cfg.momentum = std::stod(value);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
      else if (key == "decay_epochs") cfg.decay_epochs = train_detail::parse_size_list(value, key);
      else if (key == "decay_factor") cfg.decay_factor = std::stod(value);
      else if (key == "batch_size") cfg.batch_size = std::stoull(value);
      else if (key == "T_sample") cfg.T_sample = std::stoull(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "mode") cfg.mode = value;
      else if (key == "init_checkpoint") cfg.init_checkpoint = value;
      else if (key == "joints") cfg.joints = std::stoull(value);
      else if (key == "c_in") cfg.c_in = std::stoull(value);
      else if (key == "num_classes") cfg.num_classes = std::stoull(value);
      else if (key == "persons") cfg.persons = std::stoull(value);
      else if (key == "heads") cfg.heads = std::stoull(value);
      else if (key == "tau") cfg.tau = std::stoull(value);
      else if (key == "kernel_t") cfg.kernel_t = std::stoull(value);
      else if (key == "channels") cfg.channels = train_detail::parse_size_list(value, key);
      else if (key == "dilations") cfg.dilations = train_detail::parse_size_list(value, key);
      else if (key == "out_dir") cfg.out_dir = value;
      else if (key == "max_eval_frames") cfg.max_eval_frames = std::stoull(value);
      else throw config_error("config line " + std::to_string(line_no) + ": unknown key '" +
                              key + "'");
    } catch (const config_error&) {
      throw;
    } catch (const std::exception&) {
      throw config_error("config line " + std::to_string(line_no) + ": bad value for '" + key +
                         "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config_text(ss.str());
}

// Architecture for a (possibly overridden) training config plus data facts.
inline NetworkConfig make_net_config(const TrainConfig& tc, std::size_t joints,
                                     std::size_t c_in, std::size_t num_classes) {
  NetworkConfig nc;
  if (!tc.channels.empty()) {
    nc.blocks = tc.channels.size();
    nc.channels = tc.channels;
    nc.dilations = tc.dilations.empty() ? std::vector<std::size_t>(nc.blocks, 1) : tc.dilations;
  } else if (!tc.dilations.empty()) {
    nc.dilations = tc.dilations;
  }
  nc.kernel_t = tc.kernel_t;
  nc.heads = tc.heads;
  nc.tau = tc.tau;
  nc.joints = tc.joints ? tc.joints : joints;
  nc.in_channels = tc.c_in ? tc.c_in : c_in;
  nc.num_classes = tc.num_classes ? tc.num_classes : num_classes;
  nc.persons = tc.persons;
  if (joints && nc.joints != joints)
    throw config_error("config: joints " + std::to_string(nc.joints) +
                       " does not match data joint count " + std::to_string(joints));
  if (c_in && nc.in_channels != c_in)
    throw config_error("config: c_in " + std::to_string(nc.in_channels) +
                       " does not match data coordinate count " + std::to_string(c_in));
  nc.validate();
  return nc;
}

// ---------------------------------------------------------------------------
// Data preparation and batching
// ---------------------------------------------------------------------------

// Per-clip pipeline: impute missing joints, normalize + center, and derive
// the bone stream when requested.
inline DatasetSplit prepare_split(DatasetSplit split, const JointLayout& layout,
                                  const std::string& stream) {
  for (SkeletonSequence& seq : split.sequences) {
    seq = impute_missing(seq);
    seq = normalize_center(seq);
    if (stream == "bone") seq = compute_bones(seq, layout);
  }
  return split;
}

inline std::map<std::string, int> labels_by_id(const DatasetSplit& split) {
  std::map<std::string, int> out;
  for (const auto& seq : split.sequences) out[seq.id] = seq.label;
  return out;
}

// Assembles [B, M, C, T, V] from clips that already share frame count T.
template <typename T>
Tensor<T> make_batch(const std::vector<const SkeletonSequence*>& clips, std::size_t persons) {
  if (clips.empty()) throw data_error("batch: no clips");
  std::size_t B = clips.size();
  std::size_t Tn = clips[0]->frames(), V = clips[0]->joints(), C = clips[0]->dims();
  Tensor<T> out({B, persons, C, Tn, V});
  for (std::size_t b = 0; b < B; ++b) {
    const SkeletonSequence& seq = *clips[b];
    if (seq.frames() != Tn || seq.joints() != V || seq.dims() != C)
      throw dim_error("batch: clip '" + seq.id + "' shape mismatch");
    for (std::size_t m = 0; m < persons && m < seq.persons.size(); ++m) {
      const PersonTrack& p = seq.persons[m];
      for (std::size_t t = 0; t < Tn; ++t)
        for (std::size_t v = 0; v < V; ++v)
          for (std::size_t c = 0; c < C; ++c)
            out.at(b, m, c, t, v) = static_cast<T>(p.at(t, v, c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Full-length deterministic evaluation, one clip per forward pass. Clips are
// truncated at max_frames and replay-padded below 4 frames.
template <typename T>
Metrics evaluate(Network<T>& net, const DatasetSplit& split, std::size_t max_frames = 1200,
                 ScoreTable* scores_out = nullptr) {
  if (split.sequences.empty()) throw data_error("evaluate: empty split");
  std::vector<std::vector<double>> scores;
  std::vector<int> labels;
  ScoreTable table;
  for (const SkeletonSequence& seq : split.sequences) {
    SkeletonSequence clip = seq;
    if (clip.frames() > max_frames) {
      for (PersonTrack& p : clip.persons) {
        p.data.resize(max_frames * p.joints * p.dims);
        p.frames = max_frames;
      }
    }
    if (clip.frames() < 4) clip = pad_replay(clip, 4);
    auto batch = make_batch<T>({&clip}, net.config().persons);
    Tensor<T> logits = net.forward(batch, false);
    Tensor<T> probs = softmax_rows(logits);
    std::vector<double> row(probs.size());
    for (std::size_t c = 0; c < probs.size(); ++c) row[c] = static_cast<double>(probs.data()[c]);
    scores.push_back(row);
    labels.push_back(seq.label);
    table.ids.push_back(seq.id);
    table.rows.push_back(std::move(row));
  }
  if (scores_out) *scores_out = std::move(table);
  return compute_metrics(scores, labels, split.num_classes);
}

// ---------------------------------------------------------------------------
// Linear probe (frozen backbone)
// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::vector<T>> extract_features(Network<T>& net, const DatasetSplit& split,
                                             std::size_t max_frames = 1200) {
  std::vector<std::vector<T>> feats;
  for (const SkeletonSequence& seq : split.sequences) {
    SkeletonSequence clip = seq;
    if (clip.frames() > max_frames) {
      for (PersonTrack& p : clip.persons) {
        p.data.resize(max_frames * p.joints * p.dims);
        p.frames = max_frames;
      }
    }
    if (clip.frames() < 4) clip = pad_replay(clip, 4);
    auto batch = make_batch<T>({&clip}, net.config().persons);
    Tensor<T> f = net.features(batch, false);
    feats.emplace_back(f.values());
  }
  return feats;
}

template <typename T>
struct ProbeResult {
  Metrics train_metrics;
  Metrics val_metrics;  // valid when a validation split was given
  bool has_val = false;
  std::size_t trainable_params = 0;
  std::vector<double> losses;
  Tensor<T> head_w;
  Tensor<T> head_b;
};

// Trains only a linear classifier on pooled features extracted once from the
// frozen, eval-mode backbone.
template <typename T>
ProbeResult<T> linear_probe_features(const std::vector<std::vector<T>>& train_feats,
                                     const std::vector<int>& train_labels,
                                     const std::vector<std::vector<T>>& val_feats,
                                     const std::vector<int>& val_labels, std::size_t num_classes,
                                     std::size_t epochs, std::uint64_t seed, double lr = 0.5,
                                     std::size_t batch_size = 32) {
  if (train_feats.empty()) throw data_error("probe: no training features");
  std::size_t F = train_feats[0].size();
  Rng rng(seed);
  Tensor<T> w = uniform_fan_in<T>({num_classes, F}, F, 2.2360679774997896, rng);
  Tensor<T> b = uniform_fan_in<T>({num_classes}, F, 2.2360679774997896, rng);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  Sgd<T> opt({w, b}, static_cast<T>(lr), static_cast<T>(0.9));

  ProbeResult<T> result;
  result.trainable_params = num_classes * F + num_classes;

  std::vector<std::size_t> order(train_feats.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(seed, 0xBEEF + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::size_t end = std::min(order.size(), start + batch_size);
      Tensor<T> x({end - start, F});
      std::vector<int> y;
      for (std::size_t i = start; i < end; ++i) {
        std::copy(train_feats[order[i]].begin(), train_feats[order[i]].end(),
                  x.data() + (i - start) * F);
        y.push_back(train_labels[order[i]]);
      }
      Tensor<T> loss = cross_entropy(linear(x, w, b), y);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    result.losses.push_back(loss_sum / static_cast<double>(batches));
  }

  auto score = [&](const std::vector<std::vector<T>>& feats, const std::vector<int>& labels) {
    std::vector<std::vector<double>> rows;
    for (const auto& f : feats) {
      Tensor<T> x({1, F});
      std::copy(f.begin(), f.end(), x.data());
      Tensor<T> p = softmax_rows(linear(x, w, b));
      std::vector<double> row(p.size());
      for (std::size_t c = 0; c < p.size(); ++c) row[c] = static_cast<double>(p.data()[c]);
      rows.push_back(std::move(row));
    }
    return compute_metrics(rows, labels, num_classes);
  };
  result.train_metrics = score(train_feats, train_labels);
  if (!val_feats.empty()) {
    result.val_metrics = score(val_feats, val_labels);
    result.has_val = true;
  }
  result.head_w = w.detached();
  result.head_b = b.detached();
  return result;
}

// Probes the network's own feature extractor and installs the trained head as
// its classifier; the backbone is never touched.
template <typename T>
ProbeResult<T> linear_probe(Network<T>& net, const DatasetSplit& train_split,
                            const DatasetSplit* val_split, std::size_t epochs,
                            std::uint64_t seed, std::size_t max_frames = 1200,
                            double lr = 0.5, std::size_t batch_size = 32) {
  auto train_feats = extract_features(net, train_split, max_frames);
  std::vector<int> train_labels;
  for (const auto& s : train_split.sequences) train_labels.push_back(s.label);
  std::vector<std::vector<T>> val_feats;
  std::vector<int> val_labels;
  if (val_split) {
    val_feats = extract_features(net, *val_split, max_frames);
    for (const auto& s : val_split->sequences) val_labels.push_back(s.label);
  }
  auto result = linear_probe_features(train_feats, train_labels, val_feats, val_labels,
                                      train_split.num_classes, epochs, seed, lr, batch_size);
  auto head = net.classifier_parameters();
  if (head[0].shape() == result.head_w.shape() && head[1].shape() == result.head_b.shape()) {
    head[0].values() = result.head_w.values();
    head[1].values() = result.head_b.values();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_top1 = 0;
  double val_top1 = std::nan("");
  double val_top5 = std::nan("");
  double val_mpc = std::nan("");
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_metric = -1;
  Metrics final_val;
  bool has_val = false;
};

inline void write_curve_csv(const std::vector<EpochRecord>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("curve: cannot write " + path);
  out << "epoch,lr,train_loss,train_top1,val_top1,val_top5,val_mpc\n";
  out.precision(10);
  for (const EpochRecord& r : curve)
    out << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.train_top1 << ","
        << r.val_top1 << "," << r.val_top5 << "," << r.val_mpc << "\n";
}

// Stops early when on_epoch returns false.
using EpochCallback = std::function<bool(const EpochRecord&)>;

template <typename T = float>
TrainResult train(const TrainConfig& tc, const EpochCallback& on_epoch = nullptr) {
  tc.validate();
  auto layout = std::make_shared<const JointLayout>(load_layout(tc.layout));
  layout->validate();
  DatasetSplit train_split =
      prepare_split(parse_dataset(tc.train_data, layout), *layout, tc.stream);
  std::optional<DatasetSplit> val_split;
  if (!tc.val_data.empty())
    val_split = prepare_split(parse_dataset(tc.val_data, layout), *layout, tc.stream);

  NetworkConfig nc = make_net_config(tc, layout->joints(), train_split.sequences[0].dims(),
                                     train_split.num_classes);
  Rng init_rng(tc.seed);
  Network<T> net(nc, init_rng);

  std::filesystem::create_directories(tc.out_dir);
  std::string best_path = (std::filesystem::path(tc.out_dir) / "best.ckpt").string();
  std::string last_path = (std::filesystem::path(tc.out_dir) / "last.ckpt").string();
  std::string curve_path = (std::filesystem::path(tc.out_dir) / "curve.csv").string();

  TrainResult result;
  result.best_checkpoint = best_path;
  result.last_checkpoint = last_path;
  result.has_val = val_split.has_value();

  if (tc.mode == "probe") {
    // Frozen backbone: restore it, extract features once, train the head.
    // linear_probe installs the trained head as the network classifier, so the
    // saved checkpoints differ from the restore only in classifier tensors.
    load_pretrained_partial(net, tc.init_checkpoint, RestorePolicy::backbone_only);
    auto probe = linear_probe(net, train_split, val_split ? &*val_split : nullptr, tc.epochs,
                              tc.seed, tc.max_eval_frames, tc.lr0, tc.batch_size);
    for (std::size_t e = 0; e < probe.losses.size(); ++e) {
      EpochRecord rec;
      rec.epoch = e;
      rec.lr = tc.lr0;
      rec.train_loss = probe.losses[e];
      rec.train_top1 = probe.train_metrics.top1;
      if (probe.has_val) {
        rec.val_top1 = probe.val_metrics.top1;
        rec.val_top5 = probe.val_metrics.top5;
        rec.val_mpc = probe.val_metrics.mean_per_class;
      }
      result.curve.push_back(rec);
    }
    write_curve_csv(result.curve, curve_path);
    result.final_val = probe.has_val ? probe.val_metrics : probe.train_metrics;
    result.best_metric = probe.has_val ? probe.val_metrics.top1 : probe.train_metrics.top1;
    save_checkpoint(net, last_path, static_cast<std::uint32_t>(tc.epochs), tc.seed);
    save_checkpoint(net, best_path, static_cast<std::uint32_t>(tc.epochs), tc.seed);
    return result;
  }

  if (tc.mode == "finetune")
    load_pretrained_partial(net, tc.init_checkpoint, RestorePolicy::backbone_only);

  std::vector<std::pair<std::size_t, T>> schedule;
  for (std::size_t d : tc.decay_epochs) schedule.emplace_back(d, static_cast<T>(tc.decay_factor));
  Sgd<T> opt(net.parameters(), static_cast<T>(tc.lr0), static_cast<T>(tc.momentum),
             static_cast<T>(tc.weight_decay), schedule);

  std::vector<std::size_t> order(train_split.sequences.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    opt.set_epoch(epoch);
    Rng shuffle_rng(Rng::mix(tc.seed, 0x5affe + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double loss_sum = 0;
    std::size_t batches = 0, hits = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<SkeletonSequence> windows;
      std::vector<const SkeletonSequence*> refs;
      std::vector<int> labels;
      windows.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const SkeletonSequence& seq = train_split.sequences[order[i]];
        Rng wrng(Rng::mix(tc.seed, (epoch + 1) * 1000003 + order[i]));
        windows.push_back(sample_window(seq, tc.T_sample, wrng));
        labels.push_back(seq.label);
      }
      for (const auto& w : windows) refs.push_back(&w);
      Tensor<T> batch = make_batch<T>(refs, nc.persons);
      Tensor<T> logits = net.forward(batch, true);
      Tensor<T> loss = cross_entropy(logits, labels);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += static_cast<double>(loss.item());
      ++batches;
      for (std::size_t b = 0; b < labels.size(); ++b) {
        const T* row = logits.data() + b * nc.num_classes;
        std::size_t arg = 0;
        for (std::size_t c = 1; c < nc.num_classes; ++c)
          if (row[c] > row[arg]) arg = c;
        if (static_cast<int>(arg) == labels[b]) ++hits;
        ++seen;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = static_cast<double>(opt.lr());
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.train_top1 = static_cast<double>(hits) / static_cast<double>(seen);
    double improvement_metric = rec.train_top1;
    if (val_split) {
      Metrics vm = evaluate(net, *val_split, tc.max_eval_frames);
      rec.val_top1 = vm.top1;
      rec.val_top5 = vm.top5;
      rec.val_mpc = vm.mean_per_class;
      improvement_metric = vm.top1;
      result.final_val = vm;
    }
    result.curve.push_back(rec);
    if (improvement_metric > result.best_metric) {
      result.best_metric = improvement_metric;
      save_checkpoint(net, best_path, static_cast<std::uint32_t>(epoch), tc.seed);
    }
    if (on_epoch && !on_epoch(rec)) break;
  }

  save_checkpoint(net, last_path,
                  static_cast<std::uint32_t>(result.curve.size()), tc.seed);
  if (result.curve.empty()) save_checkpoint(net, best_path, 0, tc.seed);
  write_curve_csv(result.curve, curve_path);
  if (!val_split && !train_split.sequences.empty() && !result.curve.empty()) {
    // Final metrics on the training split for valless runs.
    result.final_val = evaluate(net, train_split, tc.max_eval_frames);
  }
  return result;
}

}  // namespace unik
