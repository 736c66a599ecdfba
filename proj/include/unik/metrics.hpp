#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unik/error.hpp"

namespace unik {

// Classification metrics. mean_per_class is the unweighted mean of per-class
// accuracies over classes that have at least one sample.
struct Metrics {
  double top1 = 0;
  double top5 = 0;
  double mean_per_class = 0;
  std::vector<double> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
  std::size_t samples = 0;
};

// Rank of the true class under (score desc, index asc) ordering.
inline std::size_t label_rank(const std::vector<double>& scores, int label) {
  std::size_t rank = 0;
  double ls = scores[static_cast<std::size_t>(label)];
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (static_cast<int>(c) == label) continue;
    if (scores[c] > ls || (scores[c] == ls && c < static_cast<std::size_t>(label))) ++rank;
  }
  return rank;
}

inline Metrics compute_metrics(const std::vector<std::vector<double>>& scores,
                               const std::vector<int>& labels, std::size_t num_classes) {
  if (scores.empty()) throw data_error("metrics: empty score set");
  if (scores.size() != labels.size()) throw data_error("metrics: scores/labels size mismatch");
  Metrics m;
  m.samples = scores.size();
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::vector<std::size_t> class_total(num_classes, 0), class_hit(num_classes, 0);
  std::size_t k = std::min<std::size_t>(5, num_classes);
  std::size_t top1 = 0, topk = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
      throw data_error("metrics: label out of range");
    if (scores[i].size() != num_classes)
      throw data_error("metrics: score row has wrong class count");
    std::size_t pred = static_cast<std::size_t>(
        std::max_element(scores[i].begin(), scores[i].end()) - scores[i].begin());
    std::size_t rank = label_rank(scores[i], label);
    if (rank == 0) ++top1;
    if (rank < k) ++topk;
    ++class_total[static_cast<std::size_t>(label)];
    if (pred == static_cast<std::size_t>(label)) ++class_hit[static_cast<std::size_t>(label)];
    m.confusion[static_cast<std::size_t>(label)][pred]++;
  }
  m.top1 = static_cast<double>(top1) / static_cast<double>(m.samples);
  m.top5 = static_cast<double>(topk) / static_cast<double>(m.samples);
  m.per_class.assign(num_classes, 0.0);
  double mpc = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (class_total[c] == 0) continue;
    m.per_class[c] = static_cast<double>(class_hit[c]) / static_cast<double>(class_total[c]);
    mpc += m.per_class[c];
    ++present;
  }
  m.mean_per_class = present ? mpc / static_cast<double>(present) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Per-clip score tables (CSV: clip_id,p_0,...,p_{C-1})
// ---------------------------------------------------------------------------

struct ScoreTable {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;

  std::size_t classes() const { return rows.empty() ? 0 : rows[0].size(); }
};

inline void write_scores_csv(const ScoreTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("scores: cannot write " + path);
  out << "clip_id";
  for (std::size_t c = 0; c < table.classes(); ++c) out << ",p_" << c;
  out << "\n";
  out.precision(10);
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    out << table.ids[i];
    for (double v : table.rows[i]) out << "," << v;
    out << "\n";
  }
}

inline ScoreTable read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("scores: cannot open " + path);
  ScoreTable table;
  std::string line;
  if (!std::getline(in, line)) throw data_error("scores " + path + ": empty file");
  if (line.rfind("clip_id", 0) != 0)
    throw data_error("scores " + path + ": missing clip_id header");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (!std::getline(ss, cell, ',' ))
      throw data_error("scores " + path + " line " + std::to_string(line_no) + ": bad row");
    table.ids.push_back(cell);
    std::vector<double> row;
    while (std::getline(ss, cell, ','))
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw data_error("scores " + path + " line " + std::to_string(line_no) +
                         ": bad number '" + cell + "'");
      }
    if (!table.rows.empty() && row.size() != table.rows[0].size())
      throw data_error("scores " + path + " line " + std::to_string(line_no) +
                       ": ragged class count");
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw data_error("scores " + path + ": no rows");
  return table;
}

// Fuses two softmax score tables by per-clip addition. Both tables must cover
// identical clip ids and every row must be (approximately) a distribution.
inline ScoreTable fuse_score_tables(const ScoreTable& a, const ScoreTable& b) {
  if (a.classes() != b.classes()) throw data_error("fuse: class counts differ");
  std::map<std::string, std::size_t> bidx;
  for (std::size_t i = 0; i < b.ids.size(); ++i) bidx[b.ids[i]] = i;
  if (a.ids.size() != b.ids.size()) throw data_error("fuse: clip counts differ");
  auto check_row = [](const std::vector<double>& row, const std::string& id) {
    double s = 0;
    for (double v : row) s += v;
    if (std::abs(s - 1.0) > 1e-3)
      throw data_error("fuse: clip '" + id + "' scores sum to " + std::to_string(s) +
                       ", expected 1");
  };
  ScoreTable fused;
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    auto it = bidx.find(a.ids[i]);
    if (it == bidx.end())
      throw data_error("fuse: clip '" + a.ids[i] + "' missing from the second stream");
    check_row(a.rows[i], a.ids[i]);
    check_row(b.rows[it->second], a.ids[i]);
    std::vector<double> row(a.classes());
    for (std::size_t c = 0; c < row.size(); ++c)
      row[c] = a.rows[i][c] + b.rows[it->second][c];
    fused.ids.push_back(a.ids[i]);
    fused.rows.push_back(std::move(row));
  }
  return fused;
}

inline Metrics score_table_metrics(const ScoreTable& table,
                                   const std::map<std::string, int>& labels_by_id,
                                   std::size_t num_classes) {
  std::vector<int> labels;
  for (const std::string& id : table.ids) {
    auto it = labels_by_id.find(id);
    if (it == labels_by_id.end()) throw data_error("metrics: no label for clip '" + id + "'");
    labels.push_back(it->second);
  }
  return compute_metrics(table.rows, labels, num_classes);
}

}  // namespace unik
