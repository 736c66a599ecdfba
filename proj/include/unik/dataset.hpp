#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unik/error.hpp"
#include "unik/skeleton.hpp"

namespace unik {

// Dataset files are UTF-8 JSON Lines, one clip object per line:
//   {"id": str, "label": int, "persons": [[[x,y(,z)] x V] x T] x M,
//    "fps": number?, "resolution": [w,h]?}
// A labels.json sidecar in the same directory holds the class-name array.

inline std::string labels_sidecar_path(const std::string& data_path) {
  std::filesystem::path p(data_path);
  return (p.parent_path() / "labels.json").string();
}

inline std::vector<std::string> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("labels: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("labels " + path + ": " + e.what());
  }
  if (!j.is_array()) throw data_error("labels " + path + ": expected an array of strings");
  return j.get<std::vector<std::string>>();
}

inline void save_labels(const std::vector<std::string>& names, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("labels: cannot write " + path);
  out << nlohmann::json(names).dump(2) << "\n";
}

namespace detail {

inline float finite_coord(const nlohmann::json& v, std::size_t line_no) {
  if (!v.is_number())
    throw data_error("line " + std::to_string(line_no) + ": coordinate is not a number");
  double d = v.get<double>();
  if (!std::isfinite(d))
    throw data_error("line " + std::to_string(line_no) + ": non-finite coordinate");
  return static_cast<float>(d);
}

inline SkeletonSequence parse_clip(const nlohmann::json& j, std::size_t line_no,
                                   const std::shared_ptr<const JointLayout>& layout,
                                   std::size_t num_classes) {
  auto fail = [line_no](const std::string& msg) -> data_error {
    return data_error("line " + std::to_string(line_no) + ": " + msg);
  };
  for (const char* field : {"id", "label", "persons"})
    if (!j.contains(field)) throw fail(std::string("missing field '") + field + "'");

  SkeletonSequence seq;
  if (!j["id"].is_string()) throw fail("'id' must be a string");
  seq.id = j["id"].get<std::string>();
  if (!j["label"].is_number_integer()) throw fail("'label' must be an integer");
  seq.label = j["label"].get<int>();
  if (seq.label < 0) throw fail("'label' must be non-negative");
  if (num_classes > 0 && static_cast<std::size_t>(seq.label) >= num_classes)
    throw fail("label " + std::to_string(seq.label) + " >= num_classes " +
               std::to_string(num_classes));

  const auto& persons = j["persons"];
  if (!persons.is_array() || persons.empty()) throw fail("'persons' must be a non-empty array");
  for (const auto& pj : persons) {
    if (!pj.is_array() || pj.empty()) throw fail("person must be a non-empty frame array");
    std::size_t T = pj.size();
    std::size_t V = pj[0].is_array() ? pj[0].size() : 0;
    if (V == 0) throw fail("frame must be a non-empty joint array");
    std::size_t C = pj[0][0].is_array() ? pj[0][0].size() : 0;
    if (C != 2 && C != 3) throw fail("joint must have 2 or 3 coordinates");
    PersonTrack track(T, V, C);
    for (std::size_t t = 0; t < T; ++t) {
      const auto& frame = pj[t];
      if (!frame.is_array() || frame.size() != V) throw fail("ragged joint count across frames");
      for (std::size_t v = 0; v < V; ++v) {
        const auto& joint = frame[v];
        if (!joint.is_array() || joint.size() != C)
          throw fail("ragged coordinate count across joints");
        for (std::size_t c = 0; c < C; ++c) track.at(t, v, c) = finite_coord(joint[c], line_no);
      }
    }
    if (!seq.persons.empty() &&
        (track.frames != seq.frames() || track.joints != seq.joints() ||
         track.dims != seq.dims()))
      throw fail("persons disagree on frames/joints/dims");
    seq.persons.push_back(std::move(track));
  }

  if (layout && seq.joints() != layout->joints())
    throw fail("clip has " + std::to_string(seq.joints()) + " joints, layout '" + layout->name +
               "' expects " + std::to_string(layout->joints()));
  seq.layout = layout;

  if (j.contains("fps")) seq.fps = j["fps"].get<float>();
  if (j.contains("resolution")) {
    const auto& r = j["resolution"];
    if (!r.is_array() || r.size() != 2) throw fail("'resolution' must be [w, h]");
    seq.resolution = {{r[0].get<float>(), r[1].get<float>()}};
  } else if (seq.dims() == 2) {
    seq.resolution = {{640.0f, 480.0f}};
  }
  return seq;
}

}  // namespace detail

// Parses a JSON Lines dataset; malformed lines are reported with their line
// number. Class names come from the labels.json sidecar when present,
// otherwise they are derived from the labels seen.
inline DatasetSplit parse_dataset(const std::string& path,
                                  std::shared_ptr<const JointLayout> layout) {
  std::ifstream in(path);
  if (!in) throw data_error("dataset: cannot open " + path);

  DatasetSplit split;
  std::string sidecar = labels_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) {
    split.class_names = load_labels(sidecar);
    split.num_classes = split.class_names.size();
  }

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw data_error("line " + std::to_string(line_no) + ": " + e.what());
    }
    split.sequences.push_back(detail::parse_clip(j, line_no, layout, split.num_classes));
  }
  if (split.sequences.empty()) throw data_error("dataset " + path + ": no clips");

  if (split.num_classes == 0) {
    int max_label = 0;
    for (const auto& s : split.sequences) max_label = std::max(max_label, s.label);
    split.num_classes = static_cast<std::size_t>(max_label) + 1;
    for (std::size_t c = 0; c < split.num_classes; ++c)
      split.class_names.push_back("class_" + std::to_string(c));
  }
  return split;
}

inline nlohmann::json clip_to_json(const SkeletonSequence& seq) {
  nlohmann::json j;
  j["id"] = seq.id;
  j["label"] = seq.label;
  auto& persons = j["persons"] = nlohmann::json::array();
  for (const PersonTrack& p : seq.persons) {
    nlohmann::json pj = nlohmann::json::array();
    for (std::size_t t = 0; t < p.frames; ++t) {
      nlohmann::json frame = nlohmann::json::array();
      for (std::size_t v = 0; v < p.joints; ++v) {
        nlohmann::json joint = nlohmann::json::array();
        // float -> double is exact, so the printed value round-trips bitwise.
        for (std::size_t c = 0; c < p.dims; ++c) joint.push_back(static_cast<double>(p.at(t, v, c)));
        frame.push_back(std::move(joint));
      }
      pj.push_back(std::move(frame));
    }
    persons.push_back(std::move(pj));
  }
  if (seq.fps) j["fps"] = *seq.fps;
  if (seq.resolution) j["resolution"] = {(*seq.resolution)[0], (*seq.resolution)[1]};
  return j;
}

inline void write_dataset(const DatasetSplit& split, const std::string& path,
                          bool with_sidecar = true) {
  std::ofstream out(path);
  if (!out) throw data_error("dataset: cannot write " + path);
  for (const auto& seq : split.sequences) out << clip_to_json(seq).dump() << "\n";
  if (with_sidecar) save_labels(split.class_names, labels_sidecar_path(path));
}

}  // namespace unik
