#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unik/error.hpp"
#include "unik/layout.hpp"
#include "unik/rng.hpp"

namespace unik {

// Per-person coordinate track, frames x joints x dims, row-major float32.
struct PersonTrack {
  std::size_t frames = 0, joints = 0, dims = 0;
  std::vector<float> data;

  PersonTrack() = default;
  PersonTrack(std::size_t t, std::size_t v, std::size_t c)
      : frames(t), joints(v), dims(c), data(t * v * c, 0.0f) {}

  float& at(std::size_t t, std::size_t v, std::size_t c) {
    return data[(t * joints + v) * dims + c];
  }
  float at(std::size_t t, std::size_t v, std::size_t c) const {
    return data[(t * joints + v) * dims + c];
  }

  bool all_zero() const {
    for (float x : data)
      if (x != 0.0f) return false;
    return true;
  }
};

// One labeled clip. All persons share frames/joints/dims; coordinates are
// finite (missing joints use the all-zero sentinel until imputed).
struct SkeletonSequence {
  std::string id;
  int label = 0;
  std::vector<PersonTrack> persons;
  std::optional<float> fps;
  std::optional<std::array<float, 2>> resolution;  // [w, h] for 2D data
  std::shared_ptr<const JointLayout> layout;

  std::size_t frames() const { return persons.empty() ? 0 : persons[0].frames; }
  std::size_t joints() const { return persons.empty() ? 0 : persons[0].joints; }
  std::size_t dims() const { return persons.empty() ? 0 : persons[0].dims; }
};

struct DatasetSplit {
  std::vector<SkeletonSequence> sequences;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
};

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Subtracts the body-center joint, per person: per frame for 2D data,
// the first frame's center for 3D. Persons that are entirely zero (absent)
// are left untouched. Idempotent.
inline SkeletonSequence center_sequence(const SkeletonSequence& seq) {
  if (!seq.layout) throw data_error("center: sequence '" + seq.id + "' has no layout");
  std::size_t ci = seq.layout->center_index;
  SkeletonSequence out = seq;
  for (PersonTrack& p : out.persons) {
    if (p.all_zero()) continue;
    std::vector<float> ref(p.dims);
    for (std::size_t t = 0; t < p.frames; ++t) {
      if (p.dims == 2 || t == 0)
        for (std::size_t c = 0; c < p.dims; ++c) ref[c] = p.at(t, ci, c);
      for (std::size_t v = 0; v < p.joints; ++v)
        for (std::size_t c = 0; c < p.dims; ++c) p.at(t, v, c) -= ref[c];
    }
  }
  return out;
}

// 2D: maps pixel coordinates into [-1, 1] by the image width (aspect ratio
// preserved), then centers per frame. 3D: centers on the first frame only.
inline SkeletonSequence normalize_center(const SkeletonSequence& seq) {
  SkeletonSequence out = seq;
  if (seq.dims() == 2) {
    if (!seq.resolution)
      throw data_error("normalize: sequence '" + seq.id + "' is 2D but has no resolution");
    float w = (*seq.resolution)[0], h = (*seq.resolution)[1];
    if (w <= 0 || h <= 0)
      throw data_error("normalize: sequence '" + seq.id + "' has invalid resolution");
    for (PersonTrack& p : out.persons) {
      if (p.all_zero()) continue;
      for (std::size_t t = 0; t < p.frames; ++t)
        for (std::size_t v = 0; v < p.joints; ++v) {
          p.at(t, v, 0) = 2.0f * p.at(t, v, 0) / w - 1.0f;
          p.at(t, v, 1) = 2.0f * p.at(t, v, 1) / w - h / w;
        }
    }
  }
  return center_sequence(out);
}

// Extends a clip to T_target frames by replaying it cyclically:
// output frame k = input frame (k mod T).
inline SkeletonSequence pad_replay(const SkeletonSequence& seq, std::size_t t_target) {
  std::size_t T = seq.frames();
  if (T == 0) throw data_error("pad_replay: sequence '" + seq.id + "' is empty");
  if (t_target < T)
    throw data_error("pad_replay: target " + std::to_string(t_target) + " < length " +
                     std::to_string(T) + " (use sample_window)");
  SkeletonSequence out = seq;
  for (std::size_t pi = 0; pi < seq.persons.size(); ++pi) {
    const PersonTrack& src = seq.persons[pi];
    PersonTrack dst(t_target, src.joints, src.dims);
    std::size_t fr = src.joints * src.dims;
    for (std::size_t k = 0; k < t_target; ++k)
      std::copy(src.data.begin() + static_cast<std::ptrdiff_t>((k % T) * fr),
                src.data.begin() + static_cast<std::ptrdiff_t>((k % T + 1) * fr),
                dst.data.begin() + static_cast<std::ptrdiff_t>(k * fr));
    out.persons[pi] = std::move(dst);
  }
  return out;
}

// Uniformly random contiguous window of t_sample frames; shorter clips are
// replay-padded instead. Deterministic under a fixed rng.
inline SkeletonSequence sample_window(const SkeletonSequence& seq, std::size_t t_sample,
                                      Rng& rng) {
  std::size_t T = seq.frames();
  if (T == 0) throw data_error("sample_window: sequence '" + seq.id + "' is empty");
  if (t_sample < 1) throw config_error("sample_window: window must be >= 1");
  if (T < t_sample) return pad_replay(seq, t_sample);
  if (T == t_sample) return seq;
  std::size_t start = rng.index(T - t_sample + 1);
  SkeletonSequence out = seq;
  for (std::size_t pi = 0; pi < seq.persons.size(); ++pi) {
    const PersonTrack& src = seq.persons[pi];
    PersonTrack dst(t_sample, src.joints, src.dims);
    std::size_t fr = src.joints * src.dims;
    std::copy(src.data.begin() + static_cast<std::ptrdiff_t>(start * fr),
              src.data.begin() + static_cast<std::ptrdiff_t>((start + t_sample) * fr),
              dst.data.begin());
    out.persons[pi] = std::move(dst);
  }
  return out;
}

// Bone representation: value at a child joint is child - parent, directed away
// from the body center; the center joint holds the zero vector.
inline SkeletonSequence compute_bones(const SkeletonSequence& seq, const JointLayout& layout) {
  layout.validate();
  if (seq.joints() != layout.joints())
    throw data_error("bones: sequence '" + seq.id + "' has " + std::to_string(seq.joints()) +
                     " joints, layout '" + layout.name + "' expects " +
                     std::to_string(layout.joints()));
  SkeletonSequence out = seq;
  for (std::size_t pi = 0; pi < seq.persons.size(); ++pi) {
    const PersonTrack& src = seq.persons[pi];
    PersonTrack dst(src.frames, src.joints, src.dims);
    for (std::size_t t = 0; t < src.frames; ++t)
      for (const auto& [child, parent] : layout.bone_pairs)
        for (std::size_t c = 0; c < src.dims; ++c)
          dst.at(t, child, c) = src.at(t, child, c) - src.at(t, parent, c);
    out.persons[pi] = std::move(dst);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Joint remapping
// ---------------------------------------------------------------------------

// Each output joint is a convex combination of source joints.
struct JointMapping {
  std::string target_name;
  std::vector<std::vector<std::pair<std::size_t, float>>> outputs;

  std::size_t target_joints() const { return outputs.size(); }

  void validate(std::size_t source_joints) const {
    if (outputs.empty()) throw config_error("mapping: no output joints");
    for (std::size_t o = 0; o < outputs.size(); ++o) {
      if (outputs[o].empty())
        throw config_error("mapping: output joint " + std::to_string(o) + " has no sources");
      float sum = 0.0f;
      for (const auto& [src, w] : outputs[o]) {
        if (src >= source_joints)
          throw config_error("mapping: output joint " + std::to_string(o) +
                             " references source " + std::to_string(src) + " out of range");
        sum += w;
      }
      if (std::abs(sum - 1.0f) > 1e-6f)
        throw config_error("mapping: output joint " + std::to_string(o) +
                           " weights sum to " + std::to_string(sum) + ", expected 1");
    }
  }

  static JointMapping identity(std::size_t joints) {
    JointMapping m;
    m.target_name = "identity";
    for (std::size_t j = 0; j < joints; ++j) m.outputs.push_back({{j, 1.0f}});
    return m;
  }

  // 13 -> 17: keeps the 13 source joints and adds hip, chest, neck, nose as
  // midpoints (chest is the hip/neck midpoint, i.e. a 4-way average).
  static JointMapping lcrnet13_to_posetics17() {
    JointMapping m;
    m.target_name = "posetics17";
    for (std::size_t j = 0; j < 13; ++j) m.outputs.push_back({{j, 1.0f}});
    m.outputs.push_back({{7, 0.5f}, {8, 0.5f}});                            // hip
    m.outputs.push_back({{1, 0.25f}, {2, 0.25f}, {7, 0.25f}, {8, 0.25f}});  // chest
    m.outputs.push_back({{1, 0.5f}, {2, 0.5f}});                            // neck
    m.outputs.push_back({{0, 0.5f}, {1, 0.25f}, {2, 0.25f}});               // nose
    return m;
  }

  // 25 -> 17: pure joint selection from the Kinect convention.
  static JointMapping ntu25_to_posetics17() {
    JointMapping m;
    m.target_name = "posetics17";
    // head, shoulders, elbows, wrists, hips, knees, ankles, hip, chest, neck, nose
    for (std::size_t src : {3u, 4u, 8u, 5u, 9u, 6u, 10u, 12u, 16u, 13u, 17u, 14u, 18u,
                            0u, 20u, 2u, 3u})
      m.outputs.push_back({{src, 1.0f}});
    return m;
  }
};

inline SkeletonSequence remap_joints(const SkeletonSequence& seq, const JointMapping& mapping) {
  mapping.validate(seq.joints());
  SkeletonSequence out = seq;
  for (std::size_t pi = 0; pi < seq.persons.size(); ++pi) {
    const PersonTrack& src = seq.persons[pi];
    PersonTrack dst(src.frames, mapping.target_joints(), src.dims);
    for (std::size_t t = 0; t < src.frames; ++t)
      for (std::size_t o = 0; o < mapping.target_joints(); ++o)
        for (const auto& [sj, w] : mapping.outputs[o]) {
          // Single-source joints copy bit-exactly.
          if (mapping.outputs[o].size() == 1) {
            for (std::size_t c = 0; c < src.dims; ++c) dst.at(t, o, c) = src.at(t, sj, c);
          } else {
            for (std::size_t c = 0; c < src.dims; ++c) dst.at(t, o, c) += w * src.at(t, sj, c);
          }
        }
    out.persons[pi] = std::move(dst);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Missing-joint imputation
// ---------------------------------------------------------------------------

// Joints at the all-zero sentinel are filled by temporal linear interpolation
// between the nearest valid frames; joints never seen fall back to the layout
// center's track. The center joint is imputed first.
inline SkeletonSequence impute_missing(const SkeletonSequence& seq) {
  if (!seq.layout) throw data_error("impute: sequence '" + seq.id + "' has no layout");
  std::size_t ci = seq.layout->center_index;
  SkeletonSequence out = seq;
  for (PersonTrack& p : out.persons) {
    if (p.all_zero()) continue;
    auto missing = [&](std::size_t t, std::size_t v) {
      for (std::size_t c = 0; c < p.dims; ++c)
        if (p.at(t, v, c) != 0.0f) return false;
      return true;
    };
    auto impute_joint = [&](std::size_t v) {
      std::vector<std::size_t> valid;
      for (std::size_t t = 0; t < p.frames; ++t)
        if (!missing(t, v)) valid.push_back(t);
      if (valid.empty()) {
        if (v != ci)
          for (std::size_t t = 0; t < p.frames; ++t)
            for (std::size_t c = 0; c < p.dims; ++c) p.at(t, v, c) = p.at(t, ci, c);
        return;
      }
      if (valid.size() == p.frames) return;
      for (std::size_t t = 0; t < p.frames; ++t) {
        if (!missing(t, v)) continue;
        auto it = std::lower_bound(valid.begin(), valid.end(), t);
        if (it == valid.begin()) {
          for (std::size_t c = 0; c < p.dims; ++c) p.at(t, v, c) = p.at(valid.front(), v, c);
        } else if (it == valid.end()) {
          for (std::size_t c = 0; c < p.dims; ++c) p.at(t, v, c) = p.at(valid.back(), v, c);
        } else {
          std::size_t hi = *it, lo = *(it - 1);
          float a = static_cast<float>(t - lo) / static_cast<float>(hi - lo);
          for (std::size_t c = 0; c < p.dims; ++c)
            p.at(t, v, c) = (1.0f - a) * p.at(lo, v, c) + a * p.at(hi, v, c);
        }
      }
    };
    impute_joint(ci);
    for (std::size_t v = 0; v < p.joints; ++v)
      if (v != ci) impute_joint(v);
  }
  return out;
}

}  // namespace unik
