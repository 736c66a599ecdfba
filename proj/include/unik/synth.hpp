#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "unik/error.hpp"
#include "unik/rng.hpp"
#include "unik/skeleton.hpp"

namespace unik {

// Synthetic motion dataset: every class shares the same base-pose distribution
// and a random starting phase, so the first frame carries no label signal;
// classes differ only in how the joints move over time.
struct SynthSpec {
  std::size_t classes = 4;
  std::size_t samples_per_class = 16;
  std::size_t joints = 17;
  std::size_t frames = 64;
  std::size_t dims = 2;
  double noise = 0.0;  // coordinate noise sigma, pixels
  std::uint64_t seed = 0;
  std::vector<std::size_t> families;  // per-class motion family; default 0..classes-1
  std::string name = "synth";
};

// Parses a flat key = value synth spec file.
inline SynthSpec parse_synth_spec(const std::string& path);

namespace synth_detail {

constexpr std::size_t kFamilyCount = 8;

inline const char* family_name(std::size_t f) {
  static const char* names[kFamilyCount] = {"circle", "sway",    "bob",     "zigzag",
                                            "pulse",  "figure8", "counter", "diagonal"};
  return names[f % kFamilyCount];
}

inline double triangle_wave(double phase) {
  double p = phase / (2.0 * M_PI);
  p -= std::floor(p);
  return p < 0.5 ? 4.0 * p - 1.0 : 3.0 - 4.0 * p;
}

// Planar offset of one joint at one frame for a motion family. `radial` is the
// joint's unit direction from the body center in the base pose.
inline void family_offset(std::size_t family, double phase, double rx, double ry, double& dx,
                          double& dy) {
  switch (family % kFamilyCount) {
    case 0:  // circle
      dx = std::cos(phase);
      dy = std::sin(phase);
      break;
    case 1:  // horizontal sway
      dx = std::sin(phase);
      dy = 0.0;
      break;
    case 2:  // vertical bob
      dx = 0.0;
      dy = std::sin(phase);
      break;
    case 3:  // zigzag
      dx = triangle_wave(phase);
      dy = 0.0;
      break;
    case 4:  // radial pulse
      dx = std::sin(phase) * rx;
      dy = std::sin(phase) * ry;
      break;
    case 5:  // figure eight
      dx = std::sin(phase);
      dy = 0.7 * std::sin(2.0 * phase);
      break;
    case 6:  // fast counter-rotating circle
      dx = std::cos(2.0 * phase);
      dy = -std::sin(2.0 * phase);
      break;
    default:  // diagonal sway
      dx = std::sin(phase);
      dy = std::sin(phase);
      break;
  }
}

}  // namespace synth_detail

inline DatasetSplit synth_generate(const SynthSpec& spec,
                                   std::shared_ptr<const JointLayout> layout = nullptr) {
  if (spec.classes < 1) throw config_error("synth: need at least one class");
  if (spec.samples_per_class < 1) throw config_error("synth: need at least one sample per class");
  if (spec.joints < 1) throw config_error("synth: need at least one joint");
  if (spec.frames < 1) throw config_error("synth: need at least one frame");
  if (spec.dims != 2 && spec.dims != 3) throw config_error("synth: dims must be 2 or 3");
  if (!spec.families.empty() && spec.families.size() != spec.classes)
    throw config_error("synth: families list must have one entry per class");

  if (!layout) layout = std::make_shared<JointLayout>(JointLayout::for_joints(spec.joints));
  if (layout->joints() != spec.joints) throw config_error("synth: layout joint count mismatch");

  const double cx = 320.0, cy = 240.0, body_radius = 80.0;
  std::size_t V = spec.joints, ci = layout->center_index;

  // Deterministic base pose: joints on a circle around the canvas center.
  std::vector<double> base_x(V), base_y(V), rad_x(V), rad_y(V);
  for (std::size_t v = 0; v < V; ++v) {
    if (v == ci) {
      base_x[v] = cx;
      base_y[v] = cy;
      rad_x[v] = rad_y[v] = 0.0;
      continue;
    }
    double ang = 2.0 * M_PI * static_cast<double>(v) / static_cast<double>(V);
    rad_x[v] = std::cos(ang);
    rad_y[v] = std::sin(ang);
    base_x[v] = cx + body_radius * rad_x[v];
    base_y[v] = cy + body_radius * rad_y[v];
  }

  DatasetSplit split;
  split.num_classes = spec.classes;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    std::size_t fam = spec.families.empty() ? k : spec.families[k];
    split.class_names.push_back(std::string(synth_detail::family_name(fam)) + "_" +
                                std::to_string(k));
  }

  const double period = 16.0;  // frames per motion cycle
  for (std::size_t k = 0; k < spec.classes; ++k) {
    std::size_t fam = spec.families.empty() ? k : spec.families[k];
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      Rng rng(Rng::mix(spec.seed, k * 100003 + s));
      double phase0 = rng.uniform(0.0, 2.0 * M_PI);
      double omega = 2.0 * M_PI / period * (1.0 + 0.05 * (rng.uniform() - 0.5));
      double pose_jitter = 6.0;
      std::vector<double> jx(V), jy(V);
      for (std::size_t v = 0; v < V; ++v) {
        jx[v] = pose_jitter * rng.normal();
        jy[v] = pose_jitter * rng.normal();
      }

      SkeletonSequence seq;
      seq.id = spec.name + "_c" + std::to_string(k) + "_s" + std::to_string(s);
      seq.label = static_cast<int>(k);
      seq.fps = 30.0f;
      seq.resolution = {{640.0f, 480.0f}};
      seq.layout = layout;
      PersonTrack track(spec.frames, V, spec.dims);
      for (std::size_t t = 0; t < spec.frames; ++t)
        for (std::size_t v = 0; v < V; ++v) {
          // Limb joints farther from the center move more than the trunk.
          double amp = 18.0 * (0.4 + 0.6 * (v == ci ? 0.2 : 1.0));
          double jphase = 2.0 * M_PI * static_cast<double>(v) / static_cast<double>(V);
          double dx = 0.0, dy = 0.0;
          synth_detail::family_offset(fam, phase0 + omega * static_cast<double>(t) + jphase,
                                      rad_x[v], rad_y[v], dx, dy);
          double x = base_x[v] + jx[v] + amp * dx + spec.noise * rng.normal();
          double y = base_y[v] + jy[v] + amp * dy + spec.noise * rng.normal();
          track.at(t, v, 0) = static_cast<float>(x);
          track.at(t, v, 1) = static_cast<float>(y);
          if (spec.dims == 3)
            track.at(t, v, 2) = static_cast<float>(
                0.3 * amp * std::sin(phase0 + omega * static_cast<double>(t) + jphase + 1.0) +
                spec.noise * rng.normal());
        }
      seq.persons.push_back(std::move(track));
      split.sequences.push_back(std::move(seq));
    }
  }
  return split;
}

inline SynthSpec parse_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("synth spec: cannot open " + path);
  SynthSpec spec;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw config_error("synth spec line " + std::to_string(line_no) +
                           ": expected key = value");
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
      if (key == "classes") spec.classes = std::stoull(value);
      else if (key == "samples_per_class") spec.samples_per_class = std::stoull(value);
      else if (key == "joints") spec.joints = std::stoull(value);
      else if (key == "frames") spec.frames = std::stoull(value);
      else if (key == "dims") spec.dims = std::stoull(value);
      else if (key == "noise") spec.noise = std::stod(value);
      else if (key == "seed") spec.seed = std::stoull(value);
      else if (key == "name") spec.name = value;
      else if (key == "families") {
        spec.families.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ','))
          if (!trim(item).empty()) spec.families.push_back(std::stoull(trim(item)));
      } else {
        throw config_error("synth spec line " + std::to_string(line_no) + ": unknown key '" +
                           key + "'");
      }
    } catch (const config_error&) {
      throw;
    } catch (const std::exception&) {
      throw config_error("synth spec line " + std::to_string(line_no) + ": bad value for '" +
                         key + "'");
    }
  }
  return spec;
}

}  // namespace unik
