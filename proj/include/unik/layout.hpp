#pragma once

#include <cstddef>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unik/error.hpp"

namespace unik {

// Joint layout of one skeleton convention: names, the body-center joint and
// the bone tree (child, parent) directed away from the center.
struct JointLayout {
  std::string name;
  std::vector<std::string> joint_names;
  std::size_t center_index = 0;
  std::vector<std::pair<std::size_t, std::size_t>> bone_pairs;

  std::size_t joints() const { return joint_names.size(); }

  // bone_pairs must form a tree rooted at center_index: every joint except the
  // center appears exactly once as a child and every chain reaches the center.
  void validate() const {
    std::size_t V = joints();
    if (V == 0) throw config_error("layout '" + name + "': no joints");
    if (center_index >= V) throw config_error("layout '" + name + "': center index out of range");
    if (bone_pairs.size() != V - 1)
      throw config_error("layout '" + name + "': expected " + std::to_string(V - 1) +
                         " bone pairs, got " + std::to_string(bone_pairs.size()));
    std::vector<std::size_t> parent(V, V);
    for (const auto& [child, par] : bone_pairs) {
      if (child >= V || par >= V)
        throw config_error("layout '" + name + "': bone pair index out of range");
      if (child == center_index)
        throw config_error("layout '" + name + "': center joint cannot be a bone child");
      if (parent[child] != V)
        throw config_error("layout '" + name + "': joint " + std::to_string(child) +
                           " has two parents");
      parent[child] = par;
    }
    for (std::size_t j = 0; j < V; ++j) {
      if (j == center_index) continue;
      std::size_t cur = j, hops = 0;
      while (cur != center_index) {
        if (parent[cur] == V || hops++ > V)
          throw config_error("layout '" + name + "': joint " + std::to_string(j) +
                             " does not reach the center");
        cur = parent[cur];
      }
    }
  }

  static JointLayout lcrnet13() {
    JointLayout l;
    l.name = "lcrnet13";
    l.joint_names = {"head",    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
                     "l_wrist", "r_wrist",    "l_hip",      "r_hip",   "l_knee",
                     "r_knee",  "l_ankle",    "r_ankle"};
    l.center_index = 0;  // 13-joint data has no pelvis joint; rooted at the head
    l.bone_pairs = {{1, 0},  {2, 0}, {3, 1}, {4, 2},  {5, 3},  {6, 4},
                    {7, 1},  {8, 2}, {9, 7}, {10, 8}, {11, 9}, {12, 10}};
    return l;
  }

  // 13 main body joints plus interpolated hip, chest, neck, nose.
  static JointLayout posetics17() {
    JointLayout l;
    l.name = "posetics17";
    l.joint_names = {"head",    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
                     "r_wrist", "l_hip",      "r_hip",      "l_knee",  "r_knee",  "l_ankle",
                     "r_ankle", "hip",        "chest",      "neck",    "nose"};
    l.center_index = 13;  // hip
    l.bone_pairs = {{14, 13}, {15, 14}, {0, 15},  {16, 0},  {1, 15}, {2, 15},
                    {3, 1},   {4, 2},   {5, 3},   {6, 4},   {7, 13}, {8, 13},
                    {9, 7},   {10, 8},  {11, 9},  {12, 10}};
    return l;
  }

  // Kinect v2 25-joint convention, rooted at the spine joint.
  static JointLayout ntu25() {
    JointLayout l;
    l.name = "ntu25";
    l.joint_names = {"base_spine",  "mid_spine",  "neck",        "head",       "l_shoulder",
                     "l_elbow",     "l_wrist",    "l_hand",      "r_shoulder", "r_elbow",
                     "r_wrist",     "r_hand",     "l_hip",       "l_knee",     "l_ankle",
                     "l_foot",      "r_hip",      "r_knee",      "r_ankle",    "r_foot",
                     "spine",       "l_hand_tip", "l_thumb",     "r_hand_tip", "r_thumb"};
    l.center_index = 20;
    l.bone_pairs = {{0, 1},   {1, 20},  {2, 20},  {3, 2},   {4, 20},  {5, 4},
                    {6, 5},   {7, 6},   {8, 20},  {9, 8},   {10, 9},  {11, 10},
                    {12, 0},  {13, 12}, {14, 13}, {15, 14}, {16, 0},  {17, 16},
                    {18, 17}, {19, 18}, {21, 7},  {22, 7},  {23, 11}, {24, 11}};
    return l;
  }

  // Generic chain layout for arbitrary joint counts.
  static JointLayout chain(std::size_t V) {
    JointLayout l;
    l.name = "chain" + std::to_string(V);
    l.center_index = V / 2;
    for (std::size_t j = 0; j < V; ++j) l.joint_names.push_back("j" + std::to_string(j));
    for (std::size_t j = 0; j < V; ++j) {
      if (j == l.center_index) continue;
      l.bone_pairs.emplace_back(j, j < l.center_index ? j + 1 : j - 1);
    }
    return l;
  }

  // Built-in layout for a joint count, used by the synthesizer.
  static JointLayout for_joints(std::size_t V) {
    if (V == 13) return lcrnet13();
    if (V == 17) return posetics17();
    if (V == 25) return ntu25();
    return chain(V);
  }
};

inline void save_layout(const JointLayout& layout, const std::string& path) {
  nlohmann::json j;
  j["name"] = layout.name;
  j["joint_names"] = layout.joint_names;
  j["center_index"] = layout.center_index;
  auto& pairs = j["bone_pairs"] = nlohmann::json::array();
  for (const auto& [c, p] : layout.bone_pairs) pairs.push_back({c, p});
  std::ofstream out(path);
  if (!out) throw data_error("layout: cannot write " + path);
  out << j.dump(2) << "\n";
}

inline JointLayout load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("layout: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("layout " + path + ": " + e.what());
  }
  JointLayout l;
  try {
    l.name = j.at("name").get<std::string>();
    l.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    l.center_index = j.at("center_index").get<std::size_t>();
    for (const auto& p : j.at("bone_pairs"))
      l.bone_pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw data_error("layout " + path + ": " + e.what());
  }
  l.validate();
  return l;
}

}  // namespace unik
