#include "posefabric/parts/schema.hpp"

#include <algorithm>
#include <json.hpp>
#include <numeric>
#include <set>

#include "posefabric/core/errors.hpp"

namespace posefabric::parts {

using nlohmann::json;

std::vector<int> KeypointSchema::flip_permutation() const {
  std::vector<int> perm(names.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (auto [l, r] : flip_pairs) std::swap(perm[l], perm[r]);
  return perm;
}

void KeypointSchema::validate() const {
  if (names.empty()) throw ConfigError("schema " + name + " has no keypoints");
  std::set<int> seen;
  for (auto [l, r] : flip_pairs) {
    if (l < 0 || r < 0 || l >= size() || r >= size() || l == r)
      throw ConfigError("schema " + name + ": bad flip pair");
    if (!seen.insert(l).second || !seen.insert(r).second)
      throw ConfigError("schema " + name + ": flip pairs overlap");
  }
}

KeypointSchema mpii16() {
  return {"mpii16",
          {"head_top", "upper_neck", "thorax", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
           "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle", "pelvis"},
          {{3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}}};
}

KeypointSchema coco17() {
  return {"coco17",
          {"nose", "l_eye", "r_eye", "l_ear", "r_ear", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
           "l_wrist", "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle"},
          {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}}};
}

KeypointSchema synthetic6() {
  return {"synthetic6", {"head", "neck", "l_elbow", "r_elbow", "l_hand", "r_hand"}, {{2, 3}, {4, 5}}};
}

KeypointSchema schema_by_name(std::string_view name) {
  if (name == "mpii16") return mpii16();
  if (name == "coco17") return coco17();
  if (name == "synthetic6") return synthetic6();
  throw UsageError("unknown keypoint schema '" + std::string(name) + "'");
}

bool PartGrouping::indicator(int k, int p, int i) const {
  if (p < 0 || p >= size()) return false;
  const auto& kp = groups[p].keypoints;
  return i >= 0 && i < static_cast<int>(kp.size()) && kp[i] == k;
}

void PartGrouping::validate() const {
  if (groups.empty()) throw ConfigError("grouping has no groups");
  std::vector<bool> covered(static_cast<std::size_t>(num_keypoints), false);
  for (const PartGroup& g : groups) {
    if (g.keypoints.empty()) throw ConfigError("group " + g.name + " is empty");
    std::set<int> local;
    for (int k : g.keypoints) {
      if (k < 0 || k >= num_keypoints)
        throw ConfigError("group " + g.name + " references keypoint " + std::to_string(k));
      if (!local.insert(k).second) throw ConfigError("group " + g.name + " repeats keypoint " + std::to_string(k));
      covered[k] = true;
    }
  }
  for (int k = 0; k < num_keypoints; ++k)
    if (!covered[k]) throw ConfigError("keypoint " + std::to_string(k) + " is not covered by any group");
}

namespace {

std::vector<int> range(int lo, int hi) {
  std::vector<int> v(static_cast<std::size_t>(hi - lo + 1));
  std::iota(v.begin(), v.end(), lo);
  return v;
}

std::vector<PartGroup> mpii_groups(std::string_view mode) {
  if (mode == "P1") return {{"all", range(0, 15)}};
  if (mode == "P3") return {{"head", range(0, 2)}, {"upper_limb", range(3, 8)}, {"lower_limb", range(9, 15)}};
  if (mode == "P5")
    return {{"head_shoulder", range(0, 4)},
            {"l_lower_arm", {5, 7}},
            {"r_lower_arm", {6, 8}},
            {"thigh", {9, 10, 15}},
            {"lower_limb", range(11, 14)}};
  if (mode == "P8")
    return {{"head_shoulder", range(0, 4)}, {"l_upper_arm", {3, 5}}, {"l_lower_arm", {5, 7}},
            {"r_upper_arm", {4, 6}},        {"r_lower_arm", {6, 8}}, {"thigh", {9, 10, 11, 12, 15}},
            {"l_lower_leg", {11, 13}},      {"r_lower_leg", {12, 14}}};
  return {};
}

std::vector<PartGroup> coco_groups(std::string_view mode) {
  if (mode == "P1") return {{"all", range(0, 16)}};
  if (mode == "P3") return {{"head", range(0, 4)}, {"upper_limb", range(5, 10)}, {"lower_limb", range(11, 16)}};
  if (mode == "P5")
    return {{"head_shoulder", range(0, 6)},
            {"l_lower_arm", {7, 9}},
            {"r_lower_arm", {8, 10}},
            {"thigh", {11, 12}},
            {"lower_limb", range(13, 16)}};
  if (mode == "P8")
    return {{"head_shoulder", range(0, 6)}, {"l_upper_arm", {5, 7}}, {"l_lower_arm", {7, 9}},
            {"r_upper_arm", {6, 8}},        {"r_lower_arm", {8, 10}}, {"thigh", range(11, 14)},
            {"l_lower_leg", {13, 15}},      {"r_lower_leg", {14, 16}}};
  return {};
}

std::vector<PartGroup> synthetic_groups(std::string_view mode) {
  if (mode == "P1") return {{"all", range(0, 5)}};
  if (mode == "P3") return {{"head", {0, 1}}, {"l_arm", {2, 4}}, {"r_arm", {3, 5}}};
  return {};
}

}  // namespace

PartGrouping make_grouping(std::string_view mode, const KeypointSchema& schema) {
  std::vector<PartGroup> groups;
  if (schema.name == "mpii16") groups = mpii_groups(mode);
  else if (schema.name == "coco17") groups = coco_groups(mode);
  else if (schema.name == "synthetic6") groups = synthetic_groups(mode);
  else throw UsageError("no built-in grouping for schema '" + schema.name + "'");
  if (groups.empty())
    throw UsageError("unknown grouping mode '" + std::string(mode) + "' for schema " + schema.name);
  PartGrouping g{std::move(groups), schema.size()};
  g.validate();
  return g;
}

PartGrouping grouping_from_json(std::string_view text, int num_keypoints) {
  PartGrouping g;
  g.num_keypoints = num_keypoints;
  try {
    const json doc = json::parse(text);
    for (const json& jg : doc.at("groups"))
      g.groups.push_back({jg.at("name").get<std::string>(), jg.at("keypoints").get<std::vector<int>>()});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grouping json: ") + e.what());
  }
  g.validate();
  return g;
}

std::string grouping_to_json(const PartGrouping& grouping) {
  json groups = json::array();
  for (const PartGroup& g : grouping.groups) groups.push_back({{"name", g.name}, {"keypoints", g.keypoints}});
  return json{{"groups", groups}}.dump(2) + "\n";
}

}  // namespace posefabric::parts
