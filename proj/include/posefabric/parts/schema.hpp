#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace posefabric::parts {

struct KeypointSchema {
  std::string name;
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> flip_pairs;

  int size() const { return static_cast<int>(names.size()); }
  /// perm[k] is the keypoint that k becomes under a horizontal flip.
  std::vector<int> flip_permutation() const;
  void validate() const;
};

KeypointSchema mpii16();
KeypointSchema coco17();
/// head, neck, l-elbow, r-elbow, l-hand, r-hand.
KeypointSchema synthetic6();
KeypointSchema schema_by_name(std::string_view name);

struct PartGroup {
  std::string name;
  std::vector<int> keypoints;
};

/// Cover of the keypoints by P groups. Group p's i-th local entry is the
/// global keypoint groups[p].keypoints[i]; its d-vector occupies channels
/// i*d .. i*d+d-1 of that part's representation.
struct PartGrouping {
  std::vector<PartGroup> groups;
  int num_keypoints = 0;

  int size() const { return static_cast<int>(groups.size()); }
  bool indicator(int k, int p, int i) const;
  /// Every keypoint covered, indices in range, no duplicates inside a group.
  void validate() const;
};

/// "P1", "P3", "P5" or "P8" over mpii16/coco17; synthetic6 accepts P1 and
/// P3. Unknown combinations throw UsageError.
PartGrouping make_grouping(std::string_view mode, const KeypointSchema& schema);

/// {"groups": [{"name": ..., "keypoints": [...]}, ...]}
PartGrouping grouping_from_json(std::string_view text, int num_keypoints);
std::string grouping_to_json(const PartGrouping& grouping);

}  // namespace posefabric::parts
