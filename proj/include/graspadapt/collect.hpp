#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "graspadapt/se3.hpp"
#include "graspadapt/world.hpp"

namespace graspadapt {

// The reference configuration used during data collection. The grasp is
// simulation ground truth: estimators never see it.
struct ReferenceSetup {
  Pose reference_eef;
  Pose reference_grasp;
};

// One collected sample: the view at a random EEF displacement N from the
// reference pose, labeled with the aligning displacement N^-1.
struct DatasetEntry {
  Observation observation;
  Pose label;
};

// The self-supervised view/alignment dataset for one object.
struct GraspDataset {
  std::vector<DatasetEntry> entries;
  SampleRange range;
  Pose reference_eef;
  std::string object_name;
};

// Emulates `m` grasps: for each entry, draw a displacement inside `range`,
// observe the rigidly grasped object there, and store the inverse
// displacement as the label. The world must be at the reference pose; its
// grasp is the reference grasp. Empty or unreachable views are resampled,
// up to 10*m attempts in total (then CollectionFailed). Entry i draws from
// rng.fork(attempt_i), so the result is independent of batching.
GraspDataset collect_dataset(const WorldState& world_at_reference,
                             const SampleRange& range, int m, RandomSource& rng);

// Restricts a dataset to entries whose displacement lies within `sub` on all
// six per-axis components. `sub` must be contained in the dataset's range.
// Throws EmptySubset when nothing qualifies.
GraspDataset subset_by_range(const GraspDataset& d, const SampleRange& sub);

// JSON-lines file: a header record followed by one record per entry. The
// header carries a version tag and an FNV-1a checksum over the entry lines;
// load re-verifies both. Observations are persisted as (points, appearance)
// only, so a loaded entry reports MaskSource::full and carries no point ids.
void save_dataset(const GraspDataset& d, const std::filesystem::path& path);
GraspDataset load_dataset(const std::filesystem::path& path);

// Median over entries of the distance to the nearest other entry's label,
// reported separately for translation and rotation. Used as the scale for
// "retrieval can't do better than the data spacing" style checks.
PoseError median_label_spacing(const GraspDataset& d);

}  // namespace graspadapt
