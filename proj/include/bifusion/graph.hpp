#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bifusion/tensor.hpp"

namespace bifusion {

enum class Scale { joints, limbs, bodyparts };
enum class Partition { uniform, distance, spatial, gait_temporal };
// Whether the identity is added to every partition subset (the printed-formula
// reading) or only to subset 0.
enum class SelfLoopMode { all_subsets, subset0 };

std::string to_string(Scale s);
std::string to_string(Partition p);
Partition partition_from_string(const std::string& name);

// Fixed 12-keypoint order used everywhere: torso and limb joints, left before
// right within each pair.
enum Joint : std::int64_t {
  kLShoulder = 0, kRShoulder = 1,
  kLElbow = 2, kRElbow = 3,
  kLWrist = 4, kRWrist = 5,
  kLHip = 6, kRHip = 7,
  kLKnee = 8, kRKnee = 9,
  kLAnkle = 10, kRAnkle = 11,
};
constexpr std::int64_t kJointCount = 12;

struct ScaleGraph {
  Scale scale;
  std::int64_t node_count = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> spatial_edges;  // unordered, a < b
  std::vector<std::string> node_names;
  std::vector<std::int64_t> positive_set;  // high swing amplitude
  std::vector<std::int64_t> negative_set;  // low swing amplitude
  // reference standing pose, used by the spatial-configuration strategy
  std::vector<std::array<double, 2>> canonical_coords;

  bool adjacent(std::int64_t a, std::int64_t b) const;
  std::vector<std::int64_t> neighbors(std::int64_t node) const;
  bool is_positive(std::int64_t node) const;
};

// Perfect 2->1 matching between adjacent scales: (a, b) -> target.
struct PoolMap {
  Scale from_scale, to_scale;
  struct Entry {
    std::int64_t a, b, target;
  };
  std::vector<Entry> pairs;
};

struct PartitionLabeling {
  Partition strategy = Partition::uniform;
  std::int64_t subset_count = 1;
  // label[root][member] is the subset of `member` in N(root) ∪ {root},
  // or -1 when member is outside that set.
  std::vector<std::vector<int>> label;
};

struct NormalizedAdjacency {
  std::int64_t node_count = 0;
  std::vector<std::vector<double>> subsets;  // dense node_count x node_count, row-major
};

struct PyramidGraph {
  ScaleGraph joints, limbs, bodyparts;
  PoolMap joints_to_limbs, limbs_to_bodyparts;

  const ScaleGraph& at(Scale s) const;
};

// The three-scale graph with its two perfect-matching pool maps.
PyramidGraph build_pyramid_graph();

// frame_coords is required by the spatial-configuration strategy (distances to
// the gravity center, the mean of the coordinates) and ignored otherwise.
PartitionLabeling partition_neighbors(const ScaleGraph& graph, Partition strategy,
                                      const std::vector<std::array<double, 2>>* frame_coords = nullptr);

// Per-subset neighbor matrices from the labeling plus self loops per `mode`,
// before normalization. Entries are 0/1.
std::vector<std::vector<double>> subset_bases(const ScaleGraph& graph,
                                              const PartitionLabeling& labeling,
                                              SelfLoopMode mode = SelfLoopMode::all_subsets);

// D^{-1/2} (A_k + I) D^{-1/2} with D_ii = row sum + 1e-6.
NormalizedAdjacency normalized_adjacency(const ScaleGraph& graph,
                                         const PartitionLabeling& labeling,
                                         SelfLoopMode mode = SelfLoopMode::all_subsets);

// K trainable node_count x node_count matrices initialized to 1.
std::vector<TensorPtr> edge_importance_init(const ScaleGraph& graph, std::int64_t subset_count);

// Dense row-major normalization of an arbitrary masked matrix by its live
// degree; shared by normalized_adjacency and tests.
std::vector<double> normalize_by_degree(const std::vector<double>& m, std::int64_t n);

}  // namespace bifusion
