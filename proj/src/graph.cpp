#include "bifusion/graph.hpp"

#include <algorithm>
#include <cmath>

namespace bifusion {

std::string to_string(Scale s) {
  switch (s) {
    case Scale::joints: return "joints";
    case Scale::limbs: return "limbs";
    case Scale::bodyparts: return "bodyparts";
  }
  return "?";
}

std::string to_string(Partition p) {
  switch (p) {
    case Partition::uniform: return "uniform";
    case Partition::distance: return "distance";
    case Partition::spatial: return "spatial";
    case Partition::gait_temporal: return "gait_temporal";
  }
  return "?";
}

Partition partition_from_string(const std::string& name) {
  if (name == "uniform") return Partition::uniform;
  if (name == "distance") return Partition::distance;
  if (name == "spatial") return Partition::spatial;
  if (name == "gait_temporal") return Partition::gait_temporal;
  throw ConfigError("unknown partition strategy: " + name);
}

bool ScaleGraph::adjacent(std::int64_t a, std::int64_t b) const {
  for (const auto& e : spatial_edges)
    if ((e.first == a && e.second == b) || (e.first == b && e.second == a)) return true;
  return false;
}

std::vector<std::int64_t> ScaleGraph::neighbors(std::int64_t node) const {
  std::vector<std::int64_t> out;
  for (const auto& e : spatial_edges) {
    if (e.first == node) out.push_back(e.second);
    if (e.second == node) out.push_back(e.first);
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool ScaleGraph::is_positive(std::int64_t node) const {
  return std::find(positive_set.begin(), positive_set.end(), node) != positive_set.end();
}

const ScaleGraph& PyramidGraph::at(Scale s) const {
  switch (s) {
    case Scale::joints: return joints;
    case Scale::limbs: return limbs;
    case Scale::bodyparts: return bodyparts;
  }
  return joints;
}

namespace {

std::array<double, 2> midpoint(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return {(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0};
}

}  // namespace

PyramidGraph build_pyramid_graph() {
  PyramidGraph g;

  ScaleGraph& j = g.joints;
  j.scale = Scale::joints;
  j.node_count = kJointCount;
  j.node_names = {"l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
                  "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle"};
  j.spatial_edges = {
      {kLShoulder, kRShoulder}, {kLHip, kRHip},
      {kLShoulder, kLHip}, {kRShoulder, kRHip},
      {kLShoulder, kLElbow}, {kLElbow, kLWrist},
      {kRShoulder, kRElbow}, {kRElbow, kRWrist},
      {kLHip, kLKnee}, {kLKnee, kLAnkle},
      {kRHip, kRKnee}, {kRKnee, kRAnkle},
  };
  j.positive_set = {kLElbow, kRElbow, kLWrist, kRWrist, kLKnee, kRKnee, kLAnkle, kRAnkle};
  j.negative_set = {kLShoulder, kRShoulder, kLHip, kRHip};
  j.canonical_coords = {
      {-4.0, 0.0}, {4.0, 0.0},    // shoulders
      {-5.0, 6.0}, {5.0, 6.0},    // elbows
      {-5.5, 12.0}, {5.5, 12.0},  // wrists
      {-3.0, 14.0}, {3.0, 14.0},  // hips
      {-3.2, 24.0}, {3.2, 24.0},  // knees
      {-3.4, 34.0}, {3.4, 34.0},  // ankles
  };

  // limbs: 0 l_arm, 1 r_arm, 2 l_leg, 3 r_leg, 4 l_torso, 5 r_torso
  ScaleGraph& l = g.limbs;
  l.scale = Scale::limbs;
  l.node_count = 6;
  l.node_names = {"l_arm", "r_arm", "l_leg", "r_leg", "l_torso", "r_torso"};
  l.spatial_edges = {{0, 4}, {1, 5}, {2, 4}, {3, 5}, {4, 5}};
  l.positive_set = {0, 1, 2, 3};
  l.negative_set = {4, 5};

  g.joints_to_limbs.from_scale = Scale::joints;
  g.joints_to_limbs.to_scale = Scale::limbs;
  g.joints_to_limbs.pairs = {
      {kLElbow, kLWrist, 0}, {kRElbow, kRWrist, 1},
      {kLKnee, kLAnkle, 2}, {kRKnee, kRAnkle, 3},
      {kLShoulder, kLHip, 4}, {kRShoulder, kRHip, 5},
  };
  for (const auto& p : g.joints_to_limbs.pairs)
    l.canonical_coords.push_back(midpoint(j.canonical_coords[static_cast<std::size_t>(p.a)],
                                          j.canonical_coords[static_cast<std::size_t>(p.b)]));

  // bodyparts: 0 arms, 1 legs, 2 torso
  ScaleGraph& b = g.bodyparts;
  b.scale = Scale::bodyparts;
  b.node_count = 3;
  b.node_names = {"arms", "legs", "torso"};
  b.spatial_edges = {{0, 2}, {1, 2}};
  b.positive_set = {0, 1};
  b.negative_set = {2};

  g.limbs_to_bodyparts.from_scale = Scale::limbs;
  g.limbs_to_bodyparts.to_scale = Scale::bodyparts;
  g.limbs_to_bodyparts.pairs = {{0, 1, 0}, {2, 3, 1}, {4, 5, 2}};
  for (const auto& p : g.limbs_to_bodyparts.pairs)
    b.canonical_coords.push_back(midpoint(l.canonical_coords[static_cast<std::size_t>(p.a)],
                                          l.canonical_coords[static_cast<std::size_t>(p.b)]));

  return g;
}

PartitionLabeling partition_neighbors(const ScaleGraph& graph, Partition strategy,
                                      const std::vector<std::array<double, 2>>* frame_coords) {
  PartitionLabeling out;
  out.strategy = strategy;
  switch (strategy) {
    case Partition::uniform: out.subset_count = 1; break;
    case Partition::distance: out.subset_count = 2; break;
    case Partition::spatial: out.subset_count = 3; break;
    case Partition::gait_temporal: out.subset_count = 3; break;
  }
  const std::int64_t n = graph.node_count;
  out.label.assign(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), -1));

  std::vector<double> center_dist;
  if (strategy == Partition::spatial) {
    if (frame_coords == nullptr || static_cast<std::int64_t>(frame_coords->size()) != n)
      throw ConfigError("spatial partitioning needs per-node frame coordinates");
    double cx = 0.0, cy = 0.0;
    for (const auto& p : *frame_coords) {
      cx += p[0];
      cy += p[1];
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    for (const auto& p : *frame_coords)
      center_dist.push_back(std::hypot(p[0] - cx, p[1] - cy));
  }

  for (std::int64_t root = 0; root < n; ++root) {
    auto& row = out.label[static_cast<std::size_t>(root)];
    row[static_cast<std::size_t>(root)] = 0;
    for (std::int64_t nb : graph.neighbors(root)) {
      int lab = 0;
      switch (strategy) {
        case Partition::uniform:
          lab = 0;
          break;
        case Partition::distance:
          lab = 1;
          break;
        case Partition::spatial: {
          const double dr = center_dist[static_cast<std::size_t>(root)];
          const double dn = center_dist[static_cast<std::size_t>(nb)];
          if (std::abs(dn - dr) <= 1e-9)
            lab = 0;
          else
            lab = dn < dr ? 1 : 2;
          break;
        }
        case Partition::gait_temporal:
          lab = graph.is_positive(nb) ? 1 : 2;
          break;
      }
      row[static_cast<std::size_t>(nb)] = lab;
    }
  }
  return out;
}

std::vector<std::vector<double>> subset_bases(const ScaleGraph& graph,
                                              const PartitionLabeling& labeling,
                                              SelfLoopMode mode) {
  const std::int64_t n = graph.node_count;
  std::vector<std::vector<double>> bases(
      static_cast<std::size_t>(labeling.subset_count),
      std::vector<double>(static_cast<std::size_t>(n * n), 0.0));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t jj = 0; jj < n; ++jj) {
      if (i == jj) continue;
      const int lab = labeling.label[static_cast<std::size_t>(i)][static_cast<std::size_t>(jj)];
      if (lab >= 0) bases[static_cast<std::size_t>(lab)][static_cast<std::size_t>(i * n + jj)] = 1.0;
    }
  for (std::int64_t k = 0; k < labeling.subset_count; ++k) {
    if (mode == SelfLoopMode::subset0 && k != 0) continue;
    for (std::int64_t i = 0; i < n; ++i)
      bases[static_cast<std::size_t>(k)][static_cast<std::size_t>(i * n + i)] += 1.0;
  }
  return bases;
}

std::vector<double> normalize_by_degree(const std::vector<double>& m, std::int64_t n) {
  std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < n; ++j) acc += m[static_cast<std::size_t>(i * n + j)];
    deg[static_cast<std::size_t>(i)] = acc + 1e-6;
  }
  std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i * n + j)] =
          m[static_cast<std::size_t>(i * n + j)] /
          (std::sqrt(deg[static_cast<std::size_t>(i)]) * std::sqrt(deg[static_cast<std::size_t>(j)]));
  return out;
}

NormalizedAdjacency normalized_adjacency(const ScaleGraph& graph,
                                         const PartitionLabeling& labeling, SelfLoopMode mode) {
  NormalizedAdjacency out;
  out.node_count = graph.node_count;
  for (auto& base : subset_bases(graph, labeling, mode))
    out.subsets.push_back(normalize_by_degree(base, graph.node_count));
  return out;
}

std::vector<TensorPtr> edge_importance_init(const ScaleGraph& graph, std::int64_t subset_count) {
  std::vector<TensorPtr> out;
  const std::int64_t n = graph.node_count;
  for (std::int64_t k = 0; k < subset_count; ++k)
    out.push_back(make_tensor({n, n}, std::vector<double>(static_cast<std::size_t>(n * n), 1.0),
                              true));
  return out;
}

}  // namespace bifusion
