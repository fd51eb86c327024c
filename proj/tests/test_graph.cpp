#include "doctest.h"

#include <array>
#include <cmath>
#include <set>
#include <vector>

#include "bifusion/graph.hpp"

using namespace bifusion;

namespace {

// Independent dense recomputation of the normalized adjacency subsets straight
// from the edge list and the strategy definition. Deliberately avoids the
// library's subset_bases/normalize helpers.
std::vector<std::vector<double>> oracle_subsets(const ScaleGraph& g, Partition strategy,
                                                SelfLoopMode mode) {
  const std::int64_t n = g.node_count;
  std::int64_t k = 0;
  switch (strategy) {
    case Partition::uniform: k = 1; break;
    case Partition::distance: k = 2; break;
    case Partition::spatial: k = 3; break;
    case Partition::gait_temporal: k = 3; break;
  }
  // adjacency from scratch
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n),
                                    std::vector<int>(static_cast<std::size_t>(n), 0));
  for (const auto& e : g.spatial_edges) {
    adj[static_cast<std::size_t>(e.first)][static_cast<std::size_t>(e.second)] = 1;
    adj[static_cast<std::size_t>(e.second)][static_cast<std::size_t>(e.first)] = 1;
  }
  double cx = 0.0, cy = 0.0;
  std::vector<double> rad(static_cast<std::size_t>(n), 0.0);
  if (strategy == Partition::spatial) {
    for (const auto& p : g.canonical_coords) {
      cx += p[0];
      cy += p[1];
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i)
      rad[static_cast<std::size_t>(i)] = std::sqrt(
          (g.canonical_coords[static_cast<std::size_t>(i)][0] - cx) *
              (g.canonical_coords[static_cast<std::size_t>(i)][0] - cx) +
          (g.canonical_coords[static_cast<std::size_t>(i)][1] - cy) *
              (g.canonical_coords[static_cast<std::size_t>(i)][1] - cy));
  }
  std::vector<std::vector<double>> mats(
      static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(n * n), 0.0));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      if (!adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
      std::int64_t lab = 0;
      switch (strategy) {
        case Partition::uniform: lab = 0; break;
        case Partition::distance: lab = 1; break;
        case Partition::spatial: {
          const double dr = rad[static_cast<std::size_t>(i)], dn = rad[static_cast<std::size_t>(j)];
          lab = std::abs(dn - dr) <= 1e-9 ? 0 : (dn < dr ? 1 : 2);
          break;
        }
        case Partition::gait_temporal: {
          bool pos = false;
          for (std::int64_t q : g.positive_set) pos = pos || q == j;
          lab = pos ? 1 : 2;
          break;
        }
      }
      mats[static_cast<std::size_t>(lab)][static_cast<std::size_t>(i * n + j)] = 1.0;
    }
  for (std::int64_t kk = 0; kk < k; ++kk) {
    if (mode == SelfLoopMode::subset0 && kk != 0) continue;
    for (std::int64_t i = 0; i < n; ++i)
      mats[static_cast<std::size_t>(kk)][static_cast<std::size_t>(i * n + i)] += 1.0;
  }
  std::vector<std::vector<double>> out;
  for (const auto& m : mats) {
    std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) deg[static_cast<std::size_t>(i)] += m[static_cast<std::size_t>(i * n + j)];
      deg[static_cast<std::size_t>(i)] += 1e-6;
    }
    std::vector<double> nm(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        nm[static_cast<std::size_t>(i * n + j)] =
            m[static_cast<std::size_t>(i * n + j)] /
            std::sqrt(deg[static_cast<std::size_t>(i)] * deg[static_cast<std::size_t>(j)]);
    out.push_back(nm);
  }
  return out;
}

bool connected(const ScaleGraph& g) {
  std::vector<bool> seen(static_cast<std::size_t>(g.node_count), false);
  std::vector<std::int64_t> stack = {0};
  seen[0] = true;
  while (!stack.empty()) {
    auto v = stack.back();
    stack.pop_back();
    for (auto nb : g.neighbors(v))
      if (!seen[static_cast<std::size_t>(nb)]) {
        seen[static_cast<std::size_t>(nb)] = true;
        stack.push_back(nb);
      }
  }
  for (bool s : seen)
    if (!s) return false;
  return true;
}

double power_iteration_radius(const std::vector<double>& m, std::int64_t n) {
  std::vector<double> v(static_cast<std::size_t>(n), 1.0);
  double lambda = 0.0;
  for (int it = 0; it < 300; ++it) {
    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        w[static_cast<std::size_t>(i)] += m[static_cast<std::size_t>(i * n + j)] * v[static_cast<std::size_t>(j)];
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-30) return 0.0;
    lambda = norm;
    for (std::int64_t i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / norm;
  }
  return lambda;
}

const std::array<Partition, 4> kAllStrategies = {Partition::uniform, Partition::distance,
                                                 Partition::spatial, Partition::gait_temporal};

}  // namespace

TEST_CASE("pyramid graph structure") {
  auto g = build_pyramid_graph();

  CHECK(g.joints.node_count == 12);
  CHECK(g.joints.spatial_edges.size() == 12);
  CHECK(g.limbs.node_count == 6);
  CHECK(g.bodyparts.node_count == 3);
  CHECK(connected(g.joints));
  CHECK(connected(g.limbs));
  CHECK(connected(g.bodyparts));

  SUBCASE("pool maps are perfect 2->1 matchings") {
    for (const PoolMap* pm : {&g.joints_to_limbs, &g.limbs_to_bodyparts}) {
      std::set<std::int64_t> sources, targets;
      for (const auto& p : pm->pairs) {
        CHECK(p.a != p.b);
        CHECK(!sources.count(p.a));
        CHECK(!sources.count(p.b));
        sources.insert(p.a);
        sources.insert(p.b);
        CHECK(!targets.count(p.target));
        targets.insert(p.target);
      }
    }
    CHECK(g.joints_to_limbs.pairs.size() == 6);
    CHECK(g.limbs_to_bodyparts.pairs.size() == 3);
  }

  SUBCASE("bodyparts positive and negative sets") {
    CHECK(g.bodyparts.positive_set == std::vector<std::int64_t>{0, 1});  // arms, legs
    CHECK(g.bodyparts.negative_set == std::vector<std::int64_t>{2});     // torso
  }

  SUBCASE("composed pooling sends 4 joints to each bodypart") {
    std::vector<std::int64_t> joint_to_limb(12, -1), limb_to_part(6, -1);
    for (const auto& p : g.joints_to_limbs.pairs) {
      joint_to_limb[static_cast<std::size_t>(p.a)] = p.target;
      joint_to_limb[static_cast<std::size_t>(p.b)] = p.target;
    }
    for (const auto& p : g.limbs_to_bodyparts.pairs) {
      limb_to_part[static_cast<std::size_t>(p.a)] = p.target;
      limb_to_part[static_cast<std::size_t>(p.b)] = p.target;
    }
    std::vector<int> counts(3, 0);
    for (std::int64_t j = 0; j < 12; ++j) {
      REQUIRE(joint_to_limb[static_cast<std::size_t>(j)] >= 0);
      const auto part = limb_to_part[static_cast<std::size_t>(joint_to_limb[static_cast<std::size_t>(j)])];
      REQUIRE(part >= 0);
      counts[static_cast<std::size_t>(part)]++;
    }
    CHECK(counts == std::vector<int>{4, 4, 4});
  }

  SUBCASE("construction is deterministic") {
    auto g2 = build_pyramid_graph();
    CHECK(g2.joints.spatial_edges == g.joints.spatial_edges);
    CHECK(g2.limbs.spatial_edges == g.limbs.spatial_edges);
    CHECK(g2.joints.positive_set == g.joints.positive_set);
    CHECK(g2.joints_to_limbs.pairs.size() == g.joints_to_limbs.pairs.size());
  }
}

TEST_CASE("partition labelings") {
  auto g = build_pyramid_graph();

  SUBCASE("gait temporal at the right knee") {
    auto lab = partition_neighbors(g.joints, Partition::gait_temporal);
    CHECK(lab.subset_count == 3);
    CHECK(lab.label[kRKnee][kRKnee] == 0);
    CHECK(lab.label[kRKnee][kRAnkle] == 1);  // ankle is Positive
    CHECK(lab.label[kRKnee][kRHip] == 2);    // hip is Negative
  }

  SUBCASE("uniform labels everything 0") {
    auto lab = partition_neighbors(g.joints, Partition::uniform);
    for (std::int64_t i = 0; i < 12; ++i) {
      CHECK(lab.label[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] == 0);
      for (auto nb : g.joints.neighbors(i))
        CHECK(lab.label[static_cast<std::size_t>(i)][static_cast<std::size_t>(nb)] == 0);
    }
  }

  SUBCASE("distance splits self from neighbors") {
    auto lab = partition_neighbors(g.joints, Partition::distance);
    const std::int64_t root = kLShoulder;  // 3 neighbors
    CHECK(g.joints.neighbors(root).size() == 3);
    CHECK(lab.label[static_cast<std::size_t>(root)][static_cast<std::size_t>(root)] == 0);
    for (auto nb : g.joints.neighbors(root))
      CHECK(lab.label[static_cast<std::size_t>(root)][static_cast<std::size_t>(nb)] == 1);
  }

  SUBCASE("spatial needs coordinates") {
    CHECK_THROWS_AS(partition_neighbors(g.joints, Partition::spatial, nullptr), ConfigError);
    auto lab = partition_neighbors(g.joints, Partition::spatial, &g.joints.canonical_coords);
    CHECK(lab.subset_count == 3);
  }

  SUBCASE("labels cover the neighbor set exactly once for every strategy and root") {
    for (const ScaleGraph* sg : {&g.joints, &g.limbs, &g.bodyparts}) {
      for (auto strategy : kAllStrategies) {
        auto lab = partition_neighbors(*sg, strategy, &sg->canonical_coords);
        for (std::int64_t root = 0; root < sg->node_count; ++root) {
          std::set<std::int64_t> expected = {root};
          for (auto nb : sg->neighbors(root)) expected.insert(nb);
          std::set<std::int64_t> labeled;
          for (std::int64_t m = 0; m < sg->node_count; ++m) {
            const int l = lab.label[static_cast<std::size_t>(root)][static_cast<std::size_t>(m)];
            if (l >= 0) {
              CHECK(l < lab.subset_count);
              labeled.insert(m);
            }
          }
          CHECK(labeled == expected);
        }
      }
    }
  }
}

TEST_CASE("normalized adjacency") {
  auto g = build_pyramid_graph();

  SUBCASE("isolated node, uniform") {
    ScaleGraph lone;
    lone.scale = Scale::joints;
    lone.node_count = 1;
    lone.node_names = {"x"};
    lone.canonical_coords = {{0.0, 0.0}};
    auto lab = partition_neighbors(lone, Partition::uniform);
    auto na = normalized_adjacency(lone, lab);
    REQUIRE(na.subsets.size() == 1);
    CHECK(na.subsets[0][0] == doctest::Approx(1.0).epsilon(1e-5));
  }

  SUBCASE("two-node edge, uniform: dense hand computation with degrees (2,2)") {
    ScaleGraph pair;
    pair.scale = Scale::joints;
    pair.node_count = 2;
    pair.node_names = {"a", "b"};
    pair.spatial_edges = {{0, 1}};
    pair.canonical_coords = {{0.0, 0.0}, {1.0, 0.0}};
    auto lab = partition_neighbors(pair, Partition::uniform);
    auto na = normalized_adjacency(pair, lab);
    for (double v : na.subsets[0]) CHECK(v == doctest::Approx(0.5).epsilon(1e-5));
  }

  SUBCASE("subsets equal the brute-force oracle to 1e-12 on all scales and strategies") {
    for (const ScaleGraph* sg : {&g.joints, &g.limbs, &g.bodyparts})
      for (auto strategy : kAllStrategies)
        for (auto mode : {SelfLoopMode::all_subsets, SelfLoopMode::subset0}) {
          auto lab = partition_neighbors(*sg, strategy, &sg->canonical_coords);
          auto na = normalized_adjacency(*sg, lab, mode);
          auto oracle = oracle_subsets(*sg, strategy, mode);
          REQUIRE(na.subsets.size() == oracle.size());
          for (std::size_t k = 0; k < oracle.size(); ++k)
            for (std::size_t i = 0; i < oracle[k].size(); ++i)
              CHECK(std::abs(na.subsets[k][i] - oracle[k][i]) <= 1e-12);
        }
  }

  SUBCASE("subset sum reconstructs the scale adjacency for every strategy") {
    for (const ScaleGraph* sg : {&g.joints, &g.limbs, &g.bodyparts})
      for (auto strategy : kAllStrategies) {
        auto lab = partition_neighbors(*sg, strategy, &sg->canonical_coords);
        auto bases = subset_bases(*sg, lab, SelfLoopMode::all_subsets);
        const std::int64_t n = sg->node_count;
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < n; ++j) {
            if (i == j) continue;  // diagonal carries the added I
            double total = 0.0;
            for (const auto& m : bases) total += m[static_cast<std::size_t>(i * n + j)];
            CHECK(total == (sg->adjacent(i, j) ? 1.0 : 0.0));
          }
      }
  }

  SUBCASE("every entry nonnegative; symmetric subsets stay symmetric") {
    auto lab = partition_neighbors(g.joints, Partition::uniform);
    auto na = normalized_adjacency(g.joints, lab);
    const std::int64_t n = 12;
    for (double v : na.subsets[0]) CHECK(v >= 0.0);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        CHECK(na.subsets[0][static_cast<std::size_t>(i * n + j)] ==
              doctest::Approx(na.subsets[0][static_cast<std::size_t>(j * n + i)]));
  }

  SUBCASE("spectral radius of every subset is at most 1 + 1e-3") {
    for (const ScaleGraph* sg : {&g.joints, &g.limbs, &g.bodyparts})
      for (auto strategy : kAllStrategies) {
        auto lab = partition_neighbors(*sg, strategy, &sg->canonical_coords);
        auto na = normalized_adjacency(*sg, lab);
        for (const auto& m : na.subsets)
          CHECK(power_iteration_radius(m, sg->node_count) <= 1.0 + 1e-3);
      }
  }
}

TEST_CASE("edge importance initializes to ones") {
  auto g = build_pyramid_graph();
  auto ws = edge_importance_init(g.joints, 3);
  REQUIRE(ws.size() == 3);
  for (const auto& w : ws) {
    CHECK(w->shape == Shape{12, 12});
    CHECK(w->requires_grad);
    for (double v : w->data) CHECK(v == 1.0);
  }
}
