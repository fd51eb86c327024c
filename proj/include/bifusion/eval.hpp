#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bifusion/config.hpp"
#include "bifusion/dataset.hpp"

namespace bifusion {

// bifusion: N x fused_dim fused features (BIFU checkpoint)
// msgg_only: the compact skeleton embedding (BIFU checkpoint)
// msgg_raw: the pooled deepest-branch embedding (MSGG or BIFU checkpoint)
// silhouette_only: N x 128 raw part features (SILP or BIFU checkpoint)
enum class EvalMode { bifusion, msgg_only, msgg_raw, silhouette_only };
std::string to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& name);

struct EmbeddingSet {
  std::int64_t parts = 1;
  std::int64_t dim = 0;
  struct Item {
    std::int64_t identity = 0;
    Condition condition = Condition::NM;
    std::int64_t seq = 1;
    std::int64_t view = 0;
    std::vector<double> feat;  // parts * dim
  };
  std::vector<Item> items;
};

// eval-mode forward over the subset; parallel over sequences with a fixed
// output order
EmbeddingSet extract_embeddings(const DatasetIndex& data,
                                const std::vector<const SequenceEntry*>& subset,
                                const CliConfig& cfg, EvalMode mode,
                                const std::string& checkpoint_path);

// mean over parts of the per-part Euclidean distance
double part_distance(const std::vector<double>& q, const std::vector<double>& g,
                     std::int64_t parts, std::int64_t dim);

struct RankTable {
  struct Row {
    Condition condition;
    std::int64_t probe_view;
    double accuracy;
  };
  std::vector<Row> rows;  // per (condition, probe view), views ascending
  struct Mean {
    Condition condition;
    double accuracy;
  };
  std::vector<Mean> means;
};

// Per probe view and condition: rank-k accuracy against each gallery view,
// averaged over gallery views (the identical view excluded by default).
RankTable rank_k_table(const EmbeddingSet& gallery, const EmbeddingSet& probe, std::int64_t k = 1,
                       bool exclude_identical_view = true);

std::string rank_table_csv(const RankTable& table);

// gallery = first 4 NM walks of every identity in the subset
std::vector<const SequenceEntry*> gallery_entries(const DatasetIndex& data,
                                                  const std::vector<std::int64_t>& identities);
std::vector<const SequenceEntry*> probe_entries(const DatasetIndex& data,
                                                const std::vector<std::int64_t>& identities,
                                                Condition condition);
std::vector<std::int64_t> test_identities(const DatasetIndex& data, const CliConfig& cfg);

}  // namespace bifusion
