#include "bifusion/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "bifusion/checkpoint.hpp"
#include "bifusion/fusion.hpp"

namespace bifusion {

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::bifusion: return "bifusion";
    case EvalMode::msgg_only: return "msgg_only";
    case EvalMode::msgg_raw: return "msgg_raw";
    case EvalMode::silhouette_only: return "silhouette_only";
  }
  return "?";
}

EvalMode eval_mode_from_string(const std::string& name) {
  if (name == "bifusion") return EvalMode::bifusion;
  if (name == "msgg_only") return EvalMode::msgg_only;
  if (name == "msgg_raw") return EvalMode::msgg_raw;
  if (name == "silhouette_only") return EvalMode::silhouette_only;
  throw ConfigError("unknown eval mode: " + name);
}

namespace {

void run_chunked(std::int64_t n, std::int64_t threads,
                 const std::function<void(std::int64_t)>& fn) {
  const std::int64_t workers = std::max<std::int64_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (std::int64_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::int64_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

EmbeddingSet extract_embeddings(const DatasetIndex& data,
                                const std::vector<const SequenceEntry*>& subset,
                                const CliConfig& cfg, EvalMode mode,
                                const std::string& checkpoint_path) {
  const std::string magic = checkpoint_magic(checkpoint_path);
  Rng init_rng(0, 99);

  // the needed submodules, loaded according to mode and checkpoint flavor
  std::unique_ptr<MsggModel> msgg;
  std::unique_ptr<SilhouetteModel> sil;
  std::unique_ptr<CompactBlock> compact;
  std::unique_ptr<FusionHead> fuse;

  auto require_magic = [&](std::initializer_list<const char*> allowed) {
    for (const char* m : allowed)
      if (magic == m) return;
    throw LoadError("checkpoint " + checkpoint_path + " (magic '" + magic +
                    "') does not match eval mode " + to_string(mode));
  };
  const bool combined = magic == "BIFU";

  if (mode == EvalMode::bifusion || mode == EvalMode::msgg_only || mode == EvalMode::msgg_raw) {
    msgg = std::make_unique<MsggModel>(MsggConfig::from_cli(cfg, 0), init_rng);
    if (mode == EvalMode::msgg_raw) require_magic({"MSGG", "BIFU"});
    else require_magic({"BIFU"});
    load_checkpoint(checkpoint_path, magic,
                    combined ? with_prefix("msgg.", msgg->state_items()) : msgg->state_items());
  }
  if (mode == EvalMode::bifusion || mode == EvalMode::silhouette_only) {
    sil = std::make_unique<SilhouetteModel>(SilhouetteEncoderConfig{cfg.parts, cfg.micro_window},
                                            init_rng);
    if (mode == EvalMode::silhouette_only) require_magic({"SILP", "BIFU"});
    load_checkpoint(checkpoint_path, magic,
                    combined ? with_prefix("sil.", sil->state_items()) : sil->state_items());
  }
  if (mode == EvalMode::bifusion || mode == EvalMode::msgg_only) {
    compact = std::make_unique<CompactBlock>(cfg.channels[2], cfg.compact_dim, cfg.compact_dropout,
                                             init_rng);
    load_checkpoint(checkpoint_path, magic, with_prefix("compact.", compact->state_items()));
  }
  if (mode == EvalMode::bifusion) {
    fuse = std::make_unique<FusionHead>(cfg.parts, SilhouetteEncoderConfig::kFeatureDim,
                                        cfg.compact_dim, cfg.fused_dim, init_rng);
    load_checkpoint(checkpoint_path, magic, with_prefix("fuse.", fuse->state_items()));
  }

  EmbeddingSet out;
  switch (mode) {
    case EvalMode::bifusion:
      out.parts = cfg.parts;
      out.dim = cfg.fused_dim;
      break;
    case EvalMode::msgg_only:
      out.parts = 1;
      out.dim = cfg.compact_dim;
      break;
    case EvalMode::msgg_raw:
      out.parts = 1;
      out.dim = cfg.channels[2];
      break;
    case EvalMode::silhouette_only:
      out.parts = cfg.parts;
      out.dim = SilhouetteEncoderConfig::kFeatureDim;
      break;
  }
  out.items.resize(subset.size());

  run_chunked(static_cast<std::int64_t>(subset.size()), cfg.threads, [&](std::int64_t i) {
    const SequenceEntry& e = *subset[static_cast<std::size_t>(i)];
    auto& item = out.items[static_cast<std::size_t>(i)];
    item.identity = e.identity;
    item.condition = e.condition;
    item.seq = e.seq;
    item.view = e.view;

    TensorPtr deep, compact_k, parts3;
    if (msgg) {
      auto kpm = normalize_keypoints(data.load_kpm(e), cfg.normalize_input);
      auto kp = kpm_to_tensor(kpm);
      auto msgg_out = msgg->forward(nullptr, kp, Mode::eval);
      deep = msgg_out.branch_embeddings.back();
    }
    if (compact) {
      Rng unused(0);
      compact_k = compact->forward(nullptr, deep, Mode::eval, unused);
    }
    if (sil) {
      const auto s = data.load_sil(e);
      auto frames = sil_to_tensor(s);
      parts3 = sil->forward(nullptr, frames, 1, s.t);
    }

    switch (mode) {
      case EvalMode::bifusion: {
        auto fused = fuse->forward(nullptr, parts3, compact_k);
        item.feat.reserve(static_cast<std::size_t>(out.parts * out.dim));
        for (const auto& f : fused)
          item.feat.insert(item.feat.end(), f->data.begin(), f->data.end());
        break;
      }
      case EvalMode::msgg_only:
        item.feat = compact_k->data;
        break;
      case EvalMode::msgg_raw:
        item.feat = deep->data;
        break;
      case EvalMode::silhouette_only:
        item.feat = parts3->data;
        break;
    }
  });
  return out;
}

double part_distance(const std::vector<double>& q, const std::vector<double>& g,
                     std::int64_t parts, std::int64_t dim) {
  if (q.size() != g.size() || static_cast<std::int64_t>(q.size()) != parts * dim)
    throw DimensionError("part_distance: feature sizes disagree");
  double total = 0.0;
  for (std::int64_t p = 0; p < parts; ++p) {
    double acc = 0.0;
    for (std::int64_t d = 0; d < dim; ++d) {
      const double dv = q[static_cast<std::size_t>(p * dim + d)] -
                        g[static_cast<std::size_t>(p * dim + d)];
      acc += dv * dv;
    }
    total += std::sqrt(acc);
  }
  return total / static_cast<double>(parts);
}

RankTable rank_k_table(const EmbeddingSet& gallery, const EmbeddingSet& probe, std::int64_t k,
                       bool exclude_identical_view) {
  if (gallery.items.empty()) throw ProtocolError("empty gallery");
  if (gallery.parts != probe.parts || gallery.dim != probe.dim)
    throw DimensionError("gallery and probe embeddings disagree in shape");

  std::map<std::int64_t, std::vector<const EmbeddingSet::Item*>> gallery_by_view;
  for (const auto& g : gallery.items) gallery_by_view[g.view].push_back(&g);

  std::map<Condition, std::map<std::int64_t, std::vector<const EmbeddingSet::Item*>>> probes;
  for (const auto& p : probe.items) probes[p.condition][p.view].push_back(&p);

  RankTable table;
  for (const auto& [cond, by_view] : probes) {
    double cond_sum = 0.0;
    std::int64_t cond_count = 0;
    for (const auto& [pv, plist] : by_view) {
      double acc_sum = 0.0;
      std::int64_t acc_count = 0;
      for (const auto& [gv, glist] : gallery_by_view) {
        if (exclude_identical_view && gv == pv) continue;
        if (glist.empty()) throw ProtocolError("empty gallery view " + std::to_string(gv));
        std::int64_t correct = 0;
        for (const auto* p : plist) {
          // k nearest within this gallery view, index as the tie-break
          std::vector<std::pair<double, std::size_t>> dist;
          dist.reserve(glist.size());
          for (std::size_t gi = 0; gi < glist.size(); ++gi)
            dist.emplace_back(
                part_distance(p->feat, glist[gi]->feat, gallery.parts, gallery.dim), gi);
          std::sort(dist.begin(), dist.end());
          const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(k), dist.size());
          for (std::size_t r = 0; r < top; ++r)
            if (glist[dist[r].second]->identity == p->identity) {
              ++correct;
              break;
            }
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(plist.size());
        ++acc_count;
      }
      if (acc_count == 0)
        throw ProtocolError("no gallery views left for probe view " + std::to_string(pv));
      const double acc = acc_sum / static_cast<double>(acc_count);
      table.rows.push_back({cond, pv, acc});
      cond_sum += acc;
      ++cond_count;
    }
    table.means.push_back({cond, cond_sum / static_cast<double>(cond_count)});
  }
  return table;
}

std::string rank_table_csv(const RankTable& table) {
  std::ostringstream os;
  os << "condition,probe_view,accuracy\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& r : table.rows)
    os << to_string(r.condition) << "," << r.probe_view << "," << r.accuracy << "\n";
  for (const auto& m : table.means) os << to_string(m.condition) << ",mean," << m.accuracy << "\n";
  return os.str();
}

std::vector<const SequenceEntry*> gallery_entries(const DatasetIndex& data,
                                                  const std::vector<std::int64_t>& identities) {
  std::vector<const SequenceEntry*> out;
  for (const auto& e : data.entries)
    if (e.condition == Condition::NM && e.seq <= 4 &&
        std::find(identities.begin(), identities.end(), e.identity) != identities.end())
      out.push_back(&e);
  return out;
}

std::vector<const SequenceEntry*> probe_entries(const DatasetIndex& data,
                                                const std::vector<std::int64_t>& identities,
                                                Condition condition) {
  std::vector<const SequenceEntry*> out;
  for (const auto& e : data.entries) {
    if (std::find(identities.begin(), identities.end(), e.identity) == identities.end()) continue;
    if (e.condition != condition) continue;
    if (condition == Condition::NM && e.seq <= 4) continue;  // those are the gallery
    out.push_back(&e);
  }
  return out;
}

std::vector<std::int64_t> test_identities(const DatasetIndex& data, const CliConfig& cfg) {
  auto ids = data.identities();
  const std::int64_t train = cfg.effective_train_ids(static_cast<std::int64_t>(ids.size()));
  return std::vector<std::int64_t>(ids.begin() + train, ids.end());
}

}  // namespace bifusion
