#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bifusion/eval.hpp"
#include "bifusion/gradcheck.hpp"
#include "bifusion/msgg.hpp"
#include "bifusion/synthetic.hpp"
#include "bifusion/trainer.hpp"

using namespace bifusion;

namespace {

std::string config_key_help() {
  std::string out = "\nConfig keys (via --config FILE or --set key=value):\n";
  for (const auto& doc : config_key_docs()) out += "  " + doc.key + ": " + doc.help + "\n";
  return out;
}

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "flat key = value configuration file");
  cmd->add_option("--set", opts.sets, "override one config key, e.g. --set margin=0.3")
      ->take_all();
}

CliConfig resolve(const CommonOpts& opts) {
  CliConfig cfg;
  if (!opts.config_file.empty()) load_config_file(cfg, opts.config_file);
  for (const auto& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  // the fully-resolved configuration, logged for every run
  std::cerr << "# resolved config\n" << dump_config(cfg);
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << text;
}

int cmd_gen(const CommonOpts& common, const std::string& out_dir) {
  CliConfig cfg = resolve(common);
  GenSpec spec;
  spec.ids = cfg.ids;
  spec.frames = cfg.frames;
  spec.seed = cfg.seed;
  spec.threads = cfg.threads;
  auto index = generate_dataset(out_dir, spec);
  std::cout << "generated " << index.entries.size() << " sequences under " << out_dir << "\n";
  return 0;
}

int cmd_pretrain_msgg(const CommonOpts& common, const std::string& data_dir,
                      const std::string& out, const std::string& log) {
  CliConfig cfg = resolve(common);
  auto data = open_dataset(data_dir);
  auto stats = train_msgg_pretrain(data, cfg, out, log);
  std::cout << "pretrained skeleton network: " << stats.iterations
            << " iterations, final loss " << stats.final_loss << ", checkpoint " << out << "\n";
  return 0;
}

int cmd_pretrain_sil(const CommonOpts& common, const std::string& data_dir,
                     const std::string& out, const std::string& log) {
  CliConfig cfg = resolve(common);
  auto data = open_dataset(data_dir);
  auto stats = train_sil_pretrain(data, cfg, out, log);
  std::cout << "pretrained silhouette network: " << stats.iterations
            << " iterations, final loss " << stats.final_loss << ", checkpoint " << out << "\n";
  return 0;
}

int cmd_train(const CommonOpts& common, const std::string& data_dir, const std::string& msgg,
              const std::string& sil, const std::string& out, const std::string& log) {
  CliConfig cfg = resolve(common);
  auto data = open_dataset(data_dir);
  auto stats = train_global(data, cfg, msgg, sil, out, log);
  std::cout << "global training: " << stats.iterations << " iterations, final loss "
            << stats.final_loss << ", checkpoint " << out << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& data_dir, const std::string& checkpoint,
             const std::string& mode_name, const std::string& probe, const std::string& out) {
  CliConfig cfg = resolve(common);
  auto data = open_dataset(data_dir);
  const EvalMode mode = eval_mode_from_string(mode_name);
  const auto ids = test_identities(data, cfg);
  if (ids.empty()) throw ProtocolError("no test identities: train_ids covers the whole dataset");

  auto gallery_set = extract_embeddings(data, gallery_entries(data, ids), cfg, mode, checkpoint);

  std::vector<Condition> conds;
  if (probe == "all") conds = {Condition::NM, Condition::BG, Condition::CL};
  else conds = {condition_from_string(probe)};

  RankTable merged;
  for (Condition c : conds) {
    auto probe_set = extract_embeddings(data, probe_entries(data, ids, c), cfg, mode, checkpoint);
    auto table = rank_k_table(gallery_set, probe_set, cfg.rank_k);
    merged.rows.insert(merged.rows.end(), table.rows.begin(), table.rows.end());
    merged.means.insert(merged.means.end(), table.means.begin(), table.means.end());
  }
  write_text(out, rank_table_csv(merged));
  return 0;
}

int cmd_inspect_graph(const CommonOpts& common, const std::string& scale_name,
                      const std::string& out) {
  CliConfig cfg = resolve(common);
  auto pyramid = build_pyramid_graph();
  std::vector<const ScaleGraph*> scales;
  if (scale_name == "all")
    scales = {&pyramid.joints, &pyramid.limbs, &pyramid.bodyparts};
  else if (scale_name == "joints")
    scales = {&pyramid.joints};
  else if (scale_name == "limbs")
    scales = {&pyramid.limbs};
  else if (scale_name == "bodyparts")
    scales = {&pyramid.bodyparts};
  else
    throw ConfigError("unknown scale: " + scale_name);

  std::string csv = "scale,strategy,k\n";
  for (const ScaleGraph* sg : scales) {
    auto labeling = partition_neighbors(*sg, cfg.partition, &sg->canonical_coords);
    auto na = normalized_adjacency(*sg, labeling, cfg.self_loops);
    for (std::size_t k = 0; k < na.subsets.size(); ++k) {
      csv += to_string(sg->scale) + "," + to_string(cfg.partition) + "," + std::to_string(k) + "\n";
      for (std::int64_t i = 0; i < sg->node_count; ++i) {
        for (std::int64_t j = 0; j < sg->node_count; ++j) {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.9f",
                        na.subsets[k][static_cast<std::size_t>(i * sg->node_count + j)]);
          csv += buf;
          csv += j + 1 == sg->node_count ? "\n" : ",";
        }
      }
    }
  }
  write_text(out, csv);
  return 0;
}

int cmd_export(const CommonOpts& common, const std::string& data_dir,
               const std::string& checkpoint, const std::string& mode_name,
               const std::string& subset_name, const std::string& out) {
  CliConfig cfg = resolve(common);
  auto data = open_dataset(data_dir);
  const EvalMode mode = eval_mode_from_string(mode_name);

  const auto all_ids = data.identities();
  const std::int64_t train = cfg.effective_train_ids(static_cast<std::int64_t>(all_ids.size()));
  std::vector<const SequenceEntry*> subset;
  for (const auto& e : data.entries) {
    bool is_train = false;
    for (std::int64_t i = 0; i < train; ++i)
      is_train = is_train || e.identity == all_ids[static_cast<std::size_t>(i)];
    if (subset_name == "train" && !is_train) continue;
    if (subset_name == "test" && is_train) continue;
    subset.push_back(&e);
  }
  auto set = extract_embeddings(data, subset, cfg, mode, checkpoint);

  std::string csv = "identity,condition,seq,view,part";
  for (std::int64_t d = 0; d < set.dim; ++d) csv += ",v" + std::to_string(d);
  csv += "\n";
  for (const auto& item : set.items)
    for (std::int64_t p = 0; p < set.parts; ++p) {
      csv += std::to_string(item.identity) + "," + to_string(item.condition) + "," +
             std::to_string(item.seq) + "," + std::to_string(item.view) + "," + std::to_string(p);
      for (std::int64_t d = 0; d < set.dim; ++d) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.12g",
                      item.feat[static_cast<std::size_t>(p * set.dim + d)]);
        csv += ",";
        csv += buf;
      }
      csv += "\n";
    }
  write_text(out, csv);
  return 0;
}

int cmd_gradcheck(const CommonOpts& common) {
  CliConfig cfg = resolve(common);
  (void)cfg;
  Rng rng(1234);
  auto rand_t = [&](Shape shape, double lo = -1.0, double hi = 1.0) {
    auto t = make_tensor(std::move(shape));
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
  };

  struct Entry {
    std::string name;
    double err;
  };
  std::vector<Entry> results;
  auto run = [&](const std::string& name, const ScalarFn& fn,
                 const std::vector<TensorPtr>& inputs) {
    results.push_back({name, grad_check(fn, inputs)});
  };

  run("matmul",
      [](Tape* t, const std::vector<TensorPtr>& in) { return sum_all(t, matmul(t, in[0], in[1])); },
      {rand_t({3, 4}), rand_t({4, 2})});
  run("conv2d",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = conv2d(t, in[0], in[1], 1, 1);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({2, 2, 4, 4}), rand_t({3, 2, 3, 3})});
  run("conv1d_time",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = conv1d_time(t, in[0], in[1]);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({5, 3}), rand_t({3, 3})});
  run("temporal_conv",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = temporal_conv(t, in[0], in[1]);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({2, 4, 3, 2}), rand_t({3, 3})});
  run("node_matmul",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = node_matmul(t, in[1], in[0]);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({2, 3, 3, 2}), rand_t({3, 3})});
  run("batch_norm_train",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        BatchNormState st;
        auto y = batch_norm(t, in[0], in[1], in[2], st, Mode::train, 1e-5);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({4, 3}), rand_t({3}, 0.5, 1.5), rand_t({3})});
  run("batch_norm_eval",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        BatchNormState st;
        st.running_mean = {0.1, -0.2, 0.3};
        st.running_var = {1.2, 0.8, 1.0};
        auto y = batch_norm(t, in[0], in[1], in[2], st, Mode::eval, 1e-5);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({4, 3}), rand_t({3}, 0.5, 1.5), rand_t({3})});
  run("relu_mul",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        return sum_all(t, mul(t, relu(t, in[0]), in[0]));
      },
      {rand_t({4, 4})});
  run("pool_max",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = pool(t, in[0], 1, PoolKind::max);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({3, 4, 2})});
  run("pool_mean",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = pool(t, in[0], 1, PoolKind::mean);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({3, 4, 2})});
  run("maxpool2x2",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = maxpool2x2(t, in[0]);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({1, 2, 4, 4})});
  run("split_pool_parts",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = split_pool_parts(t, in[0], 2);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({1, 2, 4, 4})});
  run("concat",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto y = concat(t, in[0], in[1]);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({2, 3}), rand_t({2, 2})});
  run("softmax_cross_entropy",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        return softmax_cross_entropy(t, in[0], {1, 0, 2});
      },
      {rand_t({3, 3})});
  run("batch_all_triplet",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        return batch_all_triplet(t, in[0], {0, 0, 1, 1}, 0.2);
      },
      {rand_t({4, 3})});
  run("dropout_train",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        Rng local(5);
        auto y = dropout(t, in[0], 0.4, Mode::train, local);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({6})});
  run("edge_importance_path",
      [](Tape* t, const std::vector<TensorPtr>& in) {
        auto base = make_tensor({3, 3}, {1, 1, 0, 1, 1, 1, 0, 1, 1});
        auto y = graph_spatial_aggregate(t, {base}, {in[0]}, {in[1]}, in[2]);
        return sum_all(t, mul(t, y, y));
      },
      {rand_t({3, 3}, 0.5, 1.5), rand_t({2, 2}), rand_t({1, 2, 3, 2})});

  // two-block miniature of the skeleton network, eval-mode normalization
  {
    MsggConfig mini;
    mini.channels = {2, 2, 2};
    mini.temporal_kernel = 3;
    mini.blocks = 2;
    mini.num_classes = 2;
    Rng init(9);
    MsggModel model(mini, init);
    std::vector<TensorPtr> inputs;
    for (auto& p : model.trainable_params()) {
      for (auto& v : p.tensor->data) v += rng.uniform(-0.05, 0.05);
      inputs.push_back(p.tensor);
    }
    auto kp = rand_t({2, 4, 12, 3});
    run("msgg_two_block",
        [&](Tape* t, const std::vector<TensorPtr>&) {
          auto out = model.forward(t, kp, Mode::eval);
          TensorPtr loss;
          for (auto& e : out.branch_embeddings) {
            auto term = sum_all(t, mul(t, e, e));
            loss = loss ? add(t, loss, term) : term;
          }
          loss = add(t, loss, sum_all(t, mul(t, out.logits, out.logits)));
          return mul_scalar(t, loss, 1e-3);
        },
        inputs);
  }

  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.err <= 1e-4;
    ok = ok && pass;
    std::printf("%-24s %11.3e  %s\n", r.name.c_str(), r.err, pass ? "PASS" : "FAIL");
  }
  std::printf("gradient suite: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale bimodal gait recognition: skeleton graph network, "
               "part-based silhouette encoder, fusion, training, and retrieval evaluation"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string out_dir, data_dir, checkpoint, msgg_ckpt, sil_ckpt, log_path;
  std::string mode_name = "bifusion", probe = "all", scale_name = "all", subset_name = "test";
  std::string out_path;

  auto* gen = app.add_subcommand("gen", "synthesize a gait dataset" + config_key_help());
  add_common(gen, common);
  gen->add_option("--out", out_dir, "dataset root directory")->required();

  auto* pm = app.add_subcommand("pretrain-msgg",
                                "pretrain the skeleton network" + config_key_help());
  add_common(pm, common);
  pm->add_option("--data", data_dir, "dataset root")->required();
  pm->add_option("--out", checkpoint, "output checkpoint")->required();
  pm->add_option("--log", log_path, "training telemetry CSV");

  auto* ps = app.add_subcommand("pretrain-sil",
                                "pretrain the silhouette network" + config_key_help());
  add_common(ps, common);
  ps->add_option("--data", data_dir, "dataset root")->required();
  ps->add_option("--out", checkpoint, "output checkpoint")->required();
  ps->add_option("--log", log_path, "training telemetry CSV");

  auto* tr = app.add_subcommand("train", "global bimodal training" + config_key_help());
  add_common(tr, common);
  tr->add_option("--data", data_dir, "dataset root")->required();
  tr->add_option("--msgg", msgg_ckpt, "pretrained skeleton checkpoint")->required();
  tr->add_option("--sil", sil_ckpt, "pretrained silhouette checkpoint")->required();
  tr->add_option("--out", checkpoint, "output checkpoint")->required();
  tr->add_option("--log", log_path, "training telemetry CSV");

  auto* ev = app.add_subcommand("eval", "gallery/probe rank-k tables" + config_key_help());
  add_common(ev, common);
  ev->add_option("--data", data_dir, "dataset root")->required();
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--mode", mode_name, "bifusion|msgg_only|msgg_raw|silhouette_only");
  ev->add_option("--probe", probe, "NM|BG|CL|all");
  ev->add_option("--out", out_path, "report CSV path (default: stdout)");

  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference check of every kernel" + config_key_help());
  add_common(gc, common);

  auto* ig = app.add_subcommand("inspect-graph",
                                "dump normalized adjacency subsets as CSV" + config_key_help());
  add_common(ig, common);
  ig->add_option("--scale", scale_name, "joints|limbs|bodyparts|all");
  ig->add_option("--out", out_path, "CSV path (default: stdout)");

  auto* ex = app.add_subcommand("export-embeddings",
                                "write per-sequence embeddings as CSV" + config_key_help());
  add_common(ex, common);
  ex->add_option("--data", data_dir, "dataset root")->required();
  ex->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ex->add_option("--mode", mode_name, "bifusion|msgg_only|msgg_raw|silhouette_only");
  ex->add_option("--subset", subset_name, "train|test|all");
  ex->add_option("--out", out_path, "CSV path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(common, out_dir);
    if (pm->parsed()) return cmd_pretrain_msgg(common, data_dir, checkpoint, log_path);
    if (ps->parsed()) return cmd_pretrain_sil(common, data_dir, checkpoint, log_path);
    if (tr->parsed()) return cmd_train(common, data_dir, msgg_ckpt, sil_ckpt, checkpoint, log_path);
    if (ev->parsed()) return cmd_eval(common, data_dir, checkpoint, mode_name, probe, out_path);
    if (gc->parsed()) return cmd_gradcheck(common);
    if (ig->parsed()) return cmd_inspect_graph(common, scale_name, out_path);
    if (ex->parsed())
      return cmd_export(common, data_dir, checkpoint, mode_name, subset_name, out_path);
  } catch (const DimensionError& e) {
    std::cerr << "error: dimension: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const SamplingError& e) {
    std::cerr << "error: sampling: " << e.what() << "\n";
    return 2;
  } catch (const InputLengthError& e) {
    std::cerr << "error: input-length: " << e.what() << "\n";
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "error: load: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 2;
  } catch (const ProtocolError& e) {
    std::cerr << "error: protocol: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
