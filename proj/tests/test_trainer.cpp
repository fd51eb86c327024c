#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bifusion/eval.hpp"
#include "bifusion/synthetic.hpp"
#include "bifusion/trainer.hpp"

using namespace bifusion;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

const DatasetIndex& tiny_dataset() {
  static const DatasetIndex index = [] {
    GenSpec spec;
    spec.ids = 4;
    spec.frames = 12;
    spec.seed = 40;
    spec.threads = 2;
    return generate_dataset("/tmp/bifusion_test_train_data", spec);
  }();
  return index;
}

CliConfig tiny_train_config() {
  CliConfig cfg;
  cfg.ids = 4;
  cfg.train_ids = 2;
  cfg.frames = 12;
  cfg.seed = 7;
  cfg.channels = {4, 4, 8};
  cfg.temporal_kernel = 3;
  cfg.parts = 4;
  cfg.compact_dim = 6;
  cfg.fused_dim = 10;
  cfg.batch_p = 2;
  cfg.batch_k = 2;
  cfg.batch_t = 6;
  cfg.pretrain_iters = 3;
  cfg.pretrain_milestone_every = 2;
  cfg.pretrain_milestones = 1;
  cfg.global_iters = 2;
  cfg.deterministic = true;
  return cfg;
}

}  // namespace

TEST_CASE("parallel encoder equals the single-tape computation") {
  Rng init(3);
  SilhouetteModel model(SilhouetteEncoderConfig{4, 3}, init);
  Rng rng(4);
  std::vector<TensorPtr> frames;
  for (int s = 0; s < 3; ++s) {
    auto f = make_tensor({5, 1, 64, 64});
    for (auto& v : f->data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    frames.push_back(f);
  }

  // reference: one tape over the concatenated batch
  auto all = make_tensor({15, 1, 64, 64});
  for (int s = 0; s < 3; ++s)
    std::copy(frames[static_cast<std::size_t>(s)]->data.begin(),
              frames[static_cast<std::size_t>(s)]->data.end(),
              all->data.begin() + s * 5 * 64 * 64);
  for (auto& p : model.trainable_params()) {
    p.tensor->ensure_grad();
    p.tensor->zero_grad();
  }
  Tape ref_tape;
  auto ref_parts = model.frame_parts(&ref_tape, all, 3, 5);
  auto ref_loss = sum_all(&ref_tape, mul(&ref_tape, ref_parts, ref_parts));
  ref_tape.backward(ref_loss);
  std::vector<std::vector<double>> ref_grads;
  for (auto& p : model.trainable_params()) ref_grads.push_back(p.tensor->grad);

  std::vector<std::vector<std::vector<double>>> by_threads;
  for (std::int64_t threads : {1, 2, 3}) {
    for (auto& p : model.trainable_params()) p.tensor->zero_grad();
    auto enc = encode_frames_parallel(model, frames, 5, threads);
    for (std::int64_t i = 0; i < enc.leaf->numel(); ++i)
      CHECK(enc.leaf->data[i] == ref_parts->data[i]);
    Tape tape;
    auto loss = sum_all(&tape, mul(&tape, enc.leaf, enc.leaf));
    tape.backward(loss);
    enc.backward();
    std::vector<std::vector<double>> grads;
    for (auto& p : model.trainable_params()) grads.push_back(p.tensor->grad);
    by_threads.push_back(std::move(grads));
  }

  // the per-sequence path is bit-identical for every worker count
  CHECK(by_threads[1] == by_threads[0]);
  CHECK(by_threads[2] == by_threads[0]);

  // and matches the batched single-tape reference up to summation rounding
  for (std::size_t p = 0; p < ref_grads.size(); ++p) {
    REQUIRE(by_threads[0][p].size() == ref_grads[p].size());
    for (std::size_t i = 0; i < ref_grads[p].size(); ++i) {
      const double scale = std::max(1.0, std::abs(ref_grads[p][i]));
      CHECK(std::abs(by_threads[0][p][i] - ref_grads[p][i]) <= 1e-10 * scale);
    }
  }
}

TEST_CASE("training loops run, log, and reproduce bit-exactly") {
  const auto& data = tiny_dataset();
  auto cfg = tiny_train_config();
  const std::string dir = "/tmp/bifusion_test_train";
  fs::create_directories(dir);

  SUBCASE("msgg pretraining is deterministic in the seed") {
    auto s1 = train_msgg_pretrain(data, cfg, dir + "/m1.ckpt", dir + "/m1.csv");
    auto s2 = train_msgg_pretrain(data, cfg, dir + "/m2.ckpt", dir + "/m2.csv");
    CHECK(s1.iterations == 3);
    CHECK(s1.final_loss == s2.final_loss);
    CHECK(file_bytes(dir + "/m1.ckpt") == file_bytes(dir + "/m2.ckpt"));
    CHECK(file_bytes(dir + "/m1.csv") == file_bytes(dir + "/m2.csv"));
    CHECK(checkpoint_magic(dir + "/m1.ckpt") == "MSGG");

    std::ifstream log(dir + "/m1.csv");
    std::string header;
    std::getline(log, header);
    CHECK(header == "iteration,loss_total,loss_sil_tp,loss_ske_tp,loss_ske_ce,lr_group0,lr_group1");
  }

  SUBCASE("silhouette pretraining is invariant to the worker count") {
    cfg.pretrain_iters = 2;
    cfg.threads = 1;
    train_sil_pretrain(data, cfg, dir + "/s1.ckpt", dir + "/s1.csv");
    cfg.threads = 2;
    train_sil_pretrain(data, cfg, dir + "/s2.ckpt", dir + "/s2.csv");
    CHECK(file_bytes(dir + "/s1.ckpt") == file_bytes(dir + "/s2.ckpt"));
    CHECK(file_bytes(dir + "/s1.csv") == file_bytes(dir + "/s2.csv"));
    CHECK(checkpoint_magic(dir + "/s1.ckpt") == "SILP");
  }

  SUBCASE("global training consumes both checkpoints and is thread-invariant") {
    cfg.pretrain_iters = 2;
    train_msgg_pretrain(data, cfg, dir + "/gm.ckpt", "");
    train_sil_pretrain(data, cfg, dir + "/gs.ckpt", "");
    cfg.threads = 1;
    auto g1 = train_global(data, cfg, dir + "/gm.ckpt", dir + "/gs.ckpt", dir + "/g1.ckpt",
                           dir + "/g1.csv");
    cfg.threads = 2;
    auto g2 = train_global(data, cfg, dir + "/gm.ckpt", dir + "/gs.ckpt", dir + "/g2.ckpt",
                           dir + "/g2.csv");
    CHECK(g1.final_loss == g2.final_loss);
    CHECK(file_bytes(dir + "/g1.ckpt") == file_bytes(dir + "/g2.ckpt"));
    CHECK(checkpoint_magic(dir + "/g1.ckpt") == "BIFU");

    SUBCASE("every eval mode extracts the right embedding shapes") {
      std::vector<const SequenceEntry*> subset;
      for (const auto& e : data.entries)
        if (e.identity == 3 && e.view == 0) subset.push_back(&e);
      REQUIRE(!subset.empty());

      auto fused = extract_embeddings(data, subset, cfg, EvalMode::bifusion, dir + "/g1.ckpt");
      CHECK(fused.parts == cfg.parts);
      CHECK(fused.dim == cfg.fused_dim);
      auto compact = extract_embeddings(data, subset, cfg, EvalMode::msgg_only, dir + "/g1.ckpt");
      CHECK(compact.parts == 1);
      CHECK(compact.dim == cfg.compact_dim);
      auto raw = extract_embeddings(data, subset, cfg, EvalMode::msgg_raw, dir + "/gm.ckpt");
      CHECK(raw.dim == cfg.channels[2]);
      auto sil = extract_embeddings(data, subset, cfg, EvalMode::silhouette_only, dir + "/gs.ckpt");
      CHECK(sil.parts == cfg.parts);
      CHECK(sil.dim == 128);

      // identical items across worker counts
      cfg.threads = 1;
      auto fused1 = extract_embeddings(data, subset, cfg, EvalMode::bifusion, dir + "/g1.ckpt");
      for (std::size_t i = 0; i < fused.items.size(); ++i)
        CHECK(fused1.items[i].feat == fused.items[i].feat);

      // mode/checkpoint mismatches are load errors
      CHECK_THROWS_AS(extract_embeddings(data, subset, cfg, EvalMode::bifusion, dir + "/gs.ckpt"),
                      LoadError);
      CHECK_THROWS_AS(extract_embeddings(data, subset, cfg, EvalMode::msgg_only, dir + "/gm.ckpt"),
                      LoadError);
    }
  }
}
