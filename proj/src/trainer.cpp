#include "bifusion/trainer.hpp"

#include <chrono>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "bifusion/checkpoint.hpp"
#include "bifusion/optimizer.hpp"

namespace bifusion {

namespace {

struct LoadedBatch {
  std::vector<std::int64_t> labels;
  TensorPtr kp;                       // [B,T,12,3]
  std::vector<TensorPtr> sil_frames;  // per sequence [T,1,64,64]
};

LoadedBatch load_batch(const DatasetIndex& data, const std::vector<BatchItem>& items,
                       std::int64_t t, bool with_kp, bool with_sil, bool normalize) {
  const std::int64_t b = static_cast<std::int64_t>(items.size());
  LoadedBatch out;
  if (with_kp) out.kp = make_tensor({b, t, 12, 3});
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& item = items[static_cast<std::size_t>(i)];
    out.labels.push_back(item.label);
    const auto frames = window_frames(item.entry->frames, item.start, t);
    if (with_kp) {
      auto kpm = normalize_keypoints(data.load_kpm(*item.entry), normalize);
      for (std::int64_t f = 0; f < t; ++f)
        std::memcpy(out.kp->data.data() + ((i * t + f) * 12) * 3,
                    kpm.data.data() + (frames[static_cast<std::size_t>(f)] * 12) * 3,
                    12 * 3 * sizeof(double));
    }
    if (with_sil) {
      const auto sil = data.load_sil(*item.entry);
      auto ft = make_tensor({t, 1, 64, 64});
      for (std::int64_t f = 0; f < t; ++f) {
        const std::uint8_t* src =
            sil.frames.data() + frames[static_cast<std::size_t>(f)] * 64 * 64;
        double* dst = ft->data.data() + f * 64 * 64;
        for (std::int64_t px = 0; px < 64 * 64; ++px) dst[px] = src[px] ? 1.0 : 0.0;
      }
      out.sil_frames.push_back(ft);
    }
  }
  return out;
}

class TrainLog {
 public:
  TrainLog(const std::string& path, bool deterministic) {
    if (path.empty()) return;
    os_.open(path, std::ios::trunc);
    if (!os_) throw IoError("cannot open training log: " + path);
    if (!deterministic) {
      const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      os_ << "# started " << now << "\n";
    }
    os_ << "iteration,loss_total,loss_sil_tp,loss_ske_tp,loss_ske_ce,lr_group0,lr_group1\n";
  }

  void row(std::int64_t iter, double total, double sil_tp, double ske_tp, double ske_ce,
           double lr0, double lr1) {
    if (!os_.is_open()) return;
    os_ << iter << "," << std::setprecision(12) << total << "," << sil_tp << "," << ske_tp << ","
        << ske_ce << "," << lr0 << "," << lr1 << "\n";
  }

 private:
  std::ofstream os_;
};

void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& p : params) {
    p.tensor->ensure_grad();
    p.tensor->zero_grad();
  }
}

std::vector<TensorPtr> per_part(Tape* tape, const TensorPtr& parts3) {
  std::vector<TensorPtr> out;
  for (std::int64_t p = 0; p < parts3->shape[1]; ++p) out.push_back(take_node(tape, parts3, p));
  return out;
}

double scalar_of(const TensorPtr& t) { return t ? t->data[0] : 0.0; }

void run_chunked(std::int64_t n, std::int64_t threads, const std::function<void(std::int64_t)>& fn) {
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

std::vector<std::int64_t> training_identities(const DatasetIndex& data, const CliConfig& cfg) {
  auto ids = data.identities();
  ids.resize(static_cast<std::size_t>(
      cfg.effective_train_ids(static_cast<std::int64_t>(ids.size()))));
  return ids;
}

EncodedBatch encode_frames_parallel(SilhouetteModel& model, const std::vector<TensorPtr>& frames,
                                    std::int64_t t, std::int64_t threads) {
  const std::int64_t b = static_cast<std::int64_t>(frames.size());
  const std::int64_t parts = model.config().parts;
  const std::int64_t dim = SilhouetteEncoderConfig::kFeatureDim;

  auto shadows = std::make_shared<std::vector<SilhouetteModel>>();
  shadows->reserve(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) shadows->push_back(model.clone_detached());
  auto tapes = std::make_shared<std::vector<Tape>>(static_cast<std::size_t>(b));
  auto outs = std::make_shared<std::vector<TensorPtr>>(static_cast<std::size_t>(b));

  run_chunked(b, threads, [&](std::int64_t i) {
    (*outs)[static_cast<std::size_t>(i)] =
        (*shadows)[static_cast<std::size_t>(i)].frame_parts(
            &(*tapes)[static_cast<std::size_t>(i)], frames[static_cast<std::size_t>(i)], 1, t);
  });

  EncodedBatch enc;
  enc.leaf = make_tensor({b, t, parts, dim}, true);
  const std::int64_t stride = t * parts * dim;
  for (std::int64_t i = 0; i < b; ++i)
    std::memcpy(enc.leaf->data.data() + i * stride,
                (*outs)[static_cast<std::size_t>(i)]->data.data(),
                static_cast<std::size_t>(stride) * sizeof(double));

  auto leaf = enc.leaf;
  auto real_params = model.trainable_params();
  enc.backward = [shadows, tapes, outs, leaf, real_params, b, stride, threads] {
    run_chunked(b, threads, [&](std::int64_t i) {
      auto& out = (*outs)[static_cast<std::size_t>(i)];
      out->ensure_grad();
      std::memcpy(out->grad.data(), leaf->grad.data() + i * stride,
                  static_cast<std::size_t>(stride) * sizeof(double));
      (*tapes)[static_cast<std::size_t>(i)].backward_seeded();
    });
    // fixed sequence order keeps the reduction bit-identical for any thread count
    for (std::int64_t i = 0; i < b; ++i) {
      auto shadow_params = (*shadows)[static_cast<std::size_t>(i)].trainable_params();
      for (std::size_t p = 0; p < real_params.size(); ++p) {
        auto& dst = real_params[p].tensor->grad;
        const auto& src = shadow_params[p].tensor->grad;
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  };
  return enc;
}

TrainStats train_msgg_pretrain(const DatasetIndex& data, const CliConfig& cfg,
                               const std::string& out_checkpoint, const std::string& log_path,
                               const TrainHooks& hooks) {
  const auto train_ids = training_identities(data, cfg);
  Rng init_rng(cfg.seed, 1);
  MsggModel model(MsggConfig::from_cli(cfg, static_cast<std::int64_t>(train_ids.size())),
                  init_rng);
  auto params = model.trainable_params();
  Sgd sgd(cfg.momentum, cfg.weight_decay);
  const LrSchedule sched{cfg.pretrain_lr, cfg.pretrain_milestone_every, cfg.pretrain_milestones};
  Rng sample_rng(cfg.seed, 2);
  const BatchSpec spec{cfg.batch_p, cfg.batch_k, cfg.batch_t};
  const auto fixed =
      hooks.fixed_batch ? sample_batch(data, train_ids, spec, sample_rng) : std::vector<BatchItem>{};
  TrainLog log(log_path, cfg.deterministic);

  TrainStats stats;
  for (std::int64_t iter = 0; iter < cfg.pretrain_iters; ++iter) {
    const auto items = hooks.fixed_batch ? fixed : sample_batch(data, train_ids, spec, sample_rng);
    const auto batch = load_batch(data, items, spec.t, true, false, cfg.normalize_input);
    zero_grads(params);
    Tape tape;
    auto out = model.forward(&tape, batch.kp, Mode::train);
    auto loss = msgg_pretrain_loss_parts(&tape, out, batch.labels, cfg.margin, cfg.loss_weights);
    tape.backward(loss.total);
    const double lr = sched.at(iter);
    sgd.step(params, std::vector<double>(params.size(), lr));

    const double total = scalar_of(loss.total);
    log.row(iter, total, 0.0, scalar_of(loss.deep_tp), scalar_of(loss.ce), lr, lr);
    stats.iterations = iter + 1;
    stats.final_loss = total;
    if (hooks.stop_below > 0.0 && total < hooks.stop_below) {
      if (stats.first_below < 0) stats.first_below = iter + 1;
      break;
    }
  }
  save_checkpoint(out_checkpoint, "MSGG", model.state_items());
  return stats;
}

TrainStats train_sil_pretrain(const DatasetIndex& data, const CliConfig& cfg,
                              const std::string& out_checkpoint, const std::string& log_path,
                              const TrainHooks& hooks) {
  const auto train_ids = training_identities(data, cfg);
  Rng init_rng(cfg.seed, 11);
  SilhouetteModel model(SilhouetteEncoderConfig{cfg.parts, cfg.micro_window}, init_rng);
  auto params = model.trainable_params();
  Sgd sgd(cfg.momentum, cfg.weight_decay);
  const LrSchedule sched{cfg.pretrain_lr, cfg.pretrain_milestone_every, cfg.pretrain_milestones};
  Rng sample_rng(cfg.seed, 12);
  const BatchSpec spec{cfg.batch_p, cfg.batch_k, cfg.batch_t};
  const auto fixed =
      hooks.fixed_batch ? sample_batch(data, train_ids, spec, sample_rng) : std::vector<BatchItem>{};
  TrainLog log(log_path, cfg.deterministic);

  TrainStats stats;
  for (std::int64_t iter = 0; iter < cfg.pretrain_iters; ++iter) {
    const auto items = hooks.fixed_batch ? fixed : sample_batch(data, train_ids, spec, sample_rng);
    const auto batch = load_batch(data, items, spec.t, false, true, false);
    zero_grads(params);
    auto encoded = encode_frames_parallel(model, batch.sil_frames, spec.t, cfg.threads);
    Tape tape;
    auto parts3 = model.aggregate_parts(&tape, encoded.leaf);
    auto features = per_part(&tape, parts3);
    TensorPtr sum;
    for (const auto& f : features) {
      auto term = batch_all_triplet(&tape, f, batch.labels, cfg.margin);
      sum = sum ? add(&tape, sum, term) : term;
    }
    auto loss = mul_scalar(&tape, sum, 1.0 / static_cast<double>(features.size()));
    tape.backward(loss);
    encoded.backward();
    const double lr = sched.at(iter);
    sgd.step(params, std::vector<double>(params.size(), lr));

    const double total = scalar_of(loss);
    log.row(iter, total, total, 0.0, 0.0, lr, lr);
    stats.iterations = iter + 1;
    stats.final_loss = total;
    if (hooks.stop_below > 0.0 && total < hooks.stop_below) {
      if (stats.first_below < 0) stats.first_below = iter + 1;
      break;
    }
  }
  save_checkpoint(out_checkpoint, "SILP", model.state_items());
  return stats;
}

TrainStats train_global(const DatasetIndex& data, const CliConfig& cfg,
                        const std::string& msgg_checkpoint, const std::string& sil_checkpoint,
                        const std::string& out_checkpoint, const std::string& log_path,
                        const TrainHooks& hooks) {
  const auto train_ids = training_identities(data, cfg);
  Rng init_rng(cfg.seed, 21);
  BiFusionModel model(cfg, static_cast<std::int64_t>(train_ids.size()), init_rng);
  load_checkpoint(msgg_checkpoint, "MSGG", model.msgg.state_items());
  load_checkpoint(sil_checkpoint, "SILP", model.sil.state_items());

  // group 0: pretrained backbones; group 1: fusion, compact, and heads
  std::vector<ParamRef> params;
  std::vector<int> group;
  for (auto& p : model.msgg.trainable_params()) {
    params.push_back(p);
    group.push_back(p.name.rfind("head.", 0) == 0 ? 1 : 0);
  }
  for (auto& p : model.sil.trainable_params()) {
    params.push_back(p);
    group.push_back(0);
  }
  for (auto& p : model.compact.trainable_params()) {
    params.push_back(p);
    group.push_back(1);
  }
  for (auto& p : model.fuse.trainable_params()) {
    params.push_back(p);
    group.push_back(1);
  }

  Sgd sgd(cfg.momentum, cfg.weight_decay);
  const LrSchedule sched0{cfg.global_lr_pretrained, cfg.global_milestone_every,
                          cfg.global_milestones};
  const LrSchedule sched1{cfg.global_lr_new, cfg.global_milestone_every, cfg.global_milestones};
  Rng sample_rng(cfg.seed, 22);
  Rng dropout_rng(cfg.seed, 23);
  const BatchSpec spec{cfg.batch_p, cfg.batch_k, cfg.batch_t};
  const auto fixed =
      hooks.fixed_batch ? sample_batch(data, train_ids, spec, sample_rng) : std::vector<BatchItem>{};
  TrainLog log(log_path, cfg.deterministic);

  TrainStats stats;
  for (std::int64_t iter = 0; iter < cfg.global_iters; ++iter) {
    const auto items = hooks.fixed_batch ? fixed : sample_batch(data, train_ids, spec, sample_rng);
    const auto batch = load_batch(data, items, spec.t, true, true, cfg.normalize_input);
    zero_grads(params);
    auto encoded = encode_frames_parallel(model.sil, batch.sil_frames, spec.t, cfg.threads);
    Tape tape;
    auto parts3 = model.sil.aggregate_parts(&tape, encoded.leaf);
    auto msgg_out = model.msgg.forward(&tape, batch.kp, Mode::train);
    auto deep = msgg_out.branch_embeddings.back();
    auto compact = model.compact.forward(&tape, deep, Mode::train, dropout_rng);
    auto fused = model.fuse.forward(&tape, parts3, compact);
    const auto features = cfg.sil_tp_source == "fused" ? fused : per_part(&tape, parts3);
    auto loss = global_loss(&tape, features, deep, msgg_out.logits, batch.labels, cfg.margin);
    tape.backward(loss.total);
    encoded.backward();

    const double lr0 = sched0.at(iter), lr1 = sched1.at(iter);
    std::vector<double> lrs(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) lrs[i] = group[i] == 0 ? lr0 : lr1;
    sgd.step(params, lrs);

    const double total = scalar_of(loss.total);
    log.row(iter, total, scalar_of(loss.sil_tp), scalar_of(loss.ske_tp), scalar_of(loss.ske_ce),
            lr0, lr1);
    stats.iterations = iter + 1;
    stats.final_loss = total;
    if (hooks.stop_below > 0.0 && total < hooks.stop_below) {
      if (stats.first_below < 0) stats.first_below = iter + 1;
      break;
    }
  }
  save_checkpoint(out_checkpoint, "BIFU", model.state_items());
  return stats;
}

}  // namespace bifusion
