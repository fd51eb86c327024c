#include "bifusion/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace bifusion {

std::string to_string(PyramidKind p) {
  switch (p) {
    case PyramidKind::full: return "full";
    case PyramidKind::joints_limbs: return "joints_limbs";
    case PyramidKind::joints: return "joints";
    case PyramidKind::joints3: return "joints3";
  }
  return "?";
}

PyramidKind pyramid_from_string(const std::string& name) {
  if (name == "full") return PyramidKind::full;
  if (name == "joints_limbs") return PyramidKind::joints_limbs;
  if (name == "joints") return PyramidKind::joints;
  if (name == "joints3") return PyramidKind::joints3;
  throw ConfigError("unknown pyramid structure: " + name);
}

namespace {

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key " + key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key " + key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("key " + key + ": expected true/false, got '" + v + "'");
}

template <typename T, std::size_t N>
std::array<T, N> parse_tuple(const std::string& key, const std::string& v,
                             T (*one)(const std::string&, const std::string&)) {
  std::array<T, N> out{};
  std::stringstream ss(v);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= N) throw ConfigError("key " + key + ": expected " + std::to_string(N) + " values");
    out[i++] = one(key, item);
  }
  if (i != N) throw ConfigError("key " + key + ": expected " + std::to_string(N) + " values");
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

const std::vector<ConfigKeyDoc>& config_key_docs() {
  static const std::vector<ConfigKeyDoc> docs = {
      {"ids", "number of synthetic identities to generate"},
      {"frames", "frames per generated sequence"},
      {"train_ids", "identities used for training (0 = first 60%)"},
      {"seed", "master seed for generation, init, and sampling"},
      {"channels", "block channels as c1,c2,c3 for blocks (1,2),(3,4),(5,6)"},
      {"temporal_kernel", "temporal aggregation window (odd)"},
      {"partition", "neighbor partition: uniform|distance|spatial|gait_temporal"},
      {"semp", "enable cross-scale semantic pooling"},
      {"pyramid", "branch layout: full|joints_limbs|joints|joints3"},
      {"self_loops", "identity added to: all|subset0 partition subsets"},
      {"normalize_input", "mid-hip center and torso-length scale keypoints"},
      {"parts", "horizontal parts in the silhouette encoder"},
      {"micro_window", "micro-motion temporal window (odd)"},
      {"compact_dim", "compact block output dimension"},
      {"compact_dropout", "compact block dropout rate"},
      {"fused_dim", "fused per-part feature dimension"},
      {"margin", "triplet loss margin"},
      {"loss_weights", "pretraining branch triplet weights, shallow to deep"},
      {"momentum", "SGD momentum"},
      {"weight_decay", "SGD weight decay (BN and edge-importance exempt)"},
      {"sil_tp_source", "global silhouette triplet taps: fused|raw part features"},
      {"batch_p", "identities per batch"},
      {"batch_k", "sequences per identity per batch"},
      {"batch_t", "frames per sequence per batch"},
      {"pretrain_lr", "pretraining learning rate"},
      {"pretrain_iters", "pretraining iterations"},
      {"pretrain_milestone_every", "pretraining lr decay spacing in iterations"},
      {"pretrain_milestones", "number of x0.1 pretraining decays"},
      {"global_lr_pretrained", "global-training lr for pretrained modules"},
      {"global_lr_new", "global-training lr for fusion/compact/heads"},
      {"global_iters", "global training iterations"},
      {"global_milestone_every", "global lr decay spacing in iterations"},
      {"global_milestones", "number of x0.1 global decays"},
      {"rank_k", "retrieval rank for evaluation"},
      {"threads", "worker threads for generation/extraction"},
      {"deterministic", "omit timestamps so reruns are byte-identical"},
  };
  return docs;
}

void apply_config_kv(CliConfig& c, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "ids") c.ids = parse_int(key, v);
  else if (key == "frames") c.frames = parse_int(key, v);
  else if (key == "train_ids") c.train_ids = parse_int(key, v);
  else if (key == "seed") c.seed = parse_u64(key, v);
  else if (key == "channels") c.channels = parse_tuple<std::int64_t, 3>(key, v, parse_int);
  else if (key == "temporal_kernel") c.temporal_kernel = parse_int(key, v);
  else if (key == "partition") c.partition = partition_from_string(v);
  else if (key == "semp") c.semp = parse_bool(key, v);
  else if (key == "pyramid") c.pyramid = pyramid_from_string(v);
  else if (key == "self_loops") {
    if (v == "all") c.self_loops = SelfLoopMode::all_subsets;
    else if (v == "subset0") c.self_loops = SelfLoopMode::subset0;
    else throw ConfigError("key self_loops: expected all|subset0, got '" + v + "'");
  }
  else if (key == "normalize_input") c.normalize_input = parse_bool(key, v);
  else if (key == "parts") c.parts = parse_int(key, v);
  else if (key == "micro_window") c.micro_window = parse_int(key, v);
  else if (key == "compact_dim") c.compact_dim = parse_int(key, v);
  else if (key == "compact_dropout") c.compact_dropout = parse_double(key, v);
  else if (key == "fused_dim") c.fused_dim = parse_int(key, v);
  else if (key == "margin") c.margin = parse_double(key, v);
  else if (key == "loss_weights") c.loss_weights = parse_tuple<double, 3>(key, v, parse_double);
  else if (key == "momentum") c.momentum = parse_double(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
  else if (key == "sil_tp_source") {
    if (v != "fused" && v != "raw")
      throw ConfigError("key sil_tp_source: expected fused|raw, got '" + v + "'");
    c.sil_tp_source = v;
  }
  else if (key == "batch_p") c.batch_p = parse_int(key, v);
  else if (key == "batch_k") c.batch_k = parse_int(key, v);
  else if (key == "batch_t") c.batch_t = parse_int(key, v);
  else if (key == "pretrain_lr") c.pretrain_lr = parse_double(key, v);
  else if (key == "pretrain_iters") c.pretrain_iters = parse_int(key, v);
  else if (key == "pretrain_milestone_every") c.pretrain_milestone_every = parse_int(key, v);
  else if (key == "pretrain_milestones") c.pretrain_milestones = parse_int(key, v);
  else if (key == "global_lr_pretrained") c.global_lr_pretrained = parse_double(key, v);
  else if (key == "global_lr_new") c.global_lr_new = parse_double(key, v);
  else if (key == "global_iters") c.global_iters = parse_int(key, v);
  else if (key == "global_milestone_every") c.global_milestone_every = parse_int(key, v);
  else if (key == "global_milestones") c.global_milestones = parse_int(key, v);
  else if (key == "rank_k") c.rank_k = parse_int(key, v);
  else if (key == "threads") c.threads = parse_int(key, v);
  else if (key == "deterministic") c.deterministic = parse_bool(key, v);
  else throw ConfigError("unknown config key: " + key);
}

void load_config_file(CliConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(13);
  os << v;
  return os.str();
}

}  // namespace

std::string dump_config(const CliConfig& c) {
  std::ostringstream os;
  os << "ids = " << c.ids << "\n";
  os << "frames = " << c.frames << "\n";
  os << "train_ids = " << c.train_ids << "\n";
  os << "seed = " << c.seed << "\n";
  os << "channels = " << c.channels[0] << "," << c.channels[1] << "," << c.channels[2] << "\n";
  os << "temporal_kernel = " << c.temporal_kernel << "\n";
  os << "partition = " << to_string(c.partition) << "\n";
  os << "semp = " << (c.semp ? "true" : "false") << "\n";
  os << "pyramid = " << to_string(c.pyramid) << "\n";
  os << "self_loops = " << (c.self_loops == SelfLoopMode::all_subsets ? "all" : "subset0") << "\n";
  os << "normalize_input = " << (c.normalize_input ? "true" : "false") << "\n";
  os << "parts = " << c.parts << "\n";
  os << "micro_window = " << c.micro_window << "\n";
  os << "compact_dim = " << c.compact_dim << "\n";
  os << "compact_dropout = " << fmt_double(c.compact_dropout) << "\n";
  os << "fused_dim = " << c.fused_dim << "\n";
  os << "margin = " << fmt_double(c.margin) << "\n";
  os << "loss_weights = " << fmt_double(c.loss_weights[0]) << "," << fmt_double(c.loss_weights[1])
     << "," << fmt_double(c.loss_weights[2]) << "\n";
  os << "momentum = " << fmt_double(c.momentum) << "\n";
  os << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
  os << "sil_tp_source = " << c.sil_tp_source << "\n";
  os << "batch_p = " << c.batch_p << "\n";
  os << "batch_k = " << c.batch_k << "\n";
  os << "batch_t = " << c.batch_t << "\n";
  os << "pretrain_lr = " << fmt_double(c.pretrain_lr) << "\n";
  os << "pretrain_iters = " << c.pretrain_iters << "\n";
  os << "pretrain_milestone_every = " << c.pretrain_milestone_every << "\n";
  os << "pretrain_milestones = " << c.pretrain_milestones << "\n";
  os << "global_lr_pretrained = " << fmt_double(c.global_lr_pretrained) << "\n";
  os << "global_lr_new = " << fmt_double(c.global_lr_new) << "\n";
  os << "global_iters = " << c.global_iters << "\n";
  os << "global_milestone_every = " << c.global_milestone_every << "\n";
  os << "global_milestones = " << c.global_milestones << "\n";
  os << "rank_k = " << c.rank_k << "\n";
  os << "threads = " << c.threads << "\n";
  os << "deterministic = " << (c.deterministic ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace bifusion
