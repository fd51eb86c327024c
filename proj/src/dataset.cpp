#include "bifusion/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace bifusion {

std::string to_string(Condition c) {
  switch (c) {
    case Condition::NM: return "NM";
    case Condition::BG: return "BG";
    case Condition::CL: return "CL";
  }
  return "?";
}

Condition condition_from_string(const std::string& name) {
  if (name == "NM" || name == "nm") return Condition::NM;
  if (name == "BG" || name == "bg") return Condition::BG;
  if (name == "CL" || name == "cl") return Condition::CL;
  throw ConfigError("unknown condition: " + name);
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f32(std::ostream& os, float v) {
  static_assert(std::endian::native == std::endian::little);
  os.write(reinterpret_cast<const char*>(&v), 4);
}

float get_f32(std::istream& is) {
  float v = 0.0f;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void write_kpm(const std::string& path, const KeypointsMatrix& kp) {
  if (static_cast<std::int64_t>(kp.data.size()) != kp.t * 12 * 3)
    throw IoError("keypoints matrix storage does not match T=" + std::to_string(kp.t));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("KPM1", 4);
  put_u32(os, static_cast<std::uint32_t>(kp.t));
  put_u32(os, 12);
  put_u32(os, 3);
  for (double v : kp.data) put_f32(os, static_cast<float>(v));
  if (!os) throw IoError("write failed: " + path);
}

KeypointsMatrix read_kpm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "KPM1") throw IoError("not a keypoints file: " + path);
  KeypointsMatrix kp;
  kp.t = get_u32(is);
  const std::uint32_t j = get_u32(is);
  const std::uint32_t c = get_u32(is);
  if (j != 12 || c != 3) throw IoError("unexpected keypoints layout in " + path);
  kp.data.resize(static_cast<std::size_t>(kp.t) * 12 * 3);
  for (auto& v : kp.data) v = static_cast<double>(get_f32(is));
  if (!is) throw IoError("truncated keypoints file: " + path);
  return kp;
}

void write_sil(const std::string& path, const SilhouetteSequence& sil) {
  if (static_cast<std::int64_t>(sil.frames.size()) != sil.t * 64 * 64)
    throw IoError("silhouette storage does not match T=" + std::to_string(sil.t));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("SIL1", 4);
  put_u32(os, static_cast<std::uint32_t>(sil.t));
  put_u32(os, 64);
  put_u32(os, 64);
  os.write(reinterpret_cast<const char*>(sil.frames.data()),
           static_cast<std::streamsize>(sil.frames.size()));
  if (!os) throw IoError("write failed: " + path);
}

SilhouetteSequence read_sil(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SIL1") throw IoError("not a silhouette file: " + path);
  SilhouetteSequence sil;
  sil.t = get_u32(is);
  const std::uint32_t h = get_u32(is);
  const std::uint32_t w = get_u32(is);
  if (h != 64 || w != 64) throw IoError("unexpected silhouette extents in " + path);
  sil.frames.resize(static_cast<std::size_t>(sil.t) * 64 * 64);
  is.read(reinterpret_cast<char*>(sil.frames.data()),
          static_cast<std::streamsize>(sil.frames.size()));
  if (!is) throw IoError("truncated silhouette file: " + path);
  return sil;
}

std::vector<std::int64_t> DatasetIndex::identities() const {
  std::vector<std::int64_t> ids;
  for (const auto& e : entries)
    if (std::find(ids.begin(), ids.end(), e.identity) == ids.end()) ids.push_back(e.identity);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<const SequenceEntry*> DatasetIndex::of_identity(std::int64_t id) const {
  std::vector<const SequenceEntry*> out;
  for (const auto& e : entries)
    if (e.identity == id) out.push_back(&e);
  return out;
}

KeypointsMatrix DatasetIndex::load_kpm(const SequenceEntry& e) const {
  return read_kpm(e.dir + "/data.kpm");
}

SilhouetteSequence DatasetIndex::load_sil(const SequenceEntry& e) const {
  return read_sil(e.dir + "/data.sil");
}

std::string DatasetIndex::entry_dir(const std::string& root, std::int64_t id, Condition cond,
                                    std::int64_t seq, std::int64_t view) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%03d/%s-%02d/%03d", static_cast<int>(id),
                to_string(cond).c_str(), static_cast<int>(seq), static_cast<int>(view));
  return root + "/" + buf;
}

void write_manifest(const DatasetIndex& index) {
  std::ofstream os(index.root + "/manifest.csv", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + index.root);
  os << "id,cond,seq,view,T\n";
  for (const auto& e : index.entries)
    os << e.identity << "," << to_string(e.condition) << "," << e.seq << "," << e.view << ","
       << e.frames << "\n";
}

DatasetIndex open_dataset(const std::string& root) {
  DatasetIndex index;
  index.root = root;
  std::ifstream is(root + "/manifest.csv");
  if (!is) throw IoError("no manifest.csv under " + root);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id_s, cond_s, seq_s, view_s, t_s;
    std::getline(ss, id_s, ',');
    std::getline(ss, cond_s, ',');
    std::getline(ss, seq_s, ',');
    std::getline(ss, view_s, ',');
    std::getline(ss, t_s, ',');
    SequenceEntry e;
    e.identity = std::stoll(id_s);
    e.condition = condition_from_string(cond_s);
    e.seq = std::stoll(seq_s);
    e.view = std::stoll(view_s);
    e.frames = std::stoll(t_s);
    e.dir = DatasetIndex::entry_dir(root, e.identity, e.condition, e.seq, e.view);
    if (!fs::exists(e.dir + "/data.kpm") || !fs::exists(e.dir + "/data.sil"))
      throw IoError("manifest entry without files: " + e.dir);
    index.entries.push_back(std::move(e));
  }
  return index;
}

KeypointsMatrix normalize_keypoints(const KeypointsMatrix& kp, bool enabled) {
  if (!enabled) return kp;
  KeypointsMatrix out = kp;
  for (std::int64_t f = 0; f < kp.t; ++f) {
    const double mid_x = (kp.at(f, 6, 0) + kp.at(f, 7, 0)) / 2.0;  // hips
    const double mid_y = (kp.at(f, 6, 1) + kp.at(f, 7, 1)) / 2.0;
    const double torso_l = std::hypot(kp.at(f, 0, 0) - kp.at(f, 6, 0),
                                      kp.at(f, 0, 1) - kp.at(f, 6, 1));
    const double torso_r = std::hypot(kp.at(f, 1, 0) - kp.at(f, 7, 0),
                                      kp.at(f, 1, 1) - kp.at(f, 7, 1));
    const double torso = (torso_l + torso_r) / 2.0;
    if (torso <= 1e-9)
      throw NormalizationError("zero torso length at frame " + std::to_string(f));
    for (std::int64_t jn = 0; jn < 12; ++jn) {
      out.at(f, jn, 0) = (kp.at(f, jn, 0) - mid_x) / torso;
      out.at(f, jn, 1) = (kp.at(f, jn, 1) - mid_y) / torso;
    }
  }
  return out;
}

TensorPtr kpm_to_tensor(const KeypointsMatrix& kp) {
  auto t = make_tensor({1, kp.t, 12, 3});
  t->data = kp.data;
  return t;
}

TensorPtr sil_to_tensor(const SilhouetteSequence& sil) {
  auto t = make_tensor({sil.t, 1, 64, 64});
  for (std::size_t i = 0; i < sil.frames.size(); ++i)
    t->data[i] = sil.frames[i] ? 1.0 : 0.0;
  return t;
}

}  // namespace bifusion
