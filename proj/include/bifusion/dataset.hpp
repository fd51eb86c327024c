#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bifusion/tensor.hpp"

namespace bifusion {

enum class Condition { NM, BG, CL };
std::string to_string(Condition c);
Condition condition_from_string(const std::string& name);

// T x 12 x 3 keypoints (x, y, confidence), frame-major. Values are exact
// f32 so files round-trip bit-identically.
struct KeypointsMatrix {
  std::int64_t t = 0;
  std::vector<double> data;  // t * 12 * 3

  double& at(std::int64_t frame, std::int64_t joint, std::int64_t channel) {
    return data[(frame * 12 + joint) * 3 + channel];
  }
  double at(std::int64_t frame, std::int64_t joint, std::int64_t channel) const {
    return data[(frame * 12 + joint) * 3 + channel];
  }
};

// T binary 64x64 masks
struct SilhouetteSequence {
  std::int64_t t = 0;
  std::vector<std::uint8_t> frames;  // t * 64 * 64, values in {0,1}

  std::uint8_t& at(std::int64_t frame, std::int64_t row, std::int64_t col) {
    return frames[(frame * 64 + row) * 64 + col];
  }
  std::uint8_t at(std::int64_t frame, std::int64_t row, std::int64_t col) const {
    return frames[(frame * 64 + row) * 64 + col];
  }
};

// .kpm: magic "KPM1", u32 T, u32 J=12, u32 C=3, then T*J*C little-endian f32
void write_kpm(const std::string& path, const KeypointsMatrix& kp);
KeypointsMatrix read_kpm(const std::string& path);

// .sil: magic "SIL1", u32 T, u32 H=64, u32 W=64, then T*H*W bytes in {0,1}
void write_sil(const std::string& path, const SilhouetteSequence& sil);
SilhouetteSequence read_sil(const std::string& path);

struct SequenceEntry {
  std::int64_t identity = 0;
  Condition condition = Condition::NM;
  std::int64_t seq = 1;      // 1-based within the condition
  std::int64_t view = 0;     // degrees
  std::int64_t frames = 0;
  std::string dir;           // directory holding data.kpm / data.sil
};

// <root>/<id:03>/<cond>-<seq:02>/<view:03>/data.kpm|data.sil + manifest.csv
struct DatasetIndex {
  std::string root;
  std::vector<SequenceEntry> entries;

  std::vector<std::int64_t> identities() const;
  std::vector<const SequenceEntry*> of_identity(std::int64_t id) const;

  KeypointsMatrix load_kpm(const SequenceEntry& e) const;
  SilhouetteSequence load_sil(const SequenceEntry& e) const;

  static std::string entry_dir(const std::string& root, std::int64_t id, Condition cond,
                               std::int64_t seq, std::int64_t view);
};

void write_manifest(const DatasetIndex& index);
DatasetIndex open_dataset(const std::string& root);

// mid-hip centering and torso-length scaling per frame; identity when disabled
KeypointsMatrix normalize_keypoints(const KeypointsMatrix& kp, bool enabled);

// keypoints tensor [1, T, 12, 3] ready for the skeleton network
TensorPtr kpm_to_tensor(const KeypointsMatrix& kp);
// mask tensor [T, 1, 64, 64] with values {0.0, 1.0}
TensorPtr sil_to_tensor(const SilhouetteSequence& sil);

}  // namespace bifusion
