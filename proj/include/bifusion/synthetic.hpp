#pragma once

#include <array>
#include <cstdint>

#include "bifusion/dataset.hpp"
#include "bifusion/rng.hpp"

namespace bifusion {

// Procedural walker. Identity lives in limb proportions, body thickness, and
// gait dynamics (frequency, amplitudes, phase offsets) — the cues the two
// modalities encode. Lengths are in source units before the render fit;
// thickness is in final image pixels.
struct IdentityParams {
  double torso_len, upper_arm, lower_arm, upper_leg, lower_leg;
  double shoulder_halfw, hip_halfw;
  double head_radius;
  double freq;  // cycles per frame, in [0.02, 0.08]
  double thickness;
  double hip_swing, knee_bend, arm_swing, elbow_bend;
  double lateral_leg, lateral_arm;  // distal sway, px
  double bob;                       // proximal sway, px
  std::array<double, 4> phase_jitter;  // l_leg, r_leg, l_arm, r_arm
};

// deterministic in the seed; all parameters inside documented uniform ranges
IdentityParams generate_identity(std::uint64_t seed);

// 3D stick walker with phase-opposed limbs, rotated by `view` degrees about
// the vertical axis, orthographically projected, plus sigma=0.5 px coordinate
// noise. CL scales apparent limb lengths by a per-sequence factor in
// [0.95, 1.05]; BG leaves skeletons unchanged. Values are quantized to f32.
// The rng supplies the sequence phase, the CL factor, then the noise stream,
// in that order.
KeypointsMatrix generate_skeleton_sequence(const IdentityParams& id, double view_deg,
                                           Condition condition, std::int64_t t, Rng& rng);

// Rasterizes capsules over the joint edges plus a filled torso and a head disc
// into 64x64 masks, fitted to 60 px height and centroid-centered. BG adds an
// elliptical blob beside the mid-torso; CL inflates thickness by 1.5x.
SilhouetteSequence render_silhouettes(const KeypointsMatrix& kp, const IdentityParams& id,
                                      Condition condition);

struct GenSpec {
  std::int64_t ids = 20;
  std::int64_t frames = 30;
  std::uint64_t seed = 0;
  std::int64_t threads = 1;
};

// CASIA-B-like layout: 11 views 0..180 step 18; 6 NM + 2 BG + 2 CL walks per
// identity; files plus manifest.csv under root
DatasetIndex generate_dataset(const std::string& root, const GenSpec& spec);

}  // namespace bifusion
