#include "bifusion/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <thread>

#include "bifusion/graph.hpp"

namespace fs = std::filesystem;

namespace bifusion {

namespace {

constexpr double kTau = 6.283185307179586477;

struct Point3 {
  double x, y, z;
};

// body-frame joint positions at walk phase theta; y grows downward
std::array<Point3, 12> pose_at(const IdentityParams& id, double theta, double limb_scale) {
  std::array<Point3, 12> p{};
  const double ua = id.upper_arm * limb_scale;
  const double la = id.lower_arm * limb_scale;
  const double ul = id.upper_leg * limb_scale;
  const double ll = id.lower_leg * limb_scale;

  const double y_bob = 0.5 * id.bob * std::sin(2.0 * theta);
  const double pelvis_x = id.bob * std::sin(theta);
  const double shoulder_x = -0.5 * id.bob * std::sin(theta);

  p[kLShoulder] = {shoulder_x - id.shoulder_halfw, y_bob, 0.0};
  p[kRShoulder] = {shoulder_x + id.shoulder_halfw, y_bob, 0.0};
  p[kLHip] = {pelvis_x - id.hip_halfw, id.torso_len + y_bob, 0.0};
  p[kRHip] = {pelvis_x + id.hip_halfw, id.torso_len + y_bob, 0.0};

  auto leg = [&](std::int64_t hip, std::int64_t knee, std::int64_t ankle, double phase,
                 double sway_sign) {
    const double th = theta + phase;
    const double alpha = id.hip_swing * std::sin(th);
    const double beta = alpha - id.knee_bend * (0.5 + 0.5 * std::sin(th - 0.9));
    p[knee] = {p[hip].x + sway_sign * 0.5 * id.lateral_leg * std::sin(th + 0.5),
               p[hip].y + ul * std::cos(alpha), p[hip].z + ul * std::sin(alpha)};
    p[ankle] = {p[hip].x + sway_sign * id.lateral_leg * std::sin(th + 0.5),
                p[knee].y + ll * std::cos(beta), p[knee].z + ll * std::sin(beta)};
  };
  leg(kLHip, kLKnee, kLAnkle, kTau / 2.0 + id.phase_jitter[0], -1.0);
  leg(kRHip, kRKnee, kRAnkle, id.phase_jitter[1], 1.0);

  auto arm = [&](std::int64_t sh, std::int64_t elbow, std::int64_t wrist, double phase,
                 double sway_sign) {
    const double th = theta + phase;
    const double gamma = id.arm_swing * std::sin(th);
    const double gamma2 = gamma + id.elbow_bend * (0.5 + 0.5 * std::sin(th - 0.7));
    p[elbow] = {p[sh].x + sway_sign * 0.5 * id.lateral_arm * std::sin(th + 0.4),
                p[sh].y + ua * std::cos(gamma), p[sh].z + ua * std::sin(gamma)};
    p[wrist] = {p[sh].x + sway_sign * id.lateral_arm * std::sin(th + 0.4),
                p[elbow].y + la * std::cos(gamma2), p[elbow].z + la * std::sin(gamma2)};
  };
  // arms swing opposite to the same-side legs
  arm(kLShoulder, kLElbow, kLWrist, id.phase_jitter[2], -1.0);
  arm(kRShoulder, kRElbow, kRWrist, kTau / 2.0 + id.phase_jitter[3], 1.0);

  return p;
}

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

IdentityParams generate_identity(std::uint64_t seed) {
  Rng r(seed, 0xD5);
  IdentityParams id{};
  id.torso_len = r.uniform(13.0, 19.0);
  id.upper_arm = r.uniform(6.5, 9.5);
  id.lower_arm = r.uniform(6.5, 9.5);
  id.upper_leg = r.uniform(8.0, 12.0);
  id.lower_leg = r.uniform(8.0, 12.0);
  id.shoulder_halfw = r.uniform(3.5, 5.5);
  id.hip_halfw = r.uniform(2.5, 4.0);
  id.head_radius = r.uniform(2.2, 3.2);
  id.freq = r.uniform(0.02, 0.08);
  id.thickness = r.uniform(1.6, 3.2);
  id.hip_swing = r.uniform(0.30, 0.55);
  id.knee_bend = r.uniform(0.25, 0.60);
  id.arm_swing = r.uniform(0.25, 0.50);
  id.elbow_bend = r.uniform(0.15, 0.40);
  id.lateral_leg = r.uniform(2.6, 4.0);
  id.lateral_arm = r.uniform(2.6, 4.0);
  id.bob = r.uniform(0.3, 0.7);
  for (auto& j : id.phase_jitter) j = r.uniform(-0.3, 0.3);
  return id;
}

KeypointsMatrix generate_skeleton_sequence(const IdentityParams& id, double view_deg,
                                           Condition condition, std::int64_t t, Rng& rng) {
  if (t < 12)
    throw InputLengthError("skeleton sequences need at least 12 frames, got " + std::to_string(t));
  const double phase0 = rng.uniform(0.0, kTau);
  const double cl_draw = rng.uniform(0.95, 1.05);
  const double limb_scale = condition == Condition::CL ? cl_draw : 1.0;

  const double psi = view_deg * kTau / 360.0;
  const double cpsi = std::cos(psi), spsi = std::sin(psi);

  KeypointsMatrix kp;
  kp.t = t;
  kp.data.resize(static_cast<std::size_t>(t) * 12 * 3);
  for (std::int64_t f = 0; f < t; ++f) {
    const double theta = kTau * id.freq * static_cast<double>(f) + phase0;
    const auto pose = pose_at(id, theta, limb_scale);
    for (std::int64_t j = 0; j < 12; ++j) {
      const double x_img = pose[static_cast<std::size_t>(j)].x * cpsi +
                           pose[static_cast<std::size_t>(j)].z * spsi;
      const double y_img = pose[static_cast<std::size_t>(j)].y;
      kp.at(f, j, 0) = f32(x_img + 0.5 * rng.gaussian());
      kp.at(f, j, 1) = f32(y_img + 0.5 * rng.gaussian());
      kp.at(f, j, 2) = 1.0;
    }
  }
  return kp;
}

namespace {

struct Vec2 {
  double x, y;
};

double seg_dist2(Vec2 p, Vec2 a, Vec2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double u = len2 > 1e-12 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  const double dx = p.x - (a.x + u * vx), dy = p.y - (a.y + u * vy);
  return dx * dx + dy * dy;
}

bool in_quad(Vec2 p, const std::array<Vec2, 4>& q) {
  // even-odd rule
  bool inside = false;
  for (int i = 0, j = 3; i < 4; j = i++) {
    const bool cross = ((q[i].y > p.y) != (q[j].y > p.y)) &&
                       (p.x < (q[j].x - q[i].x) * (p.y - q[i].y) / (q[j].y - q[i].y) + q[i].x);
    if (cross) inside = !inside;
  }
  return inside;
}

void paint_capsule(std::uint8_t* canvas, std::int64_t w, std::int64_t h, Vec2 a,
                   Vec2 b, double radius) {
  const std::int64_t c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(a.x, b.x) - radius)));
  const std::int64_t c1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(std::max(a.x, b.x) + radius)));
  const std::int64_t r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(a.y, b.y) - radius)));
  const std::int64_t r1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(std::max(a.y, b.y) + radius)));
  const double rad2 = radius * radius;
  for (std::int64_t r = r0; r <= r1; ++r)
    for (std::int64_t c = c0; c <= c1; ++c)
      if (seg_dist2({c + 0.5, r + 0.5}, a, b) <= rad2) canvas[static_cast<std::size_t>(r * w + c)] = 1;
}

void paint_ellipse(std::uint8_t* canvas, std::int64_t w, std::int64_t h, Vec2 center,
                   double rx, double ry) {
  const std::int64_t c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(center.x - rx)));
  const std::int64_t c1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(center.x + rx)));
  const std::int64_t r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(center.y - ry)));
  const std::int64_t r1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(center.y + ry)));
  for (std::int64_t r = r0; r <= r1; ++r)
    for (std::int64_t c = c0; c <= c1; ++c) {
      const double dx = (c + 0.5 - center.x) / rx, dy = (r + 0.5 - center.y) / ry;
      if (dx * dx + dy * dy <= 1.0) canvas[static_cast<std::size_t>(r * w + c)] = 1;
    }
}

}  // namespace

SilhouetteSequence render_silhouettes(const KeypointsMatrix& kp, const IdentityParams& id,
                                      Condition condition) {
  static const auto pyramid = build_pyramid_graph();
  const auto& edges = pyramid.joints.spatial_edges;
  const double radius = id.thickness * (condition == Condition::CL ? 1.5 : 1.0) / 2.0 + 0.5;

  SilhouetteSequence sil;
  sil.t = kp.t;
  sil.frames.assign(static_cast<std::size_t>(kp.t) * 64 * 64, 0);
  const std::int64_t tw = 96;  // wide working canvas, then centroid crop

  for (std::int64_t f = 0; f < kp.t; ++f) {
    std::array<Vec2, 12> src{};
    double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30, mean_x = 0.0;
    for (std::int64_t j = 0; j < 12; ++j) {
      src[static_cast<std::size_t>(j)] = {kp.at(f, j, 0), kp.at(f, j, 1)};
      min_x = std::min(min_x, src[static_cast<std::size_t>(j)].x);
      max_x = std::max(max_x, src[static_cast<std::size_t>(j)].x);
      min_y = std::min(min_y, src[static_cast<std::size_t>(j)].y);
      max_y = std::max(max_y, src[static_cast<std::size_t>(j)].y);
      mean_x += src[static_cast<std::size_t>(j)].x / 12.0;
    }
    if (max_x - min_x < 1e-6 && max_y - min_y < 1e-6)
      throw RenderError("all joints coincide at frame " + std::to_string(f));

    const Vec2 neck = {(src[kLShoulder].x + src[kRShoulder].x) / 2.0,
                       (src[kLShoulder].y + src[kRShoulder].y) / 2.0};
    const double head_top = neck.y - 2.0 * id.head_radius - 1.0;
    min_y = std::min(min_y, head_top);

    const double scale = (60.0 - 2.0 * radius) / std::max(1e-6, max_y - min_y);
    auto to_img = [&](Vec2 p) -> Vec2 {
      return {(p.x - mean_x) * scale + tw / 2.0, (p.y - min_y) * scale + radius + 2.0};
    };

    std::vector<std::uint8_t> canvas(static_cast<std::size_t>(tw) * 64, 0);
    for (const auto& e : edges)
      paint_capsule(canvas.data(), tw, 64, to_img(src[static_cast<std::size_t>(e.first)]),
                    to_img(src[static_cast<std::size_t>(e.second)]), radius);

    // filled torso
    const std::array<Vec2, 4> quad = {to_img(src[kLShoulder]), to_img(src[kRShoulder]),
                                      to_img(src[kRHip]), to_img(src[kLHip])};
    double q_minx = 1e30, q_maxx = -1e30, q_miny = 1e30, q_maxy = -1e30;
    for (const auto& q : quad) {
      q_minx = std::min(q_minx, q.x);
      q_maxx = std::max(q_maxx, q.x);
      q_miny = std::min(q_miny, q.y);
      q_maxy = std::max(q_maxy, q.y);
    }
    for (std::int64_t r = std::max<std::int64_t>(0, static_cast<std::int64_t>(q_miny));
         r <= std::min<std::int64_t>(63, static_cast<std::int64_t>(q_maxy)); ++r)
      for (std::int64_t c = std::max<std::int64_t>(0, static_cast<std::int64_t>(q_minx));
           c <= std::min<std::int64_t>(tw - 1, static_cast<std::int64_t>(q_maxx)); ++c)
        if (in_quad({c + 0.5, r + 0.5}, quad)) canvas[static_cast<std::size_t>(r * tw + c)] = 1;

    // head
    const Vec2 neck_img = to_img(neck);
    paint_ellipse(canvas.data(), tw, 64, {neck_img.x, neck_img.y - (id.head_radius + 1.0) * scale},
                  id.head_radius * scale, id.head_radius * scale);

    // centroid crop to 64 columns
    double csum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t r = 0; r < 64; ++r)
      for (std::int64_t c = 0; c < tw; ++c)
        if (canvas[static_cast<std::size_t>(r * tw + c)]) {
          csum += static_cast<double>(c);
          ++count;
        }
    if (count == 0) throw RenderError("empty silhouette at frame " + std::to_string(f));
    const std::int64_t shift = static_cast<std::int64_t>(std::lround(csum / count)) - 32;
    for (std::int64_t r = 0; r < 64; ++r)
      for (std::int64_t c = 0; c < 64; ++c) {
        const std::int64_t sc = c + shift;
        if (sc >= 0 && sc < tw)
          sil.at(f, r, c) = canvas[static_cast<std::size_t>(r * tw + sc)];
      }

    if (condition == Condition::BG) {
      // bag beside the mid-torso, partly outside the body profile
      const double torso_mid_y =
          (to_img(src[kLShoulder]).y + to_img(src[kLHip]).y + to_img(src[kRShoulder]).y +
           to_img(src[kRHip]).y) / 4.0;
      paint_ellipse(sil.frames.data() + f * 64 * 64, 64, 64, {48.0, torso_mid_y}, 5.0, 7.0);
    }
  }
  return sil;
}

DatasetIndex generate_dataset(const std::string& root, const GenSpec& spec) {
  fs::create_directories(root);
  DatasetIndex index;
  index.root = root;

  struct Walk {
    Condition cond;
    std::int64_t seq;
  };
  std::vector<Walk> walks;
  for (std::int64_t s = 1; s <= 6; ++s) walks.push_back({Condition::NM, s});
  for (std::int64_t s = 1; s <= 2; ++s) walks.push_back({Condition::BG, s});
  for (std::int64_t s = 1; s <= 2; ++s) walks.push_back({Condition::CL, s});

  for (std::int64_t id = 0; id < spec.ids; ++id)
    for (const auto& w : walks)
      for (std::int64_t v = 0; v < 11; ++v) {
        SequenceEntry e;
        e.identity = id;
        e.condition = w.cond;
        e.seq = w.seq;
        e.view = v * 18;
        e.frames = spec.frames;
        e.dir = DatasetIndex::entry_dir(root, id, w.cond, w.seq, e.view);
        index.entries.push_back(std::move(e));
      }

  const std::int64_t workers = std::max<std::int64_t>(1, spec.threads);
  auto emit = [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i) {
      const auto& e = index.entries[static_cast<std::size_t>(i)];
      const auto id_params =
          generate_identity(spec.seed * 7919 + 131 * static_cast<std::uint64_t>(e.identity));
      // one stream per (id, cond, seq): all views of a walk share its phase,
      // cloth factor, and noise draws, so a walk is one physical trajectory
      // seen by 11 cameras
      const std::uint64_t walk_stream =
          (static_cast<std::uint64_t>(e.identity) << 20) ^
          (static_cast<std::uint64_t>(e.condition) << 12) ^ static_cast<std::uint64_t>(e.seq);
      Rng seq_rng(spec.seed ^ 0xBEEF, walk_stream);
      KeypointsMatrix kp = generate_skeleton_sequence(id_params, static_cast<double>(e.view),
                                                      e.condition, spec.frames, seq_rng);
      SilhouetteSequence sil = render_silhouettes(kp, id_params, e.condition);
      fs::create_directories(e.dir);
      write_kpm(e.dir + "/data.kpm", kp);
      write_sil(e.dir + "/data.sil", sil);
    }
  };

  if (workers == 1) {
    emit(0, static_cast<std::int64_t>(index.entries.size()));
  } else {
    std::vector<std::thread> pool;
    const std::int64_t n = static_cast<std::int64_t>(index.entries.size());
    const std::int64_t chunk = (n + workers - 1) / workers;
    for (std::int64_t w = 0; w < workers; ++w)
      pool.emplace_back(emit, std::min(w * chunk, n), std::min((w + 1) * chunk, n));
    for (auto& th : pool) th.join();
  }

  write_manifest(index);
  return index;
}

}  // namespace bifusion
