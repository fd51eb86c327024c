#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "bifusion/graph.hpp"
#include "bifusion/synthetic.hpp"

using namespace bifusion;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

double trace_amplitude(const KeypointsMatrix& kp, std::int64_t joint, std::int64_t channel) {
  double lo = 1e300, hi = -1e300;
  for (std::int64_t f = 0; f < kp.t; ++f) {
    lo = std::min(lo, kp.at(f, joint, channel));
    hi = std::max(hi, kp.at(f, joint, channel));
  }
  return (hi - lo) / 2.0;
}

std::int64_t count_fg(const SilhouetteSequence& s) {
  std::int64_t n = 0;
  for (auto v : s.frames) n += v;
  return n;
}

}  // namespace

TEST_CASE("identity generation") {
  SUBCASE("deterministic in the seed") {
    auto a = generate_identity(42);
    auto b = generate_identity(42);
    CHECK(a.torso_len == b.torso_len);
    CHECK(a.freq == b.freq);
    CHECK(a.phase_jitter == b.phase_jitter);
  }

  SUBCASE("one hundred seeds give pairwise distinct walkers") {
    std::set<std::pair<double, double>> seen;
    for (std::uint64_t s = 0; s < 100; ++s) {
      auto id = generate_identity(s);
      seen.insert({id.torso_len, id.freq});
    }
    CHECK(seen.size() == 100);
  }

  SUBCASE("parameters stay inside their documented ranges") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      auto id = generate_identity(s * 31 + 7);
      CHECK(id.freq >= 0.02);
      CHECK(id.freq <= 0.08);
      CHECK(id.torso_len > 0.0);
      CHECK(id.upper_leg > 0.0);
      CHECK(id.thickness > 0.0);
    }
  }
}

TEST_CASE("skeleton sequences") {
  auto id = generate_identity(5);

  SUBCASE("too few frames are rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(generate_skeleton_sequence(id, 0, Condition::NM, 11, rng), InputLengthError);
  }

  SUBCASE("confidence is identically one") {
    Rng rng(2);
    auto kp = generate_skeleton_sequence(id, 54, Condition::NM, 20, rng);
    for (std::int64_t f = 0; f < kp.t; ++f)
      for (std::int64_t j = 0; j < 12; ++j) CHECK(kp.at(f, j, 2) == 1.0);
  }

  SUBCASE("views 0 and 180 mirror the x coordinates up to noise") {
    Rng a(3), b(3);  // identical streams: same phase and same noise draws
    auto front = generate_skeleton_sequence(id, 0, Condition::NM, 16, a);
    auto back = generate_skeleton_sequence(id, 180, Condition::NM, 16, b);
    for (std::int64_t f = 0; f < 16; ++f)
      for (std::int64_t j = 0; j < 12; ++j) {
        // x_0 = x + n, x_180 = -x + n, so their difference is 2x and the sum is 2n
        const double sum = front.at(f, j, 0) + back.at(f, j, 0);
        CHECK(std::abs(sum) <= 4.0);  // |2n| with sigma = 0.5
        CHECK(front.at(f, j, 1) == doctest::Approx(back.at(f, j, 1)));
      }
  }

  SUBCASE("distal joints swing more than proximal ones at every view") {
    for (std::uint64_t s : {0ULL, 1ULL, 2ULL, 3ULL, 4ULL})
      for (double view : {0.0, 36.0, 90.0, 126.0, 180.0}) {
        auto walker = generate_identity(s);
        Rng rng(7 + s);
        auto kp = generate_skeleton_sequence(walker, view, Condition::NM, 30, rng);
        const double ankle = trace_amplitude(kp, kRAnkle, 0);
        const double hip = trace_amplitude(kp, kRHip, 0);
        CHECK(ankle > hip);
      }
  }

  SUBCASE("CL rescales limbs, BG leaves the skeleton untouched") {
    Rng a(11), b(11), c(11);
    auto nm = generate_skeleton_sequence(id, 90, Condition::NM, 16, a);
    auto bg = generate_skeleton_sequence(id, 90, Condition::BG, 16, b);
    auto cl = generate_skeleton_sequence(id, 90, Condition::CL, 16, c);
    double bg_dev = 0.0, cl_dev = 0.0;
    for (std::size_t i = 0; i < nm.data.size(); ++i) {
      bg_dev += std::abs(nm.data[i] - bg.data[i]);
      cl_dev += std::abs(nm.data[i] - cl.data[i]);
    }
    CHECK(bg_dev == 0.0);
    CHECK(cl_dev > 0.0);
  }
}

TEST_CASE("silhouette rendering") {
  auto id = generate_identity(9);
  Rng rng(13);
  auto kp = generate_skeleton_sequence(id, 72, Condition::NM, 14, rng);

  SUBCASE("every frame has foreground and the extents are fixed") {
    auto sil = render_silhouettes(kp, id, Condition::NM);
    CHECK(sil.t == 14);
    CHECK(static_cast<std::int64_t>(sil.frames.size()) == 14 * 64 * 64);
    for (std::int64_t f = 0; f < sil.t; ++f) {
      std::int64_t fg = 0;
      for (std::int64_t px = 0; px < 64 * 64; ++px) fg += sil.frames[static_cast<std::size_t>(f * 64 * 64 + px)];
      CHECK(fg >= 1);
    }
  }

  SUBCASE("a bag adds foreground over the plain rendering of the same walk") {
    auto nm = render_silhouettes(kp, id, Condition::NM);
    auto bg = render_silhouettes(kp, id, Condition::BG);
    CHECK(count_fg(bg) > count_fg(nm));
  }

  SUBCASE("clothes inflate the profile") {
    auto nm = render_silhouettes(kp, id, Condition::NM);
    auto cl = render_silhouettes(kp, id, Condition::CL);
    CHECK(count_fg(cl) > count_fg(nm));
  }

  SUBCASE("coincident joints are a render error") {
    KeypointsMatrix degenerate;
    degenerate.t = 1;
    degenerate.data.assign(36, 0.0);
    for (std::int64_t j = 0; j < 12; ++j) degenerate.at(0, j, 2) = 1.0;
    CHECK_THROWS_AS(render_silhouettes(degenerate, id, Condition::NM), RenderError);
  }
}

TEST_CASE("keypoint normalization") {
  auto id = generate_identity(21);
  Rng rng(17);
  auto kp = generate_skeleton_sequence(id, 36, Condition::NM, 16, rng);

  SUBCASE("disabled mode is bitwise identity") {
    auto same = normalize_keypoints(kp, false);
    CHECK(same.data == kp.data);
  }

  SUBCASE("mid-hip lands at the origin") {
    auto norm = normalize_keypoints(kp, true);
    for (std::int64_t f = 0; f < norm.t; ++f) {
      CHECK(std::abs((norm.at(f, 6, 0) + norm.at(f, 7, 0)) / 2.0) <= 1e-12);
      CHECK(std::abs((norm.at(f, 6, 1) + norm.at(f, 7, 1)) / 2.0) <= 1e-12);
    }
  }

  SUBCASE("translation invariance") {
    auto shifted = kp;
    for (std::int64_t f = 0; f < kp.t; ++f)
      for (std::int64_t j = 0; j < 12; ++j) {
        shifted.at(f, j, 0) += 17.0;
        shifted.at(f, j, 1) -= 4.0;
      }
    auto a = normalize_keypoints(kp, true);
    auto b = normalize_keypoints(shifted, true);
    for (std::size_t i = 0; i < a.data.size(); ++i)
      CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-9));
  }

  SUBCASE("zero torso length is a normalization error") {
    KeypointsMatrix degenerate;
    degenerate.t = 1;
    degenerate.data.assign(36, 0.0);
    CHECK_THROWS_AS(normalize_keypoints(degenerate, true), NormalizationError);
  }
}

TEST_CASE("dataset files round-trip bit-exactly") {
  const std::string dir = "/tmp/bifusion_test_files";
  fs::create_directories(dir);
  auto id = generate_identity(3);
  Rng rng(19);
  auto kp = generate_skeleton_sequence(id, 18, Condition::NM, 13, rng);
  auto sil = render_silhouettes(kp, id, Condition::NM);

  write_kpm(dir + "/a.kpm", kp);
  auto kp2 = read_kpm(dir + "/a.kpm");
  CHECK(kp2.t == kp.t);
  CHECK(kp2.data == kp.data);  // generator values are f32-exact
  write_kpm(dir + "/b.kpm", kp2);
  CHECK(file_bytes(dir + "/a.kpm") == file_bytes(dir + "/b.kpm"));

  write_sil(dir + "/a.sil", sil);
  auto sil2 = read_sil(dir + "/a.sil");
  CHECK(sil2.frames == sil.frames);
  write_sil(dir + "/b.sil", sil2);
  CHECK(file_bytes(dir + "/a.sil") == file_bytes(dir + "/b.sil"));
}

TEST_CASE("dataset generation layout and determinism") {
  const std::string root1 = "/tmp/bifusion_test_gen1";
  const std::string root2 = "/tmp/bifusion_test_gen2";
  fs::remove_all(root1);
  fs::remove_all(root2);

  GenSpec spec;
  spec.ids = 2;
  spec.frames = 12;
  spec.seed = 5;
  spec.threads = 1;
  auto index1 = generate_dataset(root1, spec);
  CHECK(index1.entries.size() == 2 * 10 * 11);

  spec.threads = 2;
  auto index2 = generate_dataset(root2, spec);
  REQUIRE(index2.entries.size() == index1.entries.size());

  // identical bytes independent of the worker count
  for (const auto& e : index1.entries) {
    const std::string rel = e.dir.substr(root1.size());
    CHECK(file_bytes(e.dir + "/data.kpm") == file_bytes(root2 + rel + "/data.kpm"));
    CHECK(file_bytes(e.dir + "/data.sil") == file_bytes(root2 + rel + "/data.sil"));
  }
  CHECK(file_bytes(root1 + "/manifest.csv") == file_bytes(root2 + "/manifest.csv"));

  SUBCASE("manifest reopens to the same index") {
    auto reopened = open_dataset(root1);
    REQUIRE(reopened.entries.size() == index1.entries.size());
    for (std::size_t i = 0; i < reopened.entries.size(); ++i) {
      CHECK(reopened.entries[i].identity == index1.entries[i].identity);
      CHECK(reopened.entries[i].condition == index1.entries[i].condition);
      CHECK(reopened.entries[i].view == index1.entries[i].view);
      CHECK(reopened.entries[i].frames == index1.entries[i].frames);
    }
  }

  SUBCASE("loading through the index works") {
    auto reopened = open_dataset(root1);
    auto kp = reopened.load_kpm(reopened.entries[0]);
    CHECK(kp.t == 12);
    auto sil = reopened.load_sil(reopened.entries[0]);
    CHECK(sil.t == 12);
  }
}
