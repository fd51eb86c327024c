#include "doctest.h"

#include "bifusion/optimizer.hpp"
#include "bifusion/sampler.hpp"

using namespace bifusion;

namespace {

// in-memory dataset skeleton; the sampler never touches files
DatasetIndex fake_dataset(std::int64_t ids, std::int64_t seqs_per_id, std::int64_t frames) {
  DatasetIndex index;
  index.root = "<memory>";
  for (std::int64_t id = 0; id < ids; ++id)
    for (std::int64_t s = 1; s <= seqs_per_id; ++s) {
      SequenceEntry e;
      e.identity = id;
      e.condition = Condition::NM;
      e.seq = s;
      e.view = 0;
      e.frames = frames;
      index.entries.push_back(e);
    }
  return index;
}

}  // namespace

TEST_CASE("sgd step values") {
  SUBCASE("plain gradient step") {
    Tensor p;
    p.shape = {2};
    p.data = {1.0, -2.0};
    std::vector<double> grad = {0.5, 0.25};
    std::vector<double> v;
    sgd_step(p, grad, v, 1.0, 0.0, 0.0, false);
    CHECK(p.data[0] == doctest::Approx(0.5));
    CHECK(p.data[1] == doctest::Approx(-2.25));
  }

  SUBCASE("zero gradients leave the parameter; velocity decays") {
    Tensor p;
    p.shape = {1};
    p.data = {3.0};
    std::vector<double> v = {1.0};
    std::vector<double> zero = {0.0};
    sgd_step(p, zero, v, 0.0, 0.9, 0.0, false);  // lr 0: parameter untouched
    CHECK(p.data[0] == 3.0);
    CHECK(v[0] == doctest::Approx(0.9));
    sgd_step(p, zero, v, 0.0, 0.9, 0.0, false);
    CHECK(v[0] == doctest::Approx(0.81));
  }

  SUBCASE("weight decay pulls toward zero as specified") {
    Tensor p;
    p.shape = {1};
    p.data = {1.0};
    std::vector<double> v;
    std::vector<double> zero = {0.0};
    sgd_step(p, zero, v, 0.1, 0.0, 5e-4, false);
    CHECK(p.data[0] == doctest::Approx(0.99995));
  }

  SUBCASE("decay-exempt parameters ignore weight decay") {
    Tensor p;
    p.shape = {1};
    p.data = {1.0};
    std::vector<double> v;
    std::vector<double> zero = {0.0};
    sgd_step(p, zero, v, 0.1, 0.0, 5e-4, true);
    CHECK(p.data[0] == 1.0);
  }

  SUBCASE("lr zero is the identity on parameters") {
    Tensor p;
    p.shape = {2};
    p.data = {1.5, -0.5};
    std::vector<double> grad = {10.0, -3.0};
    std::vector<double> v;
    sgd_step(p, grad, v, 0.0, 0.9, 5e-4, false);
    CHECK(p.data[0] == 1.5);
    CHECK(p.data[1] == -0.5);
  }
}

TEST_CASE("learning rate schedule decays tenfold at milestones") {
  LrSchedule s{0.1, 1000, 3};
  CHECK(s.at(0) == doctest::Approx(0.1));
  CHECK(s.at(999) == doctest::Approx(0.1));
  CHECK(s.at(1000) == doctest::Approx(0.01));
  CHECK(s.at(2500) == doctest::Approx(0.001));
  CHECK(s.at(3000) == doctest::Approx(0.0001));
  CHECK(s.at(99999) == doctest::Approx(0.0001));  // capped after 3 decays
}

TEST_CASE("batch sampling") {
  SUBCASE("spec (2,2,30) on two identities gives batch size 4") {
    auto data = fake_dataset(2, 3, 40);
    Rng rng(1);
    auto batch = sample_batch(data, {0, 1}, BatchSpec{2, 2, 30}, rng);
    CHECK(batch.size() == 4);
    for (const auto& item : batch) {
      CHECK(item.start >= 0);
      CHECK(item.start + 30 <= 40);
    }
  }

  SUBCASE("short sequences wrap with their own period") {
    auto idx = window_frames(10, 3, 30);
    REQUIRE(idx.size() == 30);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      CHECK(idx[i] == (3 + static_cast<std::int64_t>(i)) % 10);
      if (i >= 10) CHECK(idx[i] == idx[i - 10]);
    }
  }

  SUBCASE("identities with fewer than K sequences sample with replacement") {
    auto data = fake_dataset(3, 2, 20);
    Rng rng(2);
    auto batch = sample_batch(data, {0, 1, 2}, BatchSpec{2, 4, 10}, rng);
    CHECK(batch.size() == 8);
  }

  SUBCASE("a fixed seed reproduces the batch composition") {
    auto data = fake_dataset(5, 4, 25);
    Rng a(7), b(7);
    auto x = sample_batch(data, {0, 1, 2, 3, 4}, BatchSpec{3, 2, 12}, a);
    auto y = sample_batch(data, {0, 1, 2, 3, 4}, BatchSpec{3, 2, 12}, b);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].entry == y[i].entry);
      CHECK(x[i].label == y[i].label);
      CHECK(x[i].start == y[i].start);
    }
  }

  SUBCASE("too few identities is a sampling error") {
    auto data = fake_dataset(1, 4, 25);
    Rng rng(3);
    CHECK_THROWS_AS(sample_batch(data, {0}, BatchSpec{2, 2, 10}, rng), SamplingError);
  }
}
