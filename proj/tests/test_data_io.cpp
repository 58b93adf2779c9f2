#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lopt/data.hpp"
#include "lopt/optim.hpp"
#include "lopt/optimizee.hpp"

using namespace lopt;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
  fs::path p = fs::temp_directory_path() / "lopt_data_test";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("idx round trip is bit exact") {
  Dataset ds = synthetic_fallback(123, 64);
  fs::path dir = tmpdir();
  write_idx(ds, dir / "imgs.idx", dir / "labels.idx");
  Dataset back = load_idx(dir / "imgs.idx", dir / "labels.idx");
  REQUIRE(back.size() == ds.size());
  CHECK(back.labels == ds.labels);
  int exact = 0;
  for (int64_t i = 0; i < ds.images.numel(); i++) {
    // write quantizes to bytes; reloading the written file must reproduce it
    double byte = std::round(ds.images[i] * 255.0) / 255.0;
    if (back.images[i] == byte) exact++;
  }
  CHECK(exact == ds.images.numel());
  // second round trip of the already-quantized data is the identity
  write_idx(back, dir / "imgs2.idx", dir / "labels2.idx");
  Dataset back2 = load_idx(dir / "imgs2.idx", dir / "labels2.idx");
  for (int64_t i = 0; i < back.images.numel(); i++) CHECK(back2.images[i] == back.images[i]);
}

TEST_CASE("idx error cases carry distinct codes") {
  fs::path dir = tmpdir();
  Dataset ds = synthetic_fallback(5, 16);
  write_idx(ds, dir / "a.idx", dir / "b.idx");

  SUBCASE("bad magic") {
    std::ofstream f(dir / "bad.idx", std::ios::binary);
    const char junk[8] = {0, 0, 7, 7, 0, 0, 0, 1};
    f.write(junk, 8);
    f.close();
    try {
      load_idx(dir / "bad.idx", dir / "b.idx");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == "bad_magic");
    }
  }
  SUBCASE("truncated payload") {
    std::ifstream in(dir / "a.idx", std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream f(dir / "trunc.idx", std::ios::binary);
    f.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
    f.close();
    try {
      load_idx(dir / "trunc.idx", dir / "b.idx");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == "truncated");
    }
  }
  SUBCASE("count mismatch") {
    Dataset more = synthetic_fallback(5, 32);
    write_idx(more, dir / "more.idx", dir / "more_labels.idx");
    try {
      load_idx(dir / "a.idx", dir / "more_labels.idx");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == "count_mismatch");
    }
  }
}

TEST_CASE("pixel 255 loads as 1.0") {
  fs::path dir = tmpdir();
  Dataset ds;
  ds.images = Tensor::full({1, kImageDim}, 1.0);
  ds.labels = {3};
  write_idx(ds, dir / "one.idx", dir / "one_labels.idx");
  Dataset back = load_idx(dir / "one.idx", dir / "one_labels.idx");
  CHECK(back.images[0] == 1.0);
  CHECK(back.labels[0] == 3);
}

TEST_CASE("synthetic fallback") {
  SUBCASE("deterministic per seed") {
    Dataset a = synthetic_fallback(99, 50);
    Dataset b = synthetic_fallback(99, 50);
    for (int64_t i = 0; i < a.images.numel(); i++) CHECK(a.images[i] == b.images[i]);
    CHECK(a.labels == b.labels);
    Dataset c = synthetic_fallback(100, 50);
    bool same = true;
    for (int64_t i = 0; i < a.images.numel() && same; i++)
      if (a.images[i] != c.images[i]) same = false;
    CHECK_FALSE(same);
  }
  SUBCASE("covers multiple classes, pixels in range") {
    Dataset ds = synthetic_fallback(1, 100);
    CHECK(ds.size() == 100);
    std::vector<int> seen(10, 0);
    for (int l : ds.labels) seen[static_cast<size_t>(l)]++;
    CHECK(std::count(seen.begin(), seen.end(), 10) == 10);
    for (int64_t i = 0; i < ds.images.numel(); i++) {
      CHECK(ds.images[i] >= 0.0);
      CHECK(ds.images[i] <= 1.0);
    }
  }
  SUBCASE("n below 10 rejected") { CHECK_THROWS_AS(synthetic_fallback(1, 5), Error); }
}

TEST_CASE("synthetic fallback is learnable: adam reaches loss below 1") {
  auto ds = std::make_shared<Dataset>(synthetic_fallback(7, 256));
  MlpConfig mc;
  mc.minibatch = 64;
  MlpOptimizee task(ds, mc);
  RandomStream init_rng(1, 0);
  std::vector<Tensor> theta = task.init_params(init_rng);
  std::vector<std::vector<int>> shapes;
  for (const auto& s : task.param_spec()) shapes.push_back(s.shape);
  ClassicOptimizer adam(ClassicKind::Adam, default_hyper(ClassicKind::Adam, 0.01), shapes);
  RandomStream sample_rng(2, 0);
  double last = 1e9;
  for (int t = 0; t < 100; t++) {
    Sample d = task.draw_sample(sample_rng);
    EvalResult r = task.loss_and_grad(theta, d);
    last = r.loss;
    std::vector<Tensor> deltas = adam.step(r.grads);
    for (size_t p = 0; p < theta.size(); p++) tmath::add_inplace(theta[p], deltas[p]);
  }
  CHECK(last < 1.0);
}

TEST_CASE("minibatch sampling") {
  Dataset ds = synthetic_fallback(3, 40);
  SUBCASE("size N gives a permutation") {
    MinibatchSampler s(ds, 40, RandomStream(1, 0));
    Minibatch mb = s.next();
    std::vector<int> sorted = mb.indices;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 40; i++) CHECK(sorted[static_cast<size_t>(i)] == i);
  }
  SUBCASE("no repeats within a batch; seeded sequences reproduce") {
    MinibatchSampler a(ds, 16, RandomStream(9, 1));
    MinibatchSampler b(ds, 16, RandomStream(9, 1));
    for (int round = 0; round < 3; round++) {
      Minibatch ma = a.next();
      Minibatch mb = b.next();
      CHECK(ma.indices == mb.indices);
      std::vector<int> sorted = ma.indices;
      std::sort(sorted.begin(), sorted.end());
      CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    }
    MinibatchSampler c(ds, 16, RandomStream(10, 1));
    CHECK(a.next().indices != c.next().indices);
  }
  SUBCASE("batch larger than dataset rejected") {
    CHECK_THROWS_AS(MinibatchSampler(ds, 41, RandomStream(1, 0)), Error);
  }
  SUBCASE("one-hot labels match") {
    MinibatchSampler s(ds, 8, RandomStream(3, 0));
    Minibatch mb = s.next();
    for (int i = 0; i < 8; i++) {
      int label = ds.labels[static_cast<size_t>(mb.indices[static_cast<size_t>(i)])];
      for (int j = 0; j < 10; j++) CHECK(mb.y_onehot.at(i, j) == (j == label ? 1.0 : 0.0));
    }
  }
}
