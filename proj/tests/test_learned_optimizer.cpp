#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lopt/rnn_optimizer.hpp"

using namespace lopt;
namespace fs = std::filesystem;

namespace {

Tensor random_grad(RandomStream& rng, int n, double scale = 1.0) {
  Tensor g = Tensor::randn({n}, rng);
  return tmath::scale(g, scale);
}

}  // namespace

TEST_CASE("compute_inputs examples") {
  SUBCASE("constant positive gradient drives mt and gt to 1 with eps 0") {
    CoordState st = CoordState::init(3, 0);
    Tensor feats;
    for (int t = 0; t < 25; t++)
      feats = compute_inputs(st, Tensor::full({3}, 0.7), 0.95, 0.95, 0.0);
    for (int i = 0; i < 3; i++) {
      CHECK(feats.at(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(feats.at(i, 1) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("sign symmetry: constant negative gradient gives -1") {
    CoordState st = CoordState::init(2, 0);
    Tensor feats;
    for (int t = 0; t < 25; t++)
      feats = compute_inputs(st, Tensor::full({2}, -1.3), 0.95, 0.95, 0.0);
    CHECK(feats.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("per-coordinate rescaling cancels with eps 0") {
    RandomStream rng(3);
    const int n = 6;
    CoordState a = CoordState::init(n, 0);
    CoordState b = CoordState::init(n, 0);
    Tensor c = Tensor({n});
    for (int i = 0; i < n; i++) c[i] = std::exp(rng.uniform(-3.0, 3.0));
    for (int t = 0; t < 10; t++) {
      Tensor g = random_grad(rng, n);
      for (int i = 0; i < n; i++)
        if (g[i] == 0.0) g[i] = 0.25;
      Tensor fa = compute_inputs(a, g, 0.95, 0.95, 0.0);
      Tensor fb = compute_inputs(b, tmath::mul(g, c), 0.95, 0.95, 0.0);
      for (int64_t i = 0; i < fa.numel(); i++)
        CHECK(std::abs(fa[i] - fb[i]) <= 1e-12 * std::max(1.0, std::abs(fa[i])));
    }
  }
  SUBCASE("t increments and state shapes are audited") {
    CoordState st = CoordState::init(5, 2);
    CHECK(st.t == 0);
    CHECK(st.hc[0].dim(0) == 5);
    CHECK(st.hc[0].dim(1) == 40);  // h and c, 20 columns each
    compute_inputs(st, Tensor({5}), 0.95, 0.95, 1e-8);
    CHECK(st.t == 1);
    for (int64_t i = 0; i < st.hc[0].numel(); i++) CHECK(st.hc[0][i] == 0.0);
  }
  SUBCASE("non-finite gradient rejected with diagnostic") {
    CoordState st = CoordState::init(2, 0);
    Tensor g({2});
    g[1] = std::numeric_limits<double>::quiet_NaN();
    try {
      compute_inputs(st, g, 0.95, 0.95, 1e-8);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == "nonfinite_gradient");
      CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
    }
  }
}

TEST_CASE("rnnprop step") {
  RandomStream rng(5);
  auto core = RnnPropCore::random_init(rng);

  SUBCASE("every update stays strictly inside alpha") {
    CoordState st = CoordState::init(64, 2);
    for (int t = 0; t < 30; t++) {
      Tensor g = random_grad(rng, 64, std::pow(10.0, rng.uniform(-6.0, 6.0)));
      Tensor feats = optimizer_features(*core, st, g);
      Tensor delta = core->step_values(st, feats);
      for (int64_t i = 0; i < delta.numel(); i++) CHECK(std::abs(delta[i]) < 0.1);
    }
  }
  SUBCASE("zero parameters give zero updates") {
    RnnPropCore zero;
    CoordState st = CoordState::init(8, 2);
    Tensor feats = optimizer_features(zero, st, random_grad(rng, 8));
    Tensor delta = zero.step_values(st, feats);
    for (int64_t i = 0; i < delta.numel(); i++) CHECK(delta[i] == 0.0);
  }
  SUBCASE("input rescaling leaves updates unchanged (eps 0 pipeline)") {
    struct Eps0Core : RnnPropCore {
      double feature_eps() const override { return 0.0; }
    };
    Eps0Core a;
    RandomStream wrng(6);
    auto seeded = RnnPropCore::random_init(wrng);
    a.params() = seeded->params();
    Eps0Core b;
    b.params() = seeded->params();
    const int n = 10;
    CoordState sa = CoordState::init(n, 2);
    CoordState sb = CoordState::init(n, 2);
    Tensor c({n});
    for (int i = 0; i < n; i++) c[i] = std::exp(rng.uniform(-2.0, 2.0));
    for (int t = 0; t < 12; t++) {
      Tensor g = random_grad(rng, n);
      for (int i = 0; i < n; i++)
        if (g[i] == 0.0) g[i] = 0.5;
      Tensor da = a.step_values(sa, optimizer_features(a, sa, g));
      Tensor db = b.step_values(sb, optimizer_features(b, sb, tmath::mul(g, c)));
      for (int64_t i = 0; i < da.numel(); i++)
        CHECK(std::abs(da[i] - db[i]) <= 1e-12 * std::max(1.0, std::abs(da[i])));
    }
  }
  SUBCASE("coordinate permutation equivariance") {
    const int n = 7;
    std::vector<int> perm = {3, 0, 6, 1, 5, 2, 4};
    CoordState sa = CoordState::init(n, 2);
    CoordState sb = CoordState::init(n, 2);
    for (int t = 0; t < 5; t++) {
      Tensor g = random_grad(rng, n);
      Tensor gp({n});
      for (int i = 0; i < n; i++) gp[i] = g[perm[static_cast<size_t>(i)]];
      Tensor da = core->step_values(sa, optimizer_features(*core, sa, g));
      Tensor db = core->step_values(sb, optimizer_features(*core, sb, gp));
      for (int i = 0; i < n; i++) CHECK(db[i] == da[perm[static_cast<size_t>(i)]]);
    }
  }
  SUBCASE("parameter count independent of optimizee size") {
    CoordState small = CoordState::init(10, 2);
    CoordState large = CoordState::init(10000, 2);
    (void)small;
    (void)large;
    int64_t total = 0;
    for (const Tensor* t : core->phi_view()) total += t->numel();
    CHECK(total == 2 * 20 + 20 + (40 * 80 + 80) * 2 + 20 + 1);
  }
}

TEST_CASE("forced readout reduces to a scaled first feature (adam direction)") {
  RandomStream rng(9);
  auto core = RnnPropCore::random_init(rng);
  OutputOverride ov;
  ov.column = 0;  // mt
  ov.coeff = 0.01;
  const int n = 50;
  CoordState st = CoordState::init(n, 2);
  int checked = 0;
  for (int t = 0; t < 20; t++) {
    Tensor g = random_grad(rng, n, std::pow(10.0, rng.uniform(-3.0, 3.0)));
    Tensor feats = optimizer_features(*core, st, g);
    Tensor delta = core->step_values(st, feats, &ov);
    for (int i = 0; i < n; i++) {
      double target = 0.1 * ov.coeff * feats.at(i, 0);
      if (std::abs(target) < 1e-12) continue;
      double rel = std::abs(delta[i] - target) / std::abs(target);
      double x = ov.coeff * feats.at(i, 0);
      CHECK(rel <= x * x / 3.0 + 1e-12);  // tanh cubic bound
      CHECK(rel < 1e-3);
      checked++;
    }
  }
  CHECK(checked > 500);
}

TEST_CASE("dm baseline") {
  SUBCASE("preprocessing of g = 1 is (0, 1)") {
    Tensor f = dm_preprocess(Tensor::full({1}, 1.0), 10.0);
    CHECK(f.at(0, 0) == 0.0);
    CHECK(f.at(0, 1) == 1.0);
  }
  SUBCASE("small magnitudes switch branches") {
    double g = 1e-3;  // above the e^-10 cutoff: log branch
    Tensor f = dm_preprocess(Tensor::full({1}, g), 10.0);
    CHECK(f.at(0, 0) == doctest::Approx(std::log(g) / 10.0));
    f = dm_preprocess(Tensor::full({1}, 1e-6), 10.0);  // below the cutoff
    CHECK(f.at(0, 0) == -1.0);
    CHECK(f.at(0, 1) == doctest::Approx(std::exp(10.0) * 1e-6));
  }
  SUBCASE("zero parameters give zero updates") {
    DmCore zero;
    RandomStream rng(10);
    CoordState st = CoordState::init(6, 2);
    Tensor feats = optimizer_features(zero, st, random_grad(rng, 6));
    Tensor delta = zero.step_values(st, feats);
    for (int64_t i = 0; i < delta.numel(); i++) CHECK(delta[i] == 0.0);
  }
  SUBCASE("gradient rescaling changes the inputs (first-class behavior)") {
    RandomStream rng(11);
    Tensor g = random_grad(rng, 4);
    Tensor fa = dm_preprocess(g, 10.0);
    Tensor fb = dm_preprocess(tmath::scale(g, 10.0), 10.0);
    bool any_diff = false;
    for (int64_t i = 0; i < fa.numel(); i++)
      if (fa[i] != fb[i]) any_diff = true;
    CHECK(any_diff);
  }
}

TEST_CASE("tape-mode step reproduces value-mode arithmetic bitwise") {
  RandomStream rng(12);
  for (CoreKind kind : {CoreKind::RnnProp, CoreKind::Dm, CoreKind::LinearFeature}) {
    auto core = make_core_random(kind, rng);
    const int n = 9;
    CoordState sv = CoordState::init(n, core->state_layers());
    CoordState st = CoordState::init(n, core->state_layers());
    Tensor g = random_grad(rng, n);
    Tensor feats_v = optimizer_features(*core, sv, g);
    Tensor delta_v = core->step_values(sv, feats_v);

    Tensor feats_t = optimizer_features(*core, st, g);
    Tape tape;
    std::vector<Value> phi_nodes;
    for (Tensor* t : core->phi()) phi_nodes.push_back(tape.param(*t));
    std::vector<Value> hc_nodes;
    for (const Tensor& hc : st.hc) hc_nodes.push_back(tape.constant(hc));
    Value delta_t = core->step_on_tape(tape, phi_nodes, hc_nodes, tape.constant(feats_t));

    INFO(core_kind_name(kind));
    REQUIRE(tape.value(delta_t).numel() == delta_v.numel());
    for (int64_t i = 0; i < delta_v.numel(); i++) CHECK(tape.value(delta_t)[i] == delta_v[i]);
    for (size_t l = 0; l < st.hc.size(); l++) {
      const Tensor& hc_tape = tape.value(hc_nodes[l]);
      for (int64_t i = 0; i < hc_tape.numel(); i++) CHECK(hc_tape[i] == sv.hc[l][i]);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  RandomStream rng(13);
  fs::path dir = fs::temp_directory_path() / "lopt_ckpt_test";
  for (CoreKind kind : {CoreKind::RnnProp, CoreKind::Dm}) {
    auto core = make_core_random(kind, rng);
    save_checkpoint(dir, *core, 42, 1.25);
    auto back = load_checkpoint(dir);
    CHECK(back->kind() == kind);
    CHECK(back->phi_hash() == core->phi_hash());
    auto a = core->phi_view();
    auto b = back->phi_view();
    for (size_t i = 0; i < a.size(); i++)
      for (int64_t j = 0; j < a[i]->numel(); j++) CHECK((*a[i])[j] == (*b[i])[j]);
  }
  SUBCASE("missing manifest") {
    try {
      load_checkpoint(fs::temp_directory_path() / "lopt_no_such_ckpt");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == "missing_file");
      CHECK(e.category() == ErrorCategory::Checkpoint);
    }
  }
  SUBCASE("truncated payload detected") {
    auto core = make_core_random(CoreKind::RnnProp, rng);
    save_checkpoint(dir, *core);
    fs::resize_file(dir / "params.bin", 100);
    try {
      load_checkpoint(dir);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == "truncated");
    }
  }
}
