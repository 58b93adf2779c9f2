#include "lopt/rnn_optimizer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace lopt {

using detail::kHidden;

const char* core_kind_name(CoreKind k) {
  switch (k) {
    case CoreKind::RnnProp: return "rnnprop";
    case CoreKind::Dm: return "dm";
    case CoreKind::LinearFeature: return "linear";
  }
  return "?";
}

CoordState CoordState::init(int64_t n_coords, int layers) {
  if (n_coords < 1)
    throw Error(ErrorCategory::Runtime, "bad_state", "init_state: need at least one coordinate");
  CoordState s;
  int n = static_cast<int>(n_coords);
  s.m = Tensor(std::vector<int>{n});
  s.v = Tensor(std::vector<int>{n});
  for (int l = 0; l < layers; l++) s.hc.emplace_back(std::vector<int>{n, 2 * kHidden});
  s.t = 0;
  return s;
}

static void require_finite(const Tensor& g, const char* who) {
  if (!g.all_finite()) {
    for (int64_t i = 0; i < g.numel(); i++)
      if (!std::isfinite(g[i]))
        throw Error(ErrorCategory::Runtime, "nonfinite_gradient",
                    std::string(who) + ": non-finite gradient at coordinate " + std::to_string(i) +
                        " (" + std::to_string(g[i]) + ")");
  }
}

Tensor compute_inputs(CoordState& state, const Tensor& g_flat, double beta1, double beta2,
                      double eps) {
  require_finite(g_flat, "compute_inputs");
  if (g_flat.numel() != state.m.numel())
    throw ShapeError("compute_inputs: gradient " + g_flat.shape_str() + " for state of " +
                     std::to_string(state.m.numel()) + " coordinates");
  state.t += 1;
  const int64_t n = g_flat.numel();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  Tensor feats(std::vector<int>{static_cast<int>(n), 2});
  double* m = state.m.data();
  double* v = state.v.data();
  const double* g = g_flat.data();
  double* f = feats.data();
  for (int64_t i = 0; i < n; i++) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    double denom = std::sqrt(v[i] / c2) + eps;
    f[2 * i] = (m[i] / c1) / denom;
    f[2 * i + 1] = g[i] / denom;
  }
  return feats;
}

Tensor dm_preprocess(const Tensor& g_flat, double p) {
  require_finite(g_flat, "dm_preprocess");
  const int64_t n = g_flat.numel();
  const double cutoff = std::exp(-p);
  const double expp = std::exp(p);
  Tensor feats(std::vector<int>{static_cast<int>(n), 2});
  for (int64_t i = 0; i < n; i++) {
    double g = g_flat[i];
    if (std::abs(g) >= cutoff) {
      feats[2 * i] = std::log(std::abs(g)) / p;
      feats[2 * i + 1] = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    } else {
      feats[2 * i] = -1.0;
      feats[2 * i + 1] = expp * g;
    }
  }
  return feats;
}

std::vector<const Tensor*> OptimizerCore::phi_view() const {
  auto mut = const_cast<OptimizerCore*>(this)->phi();
  return {mut.begin(), mut.end()};
}

uint64_t OptimizerCore::phi_hash() const {
  uint64_t h = 1469598103934665603ULL;
  for (const Tensor* t : phi_view()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
    size_t nb = static_cast<size_t>(t->numel()) * sizeof(double);
    for (size_t i = 0; i < nb; i++) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

namespace {

// value-mode: out (n x 1) = tanh-bounded or plain affine readout of h (n x 20)
Tensor readout_values(const Tensor& h, const Tensor& w_out, const Tensor& b_out, double alpha,
                      bool bounded) {
  const int n = h.dim(0);
  Tensor out(std::vector<int>{n});
  kern::matmul_nn(h.data(), w_out.data(), out.data(), n, h.dim(1), 1);
  if (bounded) {
    for (int i = 0; i < n; i++) out[i] += b_out[0];
    kern::tanh_arr(out.data(), out.data(), n);
    for (int i = 0; i < n; i++) out[i] *= alpha;
  } else {
    for (int i = 0; i < n; i++) out[i] += b_out[0];
  }
  return out;
}

Tensor override_values(const Tensor& feats, const OutputOverride& ov, double alpha, bool bounded) {
  const int n = feats.dim(0);
  Tensor out(std::vector<int>{n});
  for (int i = 0; i < n; i++) out[i] = ov.coeff * feats.at(i, ov.column);
  if (bounded) {
    kern::tanh_arr(out.data(), out.data(), n);
    for (int i = 0; i < n; i++) out[i] *= alpha;
  }
  return out;
}

// value-mode LSTM stack: consumes x (n x din), updates hc per layer in place
Tensor lstm_stack_values(const Tensor& x0, std::vector<Tensor>& hc, const Tensor& w1,
                         const Tensor& b1, const Tensor& w2, const Tensor& b2) {
  detail::LstmWork work;
  const int n = x0.dim(0);
  Tensor hc1_new(std::vector<int>{n, 2 * kHidden});
  detail::lstm_cell_forward(x0, hc[0], w1, b1, hc1_new, nullptr, nullptr, work);
  hc[0] = std::move(hc1_new);
  Tensor h1(std::vector<int>{n, kHidden});
  for (int i = 0; i < n; i++)
    std::memcpy(h1.data() + static_cast<size_t>(i) * kHidden,
                hc[0].data() + static_cast<size_t>(i) * 2 * kHidden, sizeof(double) * kHidden);
  Tensor hc2_new(std::vector<int>{n, 2 * kHidden});
  detail::lstm_cell_forward(h1, hc[1], w2, b2, hc2_new, nullptr, nullptr, work);
  hc[1] = std::move(hc2_new);
  Tensor h2(std::vector<int>{n, kHidden});
  for (int i = 0; i < n; i++)
    std::memcpy(h2.data() + static_cast<size_t>(i) * kHidden,
                hc[1].data() + static_cast<size_t>(i) * 2 * kHidden, sizeof(double) * kHidden);
  return h2;
}

}  // namespace

// ---------------------------------------------------------------------------
// RnnPropCore
// ---------------------------------------------------------------------------

RnnPropCore::RnnPropCore() {
  p_.w_pre = Tensor(std::vector<int>{2, kHidden});
  p_.b_pre = Tensor(std::vector<int>{kHidden});
  p_.w1 = Tensor(std::vector<int>{2 * kHidden, 4 * kHidden});
  p_.b1 = Tensor(std::vector<int>{4 * kHidden});
  p_.w2 = Tensor(std::vector<int>{2 * kHidden, 4 * kHidden});
  p_.b2 = Tensor(std::vector<int>{4 * kHidden});
  p_.w_out = Tensor(std::vector<int>{kHidden, 1});
  p_.b_out = Tensor(std::vector<int>{1});
}

std::unique_ptr<RnnPropCore> RnnPropCore::random_init(RandomStream& rng) {
  auto core = std::make_unique<RnnPropCore>();
  // weights N(0, 0.1), biases zero
  for (Tensor* w : {&core->p_.w_pre, &core->p_.w1, &core->p_.w2, &core->p_.w_out})
    for (int64_t i = 0; i < w->numel(); i++) (*w)[i] = rng.normal(0.0, 0.1);
  return core;
}

std::vector<ParamSpec> RnnPropCore::phi_spec() const {
  return {{"w_pre", {2, kHidden}},          {"b_pre", {kHidden}},
          {"lstm1_w", {2 * kHidden, 4 * kHidden}}, {"lstm1_b", {4 * kHidden}},
          {"lstm2_w", {2 * kHidden, 4 * kHidden}}, {"lstm2_b", {4 * kHidden}},
          {"w_out", {kHidden, 1}},          {"b_out", {1}}};
}

std::vector<Tensor*> RnnPropCore::phi() {
  return {&p_.w_pre, &p_.b_pre, &p_.w1, &p_.b1, &p_.w2, &p_.b2, &p_.w_out, &p_.b_out};
}

std::unique_ptr<OptimizerCore> RnnPropCore::clone() const {
  return std::make_unique<RnnPropCore>(*this);
}

Tensor RnnPropCore::step_values(CoordState& state, const Tensor& feats,
                                const OutputOverride* ov) const {
  const int n = feats.dim(0);
  if (ov) return override_values(feats, *ov, alpha_, /*bounded=*/true);
  Tensor pre(std::vector<int>{n, kHidden});
  kern::matmul_nn_bias(feats.data(), p_.w_pre.data(), p_.b_pre.data(), pre.data(), n, 2, kHidden);
  for (int64_t i = 0; i < pre.numel(); i++)
    if (pre[i] < 0.0) pre[i] = kern::exp_scalar(pre[i]) - 1.0;
  Tensor h2 = lstm_stack_values(pre, state.hc, p_.w1, p_.b1, p_.w2, p_.b2);
  return readout_values(h2, p_.w_out, p_.b_out, alpha_, /*bounded=*/true);
}

Value RnnPropCore::step_on_tape(Tape& tape, std::span<const Value> phi_nodes,
                                std::vector<Value>& hc_nodes, Value feats) const {
  (void)tape;
  Value pre = elu(add(matmul(feats, phi_nodes[0]), phi_nodes[1]));
  hc_nodes[0] = lstm_cell(pre, hc_nodes[0], phi_nodes[2], phi_nodes[3]);
  Value h1 = slice_cols(hc_nodes[0], 0, kHidden);
  hc_nodes[1] = lstm_cell(h1, hc_nodes[1], phi_nodes[4], phi_nodes[5]);
  Value h2 = slice_cols(hc_nodes[1], 0, kHidden);
  Value x_out = add(matmul(h2, phi_nodes[6]), phi_nodes[7]);
  return scale(tanh(x_out), alpha_);
}

// ---------------------------------------------------------------------------
// DmCore
// ---------------------------------------------------------------------------

DmCore::DmCore() {
  p_.w1 = Tensor(std::vector<int>{2 + kHidden, 4 * kHidden});
  p_.b1 = Tensor(std::vector<int>{4 * kHidden});
  p_.w2 = Tensor(std::vector<int>{2 * kHidden, 4 * kHidden});
  p_.b2 = Tensor(std::vector<int>{4 * kHidden});
  p_.w_out = Tensor(std::vector<int>{kHidden, 1});
  p_.b_out = Tensor(std::vector<int>{1});
}

std::unique_ptr<DmCore> DmCore::random_init(RandomStream& rng) {
  auto core = std::make_unique<DmCore>();
  for (Tensor* w : {&core->p_.w1, &core->p_.w2, &core->p_.w_out})
    for (int64_t i = 0; i < w->numel(); i++) (*w)[i] = rng.normal(0.0, 0.1);
  return core;
}

std::vector<ParamSpec> DmCore::phi_spec() const {
  return {{"lstm1_w", {2 + kHidden, 4 * kHidden}}, {"lstm1_b", {4 * kHidden}},
          {"lstm2_w", {2 * kHidden, 4 * kHidden}}, {"lstm2_b", {4 * kHidden}},
          {"w_out", {kHidden, 1}},                 {"b_out", {1}}};
}

std::vector<Tensor*> DmCore::phi() {
  return {&p_.w1, &p_.b1, &p_.w2, &p_.b2, &p_.w_out, &p_.b_out};
}

std::unique_ptr<OptimizerCore> DmCore::clone() const { return std::make_unique<DmCore>(*this); }

Tensor DmCore::step_values(CoordState& state, const Tensor& feats,
                           const OutputOverride* ov) const {
  if (ov) return override_values(feats, *ov, 0.0, /*bounded=*/false);
  Tensor h2 = lstm_stack_values(feats, state.hc, p_.w1, p_.b1, p_.w2, p_.b2);
  return readout_values(h2, p_.w_out, p_.b_out, 0.0, /*bounded=*/false);
}

Value DmCore::step_on_tape(Tape& tape, std::span<const Value> phi_nodes,
                           std::vector<Value>& hc_nodes, Value feats) const {
  (void)tape;
  hc_nodes[0] = lstm_cell(feats, hc_nodes[0], phi_nodes[0], phi_nodes[1]);
  Value h1 = slice_cols(hc_nodes[0], 0, kHidden);
  hc_nodes[1] = lstm_cell(h1, hc_nodes[1], phi_nodes[2], phi_nodes[3]);
  Value h2 = slice_cols(hc_nodes[1], 0, kHidden);
  return add(matmul(h2, phi_nodes[4]), phi_nodes[5]);
}

// ---------------------------------------------------------------------------
// LinearFeatureCore
// ---------------------------------------------------------------------------

LinearFeatureCore::LinearFeatureCore() {
  w_ = Tensor(std::vector<int>{2, 1});
  b_ = Tensor(std::vector<int>{1});
}

std::vector<ParamSpec> LinearFeatureCore::phi_spec() const {
  return {{"w", {2, 1}}, {"b", {1}}};
}

std::vector<Tensor*> LinearFeatureCore::phi() { return {&w_, &b_}; }

std::unique_ptr<OptimizerCore> LinearFeatureCore::clone() const {
  return std::make_unique<LinearFeatureCore>(*this);
}

Tensor LinearFeatureCore::step_values(CoordState& state, const Tensor& feats,
                                      const OutputOverride* ov) const {
  (void)state;
  if (ov) return override_values(feats, *ov, alpha_, /*bounded=*/true);
  const int n = feats.dim(0);
  Tensor out(std::vector<int>{n});
  kern::matmul_nn(feats.data(), w_.data(), out.data(), n, 2, 1);
  for (int i = 0; i < n; i++) out[i] += b_[0];
  kern::tanh_arr(out.data(), out.data(), n);
  for (int i = 0; i < n; i++) out[i] *= alpha_;
  return out;
}

Value LinearFeatureCore::step_on_tape(Tape& tape, std::span<const Value> phi_nodes,
                                      std::vector<Value>& hc_nodes, Value feats) const {
  (void)tape;
  (void)hc_nodes;
  Value x_out = add(matmul(feats, phi_nodes[0]), phi_nodes[1]);
  return scale(tanh(x_out), alpha_);
}

std::unique_ptr<OptimizerCore> make_core(CoreKind kind) {
  switch (kind) {
    case CoreKind::RnnProp: return std::make_unique<RnnPropCore>();
    case CoreKind::Dm: return std::make_unique<DmCore>();
    case CoreKind::LinearFeature: return std::make_unique<LinearFeatureCore>();
  }
  throw Error(ErrorCategory::Config, "bad_core", "unknown optimizer core");
}

std::unique_ptr<OptimizerCore> make_core_random(CoreKind kind, RandomStream& rng) {
  switch (kind) {
    case CoreKind::RnnProp: return RnnPropCore::random_init(rng);
    case CoreKind::Dm: return DmCore::random_init(rng);
    case CoreKind::LinearFeature: {
      auto c = std::make_unique<LinearFeatureCore>();
      for (int64_t i = 0; i < c->weights().numel(); i++) c->weights()[i] = rng.normal(0.0, 0.1);
      return c;
    }
  }
  throw Error(ErrorCategory::Config, "bad_core", "unknown optimizer core");
}

Tensor optimizer_features(const OptimizerCore& core, CoordState& state, const Tensor& g_flat) {
  if (core.feature_kind() == FeatureKind::AdamNormalized)
    return compute_inputs(state, g_flat, core.feature_beta1(), core.feature_beta2(),
                          core.feature_eps());
  state.t += 1;
  double p = 10.0;
  if (const auto* dm = dynamic_cast<const DmCore*>(&core)) p = dm->p_scale();
  return dm_preprocess(g_flat, p);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

static constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& dir, const OptimizerCore& core,
                     int64_t iteration, double moving_avg_loss) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["model"] = core_kind_name(core.kind());
  manifest["dtype"] = "f64";
  manifest["byte_order"] = "little_endian";
  manifest["data_file"] = "params.bin";
  if (iteration >= 0) {
    manifest["iteration"] = iteration;
    manifest["moving_avg_loss"] = moving_avg_loss;
  }
  auto spec = core.phi_spec();
  auto tensors = core.phi_view();
  nlohmann::json tens = nlohmann::json::array();
  int64_t offset = 0;
  for (size_t i = 0; i < spec.size(); i++) {
    nlohmann::json t;
    t["name"] = spec[i].name;
    t["shape"] = spec[i].shape;
    t["offset"] = offset;
    t["count"] = tensors[i]->numel();
    tens.push_back(t);
    offset += tensors[i]->numel();
  }
  manifest["tensors"] = tens;

  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
  std::ofstream bf(dir / "params.bin", std::ios::binary);
  if (!mf || !bf)
    throw Error(ErrorCategory::Checkpoint, "write_failed",
                "checkpoint: cannot write to " + dir.string());
  for (const Tensor* t : tensors) {
    static_assert(std::endian::native == std::endian::little,
                  "params.bin writer assumes a little-endian host");
    bf.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(t->numel() * sizeof(double)));
  }
}

std::unique_ptr<OptimizerCore> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf)
    throw Error(ErrorCategory::Checkpoint, "missing_file",
                "checkpoint: no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Checkpoint, "bad_manifest",
                "checkpoint: " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointVersion)
    throw Error(ErrorCategory::Checkpoint, "bad_version",
                "checkpoint: unsupported format_version in " + dir.string());
  std::string model = manifest.value("model", "");
  std::unique_ptr<OptimizerCore> core;
  for (CoreKind k : {CoreKind::RnnProp, CoreKind::Dm, CoreKind::LinearFeature})
    if (model == core_kind_name(k)) core = make_core(k);
  if (!core)
    throw Error(ErrorCategory::Checkpoint, "bad_model",
                "checkpoint: unknown model '" + model + "'");

  std::ifstream bf(dir / manifest.value("data_file", "params.bin"), std::ios::binary);
  if (!bf)
    throw Error(ErrorCategory::Checkpoint, "missing_file",
                "checkpoint: no params.bin in " + dir.string());
  auto spec = core->phi_spec();
  auto tensors = core->phi();
  const auto& tens = manifest.at("tensors");
  if (tens.size() != spec.size())
    throw Error(ErrorCategory::Checkpoint, "bad_manifest",
                "checkpoint: expected " + std::to_string(spec.size()) + " tensors, manifest has " +
                    std::to_string(tens.size()));
  for (size_t i = 0; i < spec.size(); i++) {
    if (tens[i].value("name", "") != spec[i].name ||
        tens[i].value("count", int64_t(-1)) != tensors[i]->numel())
      throw Error(ErrorCategory::Checkpoint, "bad_manifest",
                  "checkpoint: tensor " + std::to_string(i) + " does not match model layout");
    bf.read(reinterpret_cast<char*>(tensors[i]->data()),
            static_cast<std::streamsize>(tensors[i]->numel() * sizeof(double)));
    if (!bf)
      throw Error(ErrorCategory::Checkpoint, "truncated",
                  "checkpoint: params.bin truncated at tensor '" + spec[i].name + "'");
  }
  return core;
}

}  // namespace lopt
