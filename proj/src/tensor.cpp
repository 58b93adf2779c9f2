#include "lopt/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace lopt {

static int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor: nonpositive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_ = Buf(static_cast<size_t>(shape_numel(shape_)), /*zeroed=*/true);
}

Tensor Tensor::uninit(std::vector<int> shape) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = Buf(static_cast<size_t>(shape_numel(t.shape_)), /*zeroed=*/false);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t = Tensor::uninit(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t(std::vector<int>{1});
  t[0] = v;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("tensor: " + std::to_string(data.size()) +
                     " values do not fill shape " + lopt::shape_str(shape));
  Tensor t = Tensor::uninit(std::move(shape));
  std::copy(data.begin(), data.end(), t.data());
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, RandomStream& rng, double mean, double stddev) {
  Tensor t = Tensor::uninit(std::move(shape));
  for (int64_t i = 0; i < t.numel(); i++) t[i] = rng.normal(mean, stddev);
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, RandomStream& rng, double lo, double hi) {
  Tensor t = Tensor::uninit(std::move(shape));
  for (int64_t i = 0; i < t.numel(); i++) t[i] = rng.uniform(lo, hi);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str() + " is not scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (int64_t i = 0; i < numel(); i++)
    if (!std::isfinite(data_.p[static_cast<size_t>(i)])) return false;
  return true;
}

void Tensor::fill(double v) {
  for (int64_t i = 0; i < numel(); i++) data_.p[static_cast<size_t>(i)] = v;
}

std::string Tensor::shape_str() const { return lopt::shape_str(shape_); }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); i++) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------
namespace kern {

// exp via Cody-Waite range reduction and an Estrin-evaluated degree-10
// Taylor polynomial on |r| <= ln(2)/2. Inputs are clamped to +-708 which
// covers every caller (gate pre-activations, scaled losses).
static inline double exp_core(double x) {
  const double LOG2E = 1.4426950408889634074;
  const double C1 = 0.693145751953125;
  const double C2 = 1.42860682030941723212e-6;
  const double MAGIC = 6755399441055744.0;  // 1.5 * 2^52: rounds to int in mantissa
  x = x < -708.0 ? -708.0 : (x > 708.0 ? 708.0 : x);
  double kd = LOG2E * x + MAGIC;
  int64_t ki = std::bit_cast<int64_t>(kd) - std::bit_cast<int64_t>(MAGIC);
  kd -= MAGIC;
  double r = (x - kd * C1) - kd * C2;
  double r2 = r * r;
  double r4 = r2 * r2;
  double p01 = 1.0 + r;
  double p23 = 0.5 + r * (1.0 / 6);
  double p45 = (1.0 / 24) + r * (1.0 / 120);
  double p67 = (1.0 / 720) + r * (1.0 / 5040);
  double p89 = (1.0 / 40320) + r * (1.0 / 362880);
  double pa = 1.0 / 3628800;
  double q0 = p01 + r2 * p23;
  double q1 = p45 + r2 * p67;
  double q2 = p89 + r2 * pa;
  double p = q0 + r4 * (q1 + r4 * q2);
  // 2^ki via exponent bits; ki is in [-1075, 1025] after clamping.
  // Denormal-range results flush through a second scale step.
  if (ki < -1000) {
    double sc = std::bit_cast<double>((ki + 1000 + 1023LL) << 52);
    return p * sc * 0x1.0p-1000;
  }
  double sc = std::bit_cast<double>((ki + 1023LL) << 52);
  return p * sc;
}

double exp_scalar(double x) { return exp_core(x); }

void exp_arr(const double* x, double* y, int64_t n) {
#pragma omp simd
  for (int64_t i = 0; i < n; i++) y[i] = exp_core(x[i]);
}

void sigmoid_arr(const double* x, double* y, int64_t n) {
#pragma omp simd
  for (int64_t i = 0; i < n; i++) {
    double v = x[i] < -40.0 ? -40.0 : (x[i] > 40.0 ? 40.0 : x[i]);
    y[i] = 1.0 / (1.0 + exp_core(-v));
  }
}

void tanh_arr(const double* x, double* y, int64_t n) {
#pragma omp simd
  for (int64_t i = 0; i < n; i++) {
    double v = x[i] < -20.0 ? -20.0 : (x[i] > 20.0 ? 20.0 : x[i]);
    double e = exp_core(-2.0 * v);
    y[i] = (1.0 - e) / (1.0 + e);
  }
}

// One C row accumulates in registers; B rows stream through L1/L2. For the
// shapes this project hits (k <= 800, n <= 80) this outruns a generic BLAS.
static constexpr int kRowBlock = 80;

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int j0 = 0; j0 < n; j0 += kRowBlock) {
    int jn = std::min(n - j0, kRowBlock);
    for (int i = 0; i < m; i++) {
      double acc[kRowBlock] = {0};
      const double* ai = a + static_cast<size_t>(i) * k;
      for (int p = 0; p < k; p++) {
        double av = ai[p];
        const double* bp = b + static_cast<size_t>(p) * n + j0;
#pragma omp simd
        for (int j = 0; j < jn; j++) acc[j] += av * bp[j];
      }
      std::memcpy(c + static_cast<size_t>(i) * n + j0, acc, sizeof(double) * jn);
    }
  }
}

void matmul_nn_bias(const double* a, const double* b, const double* bias, double* c,
                    int m, int k, int n) {
  for (int j0 = 0; j0 < n; j0 += kRowBlock) {
    int jn = std::min(n - j0, kRowBlock);
    for (int i = 0; i < m; i++) {
      double acc[kRowBlock];
      std::memcpy(acc, bias + j0, sizeof(double) * jn);
      const double* ai = a + static_cast<size_t>(i) * k;
      for (int p = 0; p < k; p++) {
        double av = ai[p];
        const double* bp = b + static_cast<size_t>(p) * n + j0;
#pragma omp simd
        for (int j = 0; j < jn; j++) acc[j] += av * bp[j];
      }
      std::memcpy(c + static_cast<size_t>(i) * n + j0, acc, sizeof(double) * jn);
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  // Transpose B (n x k -> k x n) once, then reuse the nn kernel. The copy is
  // small next to the multiply for every caller shape.
  std::vector<double> bt(static_cast<size_t>(k) * n);
  for (int j = 0; j < n; j++)
    for (int p = 0; p < k; p++) bt[static_cast<size_t>(p) * n + j] = b[static_cast<size_t>(j) * k + p];
  matmul_nn(a, bt.data(), c, m, k, n);
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  // C[k x n] += sum_i outer(A_row_i, B_row_i); i ascending, so the
  // accumulation order is fixed.
  for (int i = 0; i < m; i++) {
    const double* ai = a + static_cast<size_t>(i) * k;
    const double* bi = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; p++) {
      double av = ai[p];
      double* cp = c + static_cast<size_t>(p) * n;
#pragma omp simd
      for (int j = 0; j < n; j++) cp[j] += av * bi[j];
    }
  }
}

}  // namespace kern

// ---------------------------------------------------------------------------
// tmath
// ---------------------------------------------------------------------------
namespace tmath {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: shapes " + a.shape_str() + " and " + b.shape_str() +
                     " do not conform");
  Tensor c = Tensor::uninit({a.dim(0), b.dim(1)});
  kern::matmul_nn(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("add: shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
  Tensor c = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < c.numel(); i++) c[i] = a[i] + b[i];
  return c;
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || bias.dim(0) != a.dim(1))
    throw ShapeError("add_rowvec: shapes " + a.shape_str() + " and " + bias.shape_str() +
                     " do not conform");
  Tensor c = Tensor::uninit(a.shape());
  for (int i = 0; i < a.dim(0); i++)
    for (int j = 0; j < a.dim(1); j++) c.at(i, j) = a.at(i, j) + bias[j];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("sub: shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
  Tensor c = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < c.numel(); i++) c[i] = a[i] - b[i];
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("mul: shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
  Tensor c = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < c.numel(); i++) c[i] = a[i] * b[i];
  return c;
}

Tensor scale(const Tensor& a, double c) {
  Tensor r = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < r.numel(); i++) r[i] = a[i] * c;
  return r;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); i++) s += a[i];
  return s;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("add_inplace: shapes " + a.shape_str() + " and " + b.shape_str() +
                     " differ");
  for (int64_t i = 0; i < a.numel(); i++) a[i] += b[i];
}

void axpy(Tensor& acc, double c, const Tensor& x) {
  if (!acc.same_shape(x))
    throw ShapeError("axpy: shapes " + acc.shape_str() + " and " + x.shape_str() + " differ");
  for (int64_t i = 0; i < acc.numel(); i++) acc[i] += c * x[i];
}

}  // namespace tmath

}  // namespace lopt
