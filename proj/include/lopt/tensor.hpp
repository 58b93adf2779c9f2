#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lopt/errors.hpp"
#include "lopt/rng.hpp"

namespace lopt {

// Dense row-major tensor of 64-bit reals. Shapes are small (rank <= 2 in
// practice); all numeric state in the project lives in these.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  // Uninitialized storage for hot paths that overwrite every element.
  static Tensor uninit(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v);
  static Tensor from(std::vector<int> shape, std::vector<double> data);
  static Tensor randn(std::vector<int> shape, RandomStream& rng, double mean = 0.0,
                      double stddev = 1.0);
  static Tensor uniform(std::vector<int> shape, RandomStream& rng, double lo, double hi);

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.n); }
  bool empty() const { return data_.n == 0; }

  double* data() { return data_.p.get(); }
  const double* data() const { return data_.p.get(); }

  double& operator[](int64_t i) { return data_.p[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_.p[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data_.p[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_.p[static_cast<size_t>(i) * shape_[1] + j]; }

  // Value of a single-element tensor; throws ShapeError otherwise.
  double item() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  void fill(double v);

 private:
  struct Buf {
    Buf() = default;
    explicit Buf(size_t n, bool zeroed)
        : p(zeroed ? new double[n]() : new double[n]), n(n) {}
    Buf(const Buf& o) : p(o.n ? new double[o.n] : nullptr), n(o.n) {
      if (n) std::copy(o.p.get(), o.p.get() + n, p.get());
    }
    Buf(Buf&&) noexcept = default;
    Buf& operator=(const Buf& o) {
      if (this != &o) {
        if (n != o.n) p.reset(o.n ? new double[o.n] : nullptr);
        n = o.n;
        if (n) std::copy(o.p.get(), o.p.get() + n, p.get());
      }
      return *this;
    }
    Buf& operator=(Buf&&) noexcept = default;
    std::unique_ptr<double[]> p;
    size_t n = 0;
  };

  std::vector<int> shape_;
  Buf data_;
};

std::string shape_str(const std::vector<int>& shape);

// ---------------------------------------------------------------------------
// Numeric kernels. All kernels are sequential with a fixed accumulation
// order, so repeated calls are bit-identical. exp/sigmoid/tanh use a
// polynomial exp (max relative error ~3e-13) written so the compiler can
// vectorize the loops; std::exp is too slow for the coordinatewise LSTM
// inner loop.
// ---------------------------------------------------------------------------
namespace kern {

double exp_scalar(double x);

void exp_arr(const double* x, double* y, int64_t n);
void sigmoid_arr(const double* x, double* y, int64_t n);
void tanh_arr(const double* x, double* y, int64_t n);

// C[m x n] = A[m x k] * B[k x n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
// C[m x n] = A[m x k] * B[k x n] with each row of C seeded from bias[n]
void matmul_nn_bias(const double* a, const double* b, const double* bias, double* c,
                    int m, int k, int n);
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// C[k x n] += A[m x k]^T * B[m x n]  (caller zeroes C)
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace kern

// Shape-checked tensor math used by the tape and the value-mode optimizer
// paths. Binary ops require identical shapes unless stated otherwise.
namespace tmath {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// rows of a (m x n) plus bias (n)
Tensor add_rowvec(const Tensor& a, const Tensor& bias);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
double sum(const Tensor& a);

void add_inplace(Tensor& a, const Tensor& b);
void axpy(Tensor& acc, double c, const Tensor& x);  // acc += c * x

}  // namespace tmath

}  // namespace lopt
