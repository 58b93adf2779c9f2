#pragma once

#include <filesystem>
#include <vector>

#include "lopt/rng.hpp"
#include "lopt/tensor.hpp"

namespace lopt {

constexpr int kImageDim = 784;  // 28 x 28
constexpr int kClasses = 10;

enum class DataSource { Mnist, Synthetic };

struct Dataset {
  Tensor images;            // N x 784, values in [0, 1]
  std::vector<int> labels;  // N entries in [0, 9]
  DataSource source = DataSource::Synthetic;

  int size() const { return images.empty() ? 0 : images.dim(0); }
};

// IDX container (big-endian headers, u8 payload). Image magic 0x00000803,
// label magic 0x00000801. Pixels are divided by 255 on load. Errors carry
// distinct codes: bad_magic, truncated, count_mismatch.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Deterministic stand-in when no MNIST files are configured: 10 Gaussian
// class prototypes in 784-dim, samples are prototype + N(0, 0.3) noise
// clipped to [0, 1], labels assigned round-robin.
Dataset synthetic_fallback(uint64_t seed, int n);

struct Minibatch {
  Tensor x;                 // b x 784
  Tensor y_onehot;          // b x 10
  std::vector<int> indices;
};

// Uniform sampling without replacement within each batch.
class MinibatchSampler {
 public:
  MinibatchSampler(const Dataset& ds, int batch_size, RandomStream rng);
  Minibatch next();
  Minibatch at(const std::vector<int>& indices) const;

 private:
  const Dataset* ds_;
  int batch_size_;
  RandomStream rng_;
};

}  // namespace lopt
