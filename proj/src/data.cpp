#include "lopt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace lopt {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

uint32_t read_be32(std::ifstream& f, const std::string& what) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f)
    throw Error(ErrorCategory::Data, "truncated", "idx: truncated while reading " + what);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_be32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi)
    throw Error(ErrorCategory::Data, "missing_file", "idx: cannot open " + images_path.string());
  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl)
    throw Error(ErrorCategory::Data, "missing_file", "idx: cannot open " + labels_path.string());

  uint32_t im = read_be32(fi, "image magic");
  if (im != kImageMagic)
    throw Error(ErrorCategory::Data, "bad_magic",
                "idx: image magic " + std::to_string(im) + " in " + images_path.string());
  uint32_t n_images = read_be32(fi, "image count");
  uint32_t rows = read_be32(fi, "rows");
  uint32_t cols = read_be32(fi, "cols");
  if (rows * cols != kImageDim)
    throw Error(ErrorCategory::Data, "bad_dims",
                "idx: image dims " + std::to_string(rows) + "x" + std::to_string(cols));

  uint32_t lm = read_be32(fl, "label magic");
  if (lm != kLabelMagic)
    throw Error(ErrorCategory::Data, "bad_magic",
                "idx: label magic " + std::to_string(lm) + " in " + labels_path.string());
  uint32_t n_labels = read_be32(fl, "label count");
  if (n_images != n_labels)
    throw Error(ErrorCategory::Data, "count_mismatch",
                "idx: " + std::to_string(n_images) + " images vs " + std::to_string(n_labels) +
                    " labels");

  Dataset ds;
  ds.source = DataSource::Mnist;
  ds.images = Tensor(std::vector<int>{static_cast<int>(n_images), kImageDim});
  ds.labels.resize(n_images);
  std::vector<unsigned char> buf(kImageDim);
  for (uint32_t i = 0; i < n_images; i++) {
    fi.read(reinterpret_cast<char*>(buf.data()), kImageDim);
    if (!fi) throw Error(ErrorCategory::Data, "truncated", "idx: truncated image payload");
    double* row = ds.images.data() + static_cast<size_t>(i) * kImageDim;
    for (int j = 0; j < kImageDim; j++) row[j] = buf[static_cast<size_t>(j)] / 255.0;
    char lb;
    fl.read(&lb, 1);
    if (!fl) throw Error(ErrorCategory::Data, "truncated", "idx: truncated label payload");
    int label = static_cast<unsigned char>(lb);
    if (label > 9)
      throw Error(ErrorCategory::Data, "bad_label", "idx: label " + std::to_string(label));
    ds.labels[i] = label;
  }
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  std::ofstream fi(images_path, std::ios::binary);
  std::ofstream fl(labels_path, std::ios::binary);
  if (!fi || !fl)
    throw Error(ErrorCategory::Data, "write_failed", "idx: cannot write output files");
  int n = ds.size();
  write_be32(fi, kImageMagic);
  write_be32(fi, static_cast<uint32_t>(n));
  write_be32(fi, 28);
  write_be32(fi, 28);
  write_be32(fl, kLabelMagic);
  write_be32(fl, static_cast<uint32_t>(n));
  std::vector<unsigned char> buf(kImageDim);
  for (int i = 0; i < n; i++) {
    const double* row = ds.images.data() + static_cast<size_t>(i) * kImageDim;
    for (int j = 0; j < kImageDim; j++)
      buf[static_cast<size_t>(j)] = static_cast<unsigned char>(std::lround(row[j] * 255.0));
    fi.write(reinterpret_cast<char*>(buf.data()), kImageDim);
    char lb = static_cast<char>(ds.labels[static_cast<size_t>(i)]);
    fl.write(&lb, 1);
  }
}

Dataset synthetic_fallback(uint64_t seed, int n) {
  if (n < 10)
    throw Error(ErrorCategory::Data, "too_small", "synthetic_fallback: need n >= 10");
  RandomStream rng(seed, /*stream=*/0x5d);
  Tensor prototypes(std::vector<int>{kClasses, kImageDim});
  for (int64_t i = 0; i < prototypes.numel(); i++)
    prototypes[i] = std::clamp(rng.normal(0.5, 0.25), 0.0, 1.0);
  Dataset ds;
  ds.source = DataSource::Synthetic;
  ds.images = Tensor(std::vector<int>{n, kImageDim});
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; i++) {
    int label = i % kClasses;
    ds.labels[static_cast<size_t>(i)] = label;
    const double* proto = prototypes.data() + static_cast<size_t>(label) * kImageDim;
    double* row = ds.images.data() + static_cast<size_t>(i) * kImageDim;
    for (int j = 0; j < kImageDim; j++)
      row[j] = std::clamp(proto[j] + rng.normal(0.0, 0.3), 0.0, 1.0);
  }
  return ds;
}

MinibatchSampler::MinibatchSampler(const Dataset& ds, int batch_size, RandomStream rng)
    : ds_(&ds), batch_size_(batch_size), rng_(rng) {
  if (batch_size <= 0 || batch_size > ds.size())
    throw Error(ErrorCategory::Data, "bad_batch",
                "minibatch: batch size " + std::to_string(batch_size) + " for dataset of " +
                    std::to_string(ds.size()));
}

Minibatch MinibatchSampler::next() {
  // Partial Fisher-Yates over an index vector: uniform without replacement.
  int n = ds_->size();
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; i++) idx[static_cast<size_t>(i)] = i;
  std::vector<int> picked(static_cast<size_t>(batch_size_));
  for (int i = 0; i < batch_size_; i++) {
    int j = i + static_cast<int>(rng_.below(static_cast<uint64_t>(n - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    picked[static_cast<size_t>(i)] = idx[static_cast<size_t>(i)];
  }
  return at(picked);
}

Minibatch MinibatchSampler::at(const std::vector<int>& indices) const {
  Minibatch mb;
  int b = static_cast<int>(indices.size());
  mb.x = Tensor(std::vector<int>{b, kImageDim});
  mb.y_onehot = Tensor(std::vector<int>{b, kClasses});
  mb.indices = indices;
  for (int i = 0; i < b; i++) {
    int src = indices[static_cast<size_t>(i)];
    std::memcpy(mb.x.data() + static_cast<size_t>(i) * kImageDim,
                ds_->images.data() + static_cast<size_t>(src) * kImageDim,
                sizeof(double) * kImageDim);
    mb.y_onehot.at(i, ds_->labels[static_cast<size_t>(src)]) = 1.0;
  }
  return mb;
}

}  // namespace lopt
