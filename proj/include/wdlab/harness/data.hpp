// Copyright (c) 2026 The wdlab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Datasets: MNIST IDX ingestion (plain or gzip), synthetic teacher data,
// empirical whitening and seeded splits.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "wdlab/error.hpp"
#include "wdlab/linalg.hpp"
#include "wdlab/loss.hpp"
#include "wdlab/nn.hpp"

namespace wdlab {

struct Dataset {
  Matrix x;                         // n x d
  std::vector<std::size_t> y;
  std::size_t classes = 0;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.classes = classes;
    out.x.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
    out.y.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= size()) throw StructuralError("Dataset::subset: index out of range");
      out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
      out.y.push_back(y[idx[i]]);
    }
    return out;
  }

  Targets targets() const { return Targets::classes(y); }
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

/// Whole file contents, transparently inflated when it starts with the gzip
/// magic bytes 0x1f 0x8b.
inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 2 || raw[0] != 0x1f || raw[1] != 0x8b) return raw;

  std::vector<unsigned char> out;
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw std::runtime_error("zlib: inflateInit2 failed");
  zs.next_in = raw.data();
  zs.avail_in = static_cast<uInt>(raw.size());
  unsigned char buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const auto consumed = static_cast<std::size_t>(zs.total_in);
      inflateEnd(&zs);
      throw FormatError(path + ": corrupt or truncated gzip stream", consumed);
    }
    out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      const auto consumed = static_cast<std::size_t>(zs.total_in);
      inflateEnd(&zs);
      throw FormatError(path + ": truncated gzip stream", consumed);
    }
  }
  inflateEnd(&zs);
  return out;
}

namespace detail {

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) throw FormatError(what + ": truncated header", b.size());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace detail

/// Parsed IDX image payload, kept as raw bytes.
struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> pixels;  // count * rows * cols
};

inline IdxImages parse_idx_images(const std::vector<unsigned char>& b, const std::string& what = "images") {
  const std::uint32_t magic = detail::read_be32(b, 0, what);
  if (magic != kIdxImageMagic) {
    throw FormatError(what + ": bad magic " + std::to_string(magic) + ", expected 2051", 0);
  }
  IdxImages img;
  img.count = detail::read_be32(b, 4, what);
  img.rows = detail::read_be32(b, 8, what);
  img.cols = detail::read_be32(b, 12, what);
  const std::size_t need = img.count * img.rows * img.cols;
  if (b.size() < 16 + need) {
    throw FormatError(what + ": payload truncated, expected " + std::to_string(need) + " pixel bytes", b.size());
  }
  img.pixels.assign(b.begin() + 16, b.begin() + static_cast<std::ptrdiff_t>(16 + need));
  return img;
}

inline std::vector<std::size_t> parse_idx_labels(const std::vector<unsigned char>& b, const std::string& what = "labels") {
  const std::uint32_t magic = detail::read_be32(b, 0, what);
  if (magic != kIdxLabelMagic) {
    throw FormatError(what + ": bad magic " + std::to_string(magic) + ", expected 2049", 0);
  }
  const std::size_t count = detail::read_be32(b, 4, what);
  if (b.size() < 8 + count) {
    throw FormatError(what + ": payload truncated, expected " + std::to_string(count) + " labels", b.size());
  }
  std::vector<std::size_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (b[8 + i] > 9) throw FormatError(what + ": label " + std::to_string(b[8 + i]) + " out of range", 8 + i);
    labels[i] = b[8 + i];
  }
  return labels;
}

/// Loads an MNIST image/label pair; pixels are scaled to [0,1].
inline Dataset load_mnist(const std::string& image_path, const std::string& label_path) {
  const IdxImages img = parse_idx_images(read_maybe_gzip(image_path), image_path);
  std::vector<std::size_t> labels = parse_idx_labels(read_maybe_gzip(label_path), label_path);
  if (labels.size() != img.count) {
    throw FormatError("label count " + std::to_string(labels.size()) + " does not match image count " +
                          std::to_string(img.count),
                      4);
  }
  Dataset ds;
  ds.classes = 10;
  ds.y = std::move(labels);
  const std::size_t d = img.rows * img.cols;
  ds.x.resize(static_cast<Eigen::Index>(img.count), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < img.count; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = img.pixels[i * d + j] / 255.0;
    }
  }
  return ds;
}

/// CRC-32 of the raw bytes of image `i`.
inline std::uint32_t idx_image_crc32(const IdxImages& img, std::size_t i) {
  const std::size_t d = img.rows * img.cols;
  if (i >= img.count) throw StructuralError("idx_image_crc32: no image " + std::to_string(i));
  return static_cast<std::uint32_t>(crc32(0L, img.pixels.data() + i * d, static_cast<uInt>(d)));
}

// ---------------------------------------------------------------------------
// Whitening

/// (X - mean) Cov^{-1/2} with the 1/n empirical covariance: the result has
/// sample mean 0 and sample covariance I.
inline Matrix whiten(const Matrix& x) {
  if (x.rows() < 2) throw DegenerateError("whiten: need at least 2 rows");
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows());
  const SymmetricEigen eig = sym_eig(cov);
  const double top = eig.eigenvalues.maxCoeff();
  if (!(eig.eigenvalues.minCoeff() > 1e-12 * std::max(top, 1e-300))) {
    throw DegenerateError("whiten: covariance is rank deficient; reduce the input dimension (e.g. PCA) first");
  }
  return centered * spectral_map(eig, [](double v) { return 1.0 / std::sqrt(v); });
}

inline double whiteness_residual(const Matrix& x) {
  const Vector mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows());
  return std::max(mean.cwiseAbs().maxCoeff(), (cov - Matrix::Identity(cov.rows(), cov.cols())).cwiseAbs().maxCoeff());
}

/// Projection onto the top-k principal directions of a fitted sample, scaled
/// so the fitted sample has mean 0 and covariance I in the new coordinates.
struct PcaWhitener {
  Vector mean;
  Matrix map;  // d x k

  std::size_t components() const { return static_cast<std::size_t>(map.cols()); }

  Matrix apply(const Matrix& x) const {
    if (x.cols() != map.rows()) {
      throw StructuralError("PcaWhitener: input has " + std::to_string(x.cols()) + " columns, fitted on " +
                            std::to_string(map.rows()));
    }
    return (x.rowwise() - mean.transpose()) * map;
  }
};

inline PcaWhitener fit_pca_whitener(const Matrix& x, std::size_t k) {
  const auto d = static_cast<std::size_t>(x.cols());
  if (k == 0 || k > d) throw DomainError("fit_pca_whitener: k must lie in [1, " + std::to_string(d) + "]");
  if (static_cast<std::size_t>(x.rows()) <= k) throw DegenerateError("fit_pca_whitener: need more rows than k");
  PcaWhitener w;
  w.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - w.mean.transpose();
  const SymmetricEigen eig = sym_eig(centered.transpose() * centered / static_cast<double>(x.rows()));
  // Eigenvalues ascend; keep the last k columns, largest first.
  const Eigen::Index first = static_cast<Eigen::Index>(d - k);
  const double top = eig.eigenvalues(static_cast<Eigen::Index>(d) - 1);
  if (!(eig.eigenvalues(first) > 1e-12 * std::max(top, 1e-300))) {
    throw DegenerateError("fit_pca_whitener: fewer than k directions with non-zero variance");
  }
  w.map.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(k); ++j) {
    const Eigen::Index src = static_cast<Eigen::Index>(d) - 1 - j;
    w.map.col(j) = eig.eigenvectors.col(src) / std::sqrt(eig.eigenvalues(src));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticOptions {
  bool whitened = false;
  double min_class_fraction = 0.01;
  int max_teacher_draws = 200;
};

/// Gaussian inputs labelled by the argmax of a random teacher network. The
/// teacher is redrawn until every class holds at least `min_class_fraction`
/// of the examples.
inline Dataset gen_synthetic(std::size_t n, std::size_t d, std::size_t k, const NetworkSpec& teacher,
                             std::uint64_t seed, const SyntheticOptions& opt = {}) {
  if (teacher.input_dim() != d || teacher.output_dim() != k) {
    throw StructuralError("gen_synthetic: teacher dimensions do not match d and k");
  }
  if (teacher.any_bn()) throw StructuralError("gen_synthetic: the teacher must not use BN");
  if (opt.whitened && n <= d) throw DegenerateError("gen_synthetic: whitening needs n > d");
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset ds;
  ds.classes = k;
  ds.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < ds.x.size(); ++i) ds.x.data()[i] = g(rng);
  if (opt.whitened) ds.x = whiten(ds.x);
  const auto need = static_cast<std::size_t>(std::ceil(opt.min_class_fraction * static_cast<double>(n)));
  for (int attempt = 0; attempt < opt.max_teacher_draws; ++attempt) {
    const NetworkParams params = init_params(teacher, rng);
    ds.y = argmax_rows(forward(teacher, params, ds.x, Mode::eval).logits);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t y : ds.y) ++counts[y];
    if (*std::min_element(counts.begin(), counts.end()) >= need) return ds;
  }
  throw DegenerateError("gen_synthetic: no teacher produced balanced enough classes");
}

// ---------------------------------------------------------------------------
// Splits

struct Splits {
  std::vector<std::size_t> train, val, test;
};

/// Disjoint random train/val/test index sets drawn from [0, total).
inline Splits make_splits(std::size_t total, std::size_t n_train, std::size_t n_val, std::size_t n_test,
                          std::uint64_t seed) {
  if (n_train + n_val + n_test > total) {
    throw DomainError("make_splits: " + std::to_string(n_train + n_val + n_test) + " examples requested, " +
                      std::to_string(total) + " available");
  }
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Splits s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val + n_test));
  return s;
}

}  // namespace wdlab
