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

// Checkpoints. Both encodings start with a one-line JSON header describing
// the run and the tensor shapes. `json` keeps the tensors in that document;
// `bin` follows the header line with the tensors as little-endian float64 in
// layer order: W_l (row-major), b_l if present, BN running mean and variance
// if the layer has BN.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "wdlab/error.hpp"
#include "wdlab/harness/config.hpp"
#include "wdlab/nn.hpp"

namespace wdlab::harness {

inline constexpr const char* kCheckpointMagic = "wdlab-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  NetworkParams params;
  BatchNormState bn;
  std::size_t epoch = 0;
};

namespace detail {

inline std::vector<double> row_major(const Matrix& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

inline std::vector<double> as_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f64(const std::string& in, std::size_t off) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck, CheckpointFormat format) {
  const NetworkSpec spec = ck.config.network();
  nlohmann::json header = {{"format", kCheckpointMagic},
                           {"version", kCheckpointVersion},
                           {"encoding", format == CheckpointFormat::json ? "json" : "bin"},
                           {"epoch", ck.epoch},
                           {"config", to_json(ck.config)},
                           {"dims", spec.layer_dims}};
  nlohmann::json layers = nlohmann::json::array();
  std::string payload;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const bool bias = spec.use_bias;
    const bool bn = spec.bn_covers(l);
    nlohmann::json layer = {{"rows", ck.params.weights[l].rows()},
                            {"cols", ck.params.weights[l].cols()},
                            {"bias", bias},
                            {"bn", bn}};
    std::vector<std::vector<double>> tensors{detail::row_major(ck.params.weights[l])};
    if (bias) tensors.push_back(detail::as_vector(ck.params.biases[l]));
    if (bn) {
      tensors.push_back(detail::as_vector(ck.bn.mean[l]));
      tensors.push_back(detail::as_vector(ck.bn.var[l]));
    }
    if (format == CheckpointFormat::json) {
      layer["weights"] = tensors[0];
      std::size_t next = 1;
      if (bias) layer["b"] = tensors[next++];
      if (bn) {
        layer["bn_mean"] = tensors[next++];
        layer["bn_var"] = tensors[next++];
      }
    } else {
      for (const auto& t : tensors) {
        for (double v : t) detail::put_f64(payload, v);
      }
    }
    layers.push_back(std::move(layer));
  }
  header["layers"] = std::move(layers);
  return header.dump() + "\n" + payload;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError(what + ": missing header line", bytes.size());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(what + ": bad header: " + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  if (!header.is_object() || header.value("format", "") != kCheckpointMagic) {
    throw FormatError(what + ": not a wdlab checkpoint", 0);
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version", 0);
  }
  Checkpoint ck;
  try {
    ck.config = from_json(header.at("config"));
    ck.epoch = header.at("epoch").get<std::size_t>();
    const NetworkSpec spec = ck.config.network();
    if (header.at("dims").get<std::vector<std::size_t>>() != spec.layer_dims) {
      throw FormatError(what + ": layer dims disagree with the stored config", 0);
    }
    const bool binary = header.at("encoding").get<std::string>() == "bin";
    const auto& layers = header.at("layers");
    if (layers.size() != spec.num_layers()) throw FormatError(what + ": wrong layer count", 0);
    ck.bn = BatchNormState::initial(spec);
    std::size_t off = nl + 1;
    auto take = [&](std::size_t n, const nlohmann::json& arr) {
      std::vector<double> v;
      if (binary) {
        if (off + 8 * n > bytes.size()) throw FormatError(what + ": payload truncated", bytes.size());
        for (std::size_t i = 0; i < n; ++i) v.push_back(detail::get_f64(bytes, off + 8 * i));
        off += 8 * n;
      } else {
        v = arr.get<std::vector<double>>();
        if (v.size() != n) throw FormatError(what + ": tensor has the wrong length", 0);
      }
      return v;
    };
    const nlohmann::json none;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const auto& layer = layers[l];
      const auto rows = static_cast<Eigen::Index>(spec.out_dim(l));
      const auto cols = static_cast<Eigen::Index>(spec.in_dim(l));
      if (layer.at("rows").get<Eigen::Index>() != rows || layer.at("cols").get<Eigen::Index>() != cols) {
        throw FormatError(what + ": layer " + std::to_string(l) + " has the wrong shape", 0);
      }
      const std::vector<double> w = take(static_cast<std::size_t>(rows * cols), binary ? none : layer.at("weights"));
      Matrix m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      }
      ck.params.weights.push_back(std::move(m));
      if (spec.use_bias) {
        const auto b = take(static_cast<std::size_t>(rows), binary ? none : layer.at("b"));
        ck.params.biases.push_back(Eigen::Map<const Vector>(b.data(), rows));
      }
      if (spec.bn_covers(l)) {
        const auto mu = take(static_cast<std::size_t>(rows), binary ? none : layer.at("bn_mean"));
        const auto var = take(static_cast<std::size_t>(rows), binary ? none : layer.at("bn_var"));
        ck.bn.mean[l] = Eigen::Map<const Vector>(mu.data(), rows);
        ck.bn.var[l] = Eigen::Map<const Vector>(var.data(), rows);
      }
    }
    if (binary && off != bytes.size()) throw FormatError(what + ": trailing bytes after payload", off);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed header: " + e.what(), 0);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck, CheckpointFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot write " + path);
  const std::string bytes = encode_checkpoint(ck, format);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DomainError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

}  // namespace wdlab::harness
