// Copyright 2026 The cdyn Authors
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

#ifndef CDYN_SDF_NET_HPP_
#define CDYN_SDF_NET_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cdyn/shape.hpp"

namespace cdyn {

enum class Activation : std::uint8_t { kSoftplus = 0, kTanh = 1 };

// Latent auto-decoder MLP g(p, z) with input [p.x, p.z, z_1 .. z_dz].
//
// Weight file layout, little-endian:
//   "SDF2" | u16 version=1 | u8 activation | u8 n_layers
//   | (n_layers + 1) x u32 layer dims
//   | per layer: f32 weights (dims[k+1] x dims[k], row-major), f32 biases
//   | u32 n_shapes | u8 d_z | n_shapes x d_z f32 reference latents
//
// The hidden activation is applied after every layer except the last.
class SdfNet final : public ShapeModel {
 public:
  using MatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;
  using VectorXf = Eigen::Matrix<float, Eigen::Dynamic, 1>;

  static constexpr std::uint16_t kVersion = 1;

  SdfNet(std::vector<int> layer_dims, std::vector<MatrixXf> weights,
         std::vector<VectorXf> biases, Activation activation, int d_z,
         std::vector<Vec2> reference_latents = {},
         double bounding_radius = 0.15)
      : dims_(std::move(layer_dims)),
        weights_(std::move(weights)),
        biases_(std::move(biases)),
        activation_(activation),
        d_z_(d_z),
        latents_(std::move(reference_latents)),
        bounding_radius_(bounding_radius) {
    validate();
  }

  static SdfNet from_bytes(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "SDF2", 4) != 0)
      throw FormatError("sdf net: bad magic");
    const auto version = r.scalar<std::uint16_t>();
    if (version != kVersion)
      throw FormatError("sdf net: unsupported version " +
                        std::to_string(version));
    const auto act = r.scalar<std::uint8_t>();
    if (act > 1) throw FormatError("sdf net: unknown activation id");
    const int n_layers = r.scalar<std::uint8_t>();
    if (n_layers < 1) throw FormatError("sdf net: no layers");
    std::vector<int> dims(n_layers + 1);
    for (auto& d : dims) {
      const auto v = r.scalar<std::uint32_t>();
      if (v == 0 || v > 4096) throw FormatError("sdf net: bad layer dim");
      d = static_cast<int>(v);
    }
    std::vector<MatrixXf> w;
    std::vector<VectorXf> b;
    for (int k = 0; k < n_layers; ++k) {
      MatrixXf m(dims[k + 1], dims[k]);
      for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) m(i, j) = r.scalar<float>();
      VectorXf v(dims[k + 1]);
      for (int i = 0; i < v.size(); ++i) v[i] = r.scalar<float>();
      w.push_back(std::move(m));
      b.push_back(std::move(v));
    }
    const auto n_shapes = r.scalar<std::uint32_t>();
    const int d_z = r.scalar<std::uint8_t>();
    if (d_z != dims.front() - 2)
      throw FormatError("sdf net: latent table d_z disagrees with input dim");
    if (d_z != 2) throw FormatError("sdf net: only d_z = 2 is supported");
    if (n_shapes > (r.remaining() / (4u * d_z)))
      throw FormatError("sdf net: truncated latent table");
    std::vector<Vec2> latents(n_shapes);
    for (auto& z : latents) {
      z.x() = r.scalar<float>();
      z.y() = r.scalar<float>();
    }
    if (r.remaining() != 0) throw FormatError("sdf net: trailing bytes");
    return SdfNet(std::move(dims), std::move(w), std::move(b),
                  static_cast<Activation>(act), d_z, std::move(latents));
  }

  static SdfNet load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("sdf net: cannot open " + path);
    const std::vector<std::uint8_t> bytes(
        (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_bytes(bytes);
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out;
    auto put = [&out](auto v) {
      unsigned char buf[sizeof(v)];
      std::memcpy(buf, &v, sizeof(v));
      if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(buf), std::end(buf));
      out.insert(out.end(), std::begin(buf), std::end(buf));
    };
    out.insert(out.end(), {'S', 'D', 'F', '2'});
    put(kVersion);
    put(static_cast<std::uint8_t>(activation_));
    put(static_cast<std::uint8_t>(weights_.size()));
    for (int d : dims_) put(static_cast<std::uint32_t>(d));
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      for (int i = 0; i < weights_[k].rows(); ++i)
        for (int j = 0; j < weights_[k].cols(); ++j) put(weights_[k](i, j));
      for (int i = 0; i < biases_[k].size(); ++i) put(biases_[k][i]);
    }
    put(static_cast<std::uint32_t>(latents_.size()));
    put(static_cast<std::uint8_t>(d_z_));
    for (const auto& z : latents_) {
      put(static_cast<float>(z.x()));
      put(static_cast<float>(z.y()));
    }
    return out;
  }

  double distance(const Vec2& p, const Vec2& z) const override {
    double out;
    distance_batch(std::span<const Vec2>(&p, 1), z, std::span<double>(&out, 1));
    return out;
  }

  void distance_batch(std::span<const Vec2> pts, const Vec2& z,
                      std::span<double> out) const override {
    const auto n = static_cast<Eigen::Index>(pts.size());
    if (n == 0) return;
    // The latent columns of the first layer fold into a per-call bias.
    const MatrixXf& w0 = weights_.front();
    VectorXf bias0 = biases_.front();
    bias0 += w0.col(2).cast<float>() * static_cast<float>(z.x()) +
             w0.col(3).cast<float>() * static_cast<float>(z.y());
    MatrixXf p(2, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(0, i) = static_cast<float>(pts[i].x());
      p(1, i) = static_cast<float>(pts[i].y());
    }
    MatrixXf h = w0.leftCols<2>() * p;
    h.colwise() += bias0;
    for (std::size_t k = 1; k < weights_.size(); ++k) {
      activate(h);
      MatrixXf next = weights_[k] * h;
      next.colwise() += biases_[k];
      h.swap(next);
    }
    for (Eigen::Index i = 0; i < n; ++i) out[i] = h(0, i);
  }

  double bounding_radius() const override { return bounding_radius_; }
  std::string name() const override { return "sdf_net"; }

  const std::vector<int>& layer_dims() const { return dims_; }
  const std::vector<MatrixXf>& weights() const { return weights_; }
  const std::vector<VectorXf>& biases() const { return biases_; }
  Activation activation() const { return activation_; }
  int d_z() const { return d_z_; }
  const std::vector<Vec2>& reference_latents() const { return latents_; }

 private:
  struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
    std::size_t remaining() const { return bytes.size() - pos; }
    void raw(void* dst, std::size_t n) {
      if (remaining() < n) throw FormatError("sdf net: truncated file");
      std::memcpy(dst, bytes.data() + pos, n);
      pos += n;
    }
    template <typename T>
    T scalar() {
      unsigned char buf[sizeof(T)];
      raw(buf, sizeof(T));
      if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(buf), std::end(buf));
      T v;
      std::memcpy(&v, buf, sizeof(T));
      return v;
    }
  };

  void validate() const {
    if (dims_.size() < 2) throw FormatError("sdf net: need >= 2 layer dims");
    if (d_z_ != 2) throw FormatError("sdf net: d_z must be 2");
    if (dims_.front() != 2 + d_z_)
      throw FormatError("sdf net: input dim must be 2 + d_z");
    if (dims_.back() != 1) throw FormatError("sdf net: output dim must be 1");
    if (weights_.size() != dims_.size() - 1 || biases_.size() != weights_.size())
      throw FormatError("sdf net: layer count mismatch");
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      if (weights_[k].rows() != dims_[k + 1] || weights_[k].cols() != dims_[k] ||
          biases_[k].size() != dims_[k + 1])
        throw FormatError("sdf net: weight shape mismatch at layer " +
                          std::to_string(k));
      if (!weights_[k].allFinite() || !biases_[k].allFinite())
        throw FormatError("sdf net: non-finite weights");
    }
  }

  void activate(MatrixXf& h) const {
    if (activation_ == Activation::kTanh) {
      h = h.array().tanh();
    } else {
      // softplus(x) = max(x, 0) + log1p(exp(-|x|))
      h = h.array().max(0.0f) + (-h.array().abs()).exp().log1p();
    }
  }

  std::vector<int> dims_;
  std::vector<MatrixXf> weights_;
  std::vector<VectorXf> biases_;
  Activation activation_;
  int d_z_;
  std::vector<Vec2> latents_;
  double bounding_radius_;
};

}  // namespace cdyn

#endif  // CDYN_SDF_NET_HPP_
