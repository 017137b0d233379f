#include "sparsecap/nn/layers.hpp"

#include <cmath>

#include "sparsecap/errors.hpp"

namespace sparsecap::nn {

void ParameterSet::add(std::string name, const Var& var) {
  if (!var.requires_grad()) throw ValidationError("parameter '" + name + "' is not trainable");
  for (const auto& p : items_) {
    if (p.name == name) throw ValidationError("duplicate parameter name '" + name + "'");
  }
  items_.push_back({std::move(name), var});
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

const Var& ParameterSet::at(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return p.var;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

void ParameterSet::zero_grad() const {
  for (auto p : items_) p.var.zero_grad();
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(int in, int out, Rng& rng)
    : weight(Var::parameter(uniform_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng))),
      bias(Var::parameter(Matrix::Zero(1, out))) {}

void Linear::collect(const std::string& prefix, ParameterSet& params) const {
  params.add(prefix + ".weight", weight);
  params.add(prefix + ".bias", bias);
}

void Linear::zero() {
  weight.mutable_value().setZero();
  bias.mutable_value().setZero();
}

LayerNorm::LayerNorm(int width)
    : gamma(Var::parameter(Matrix::Ones(1, width))), beta(Var::parameter(Matrix::Zero(1, width))) {}

void LayerNorm::collect(const std::string& prefix, ParameterSet& params) const {
  params.add(prefix + ".gamma", gamma);
  params.add(prefix + ".beta", beta);
}

MultiHeadAttention::MultiHeadAttention(int width, int heads_, Rng& rng)
    : q(width, width, rng), k(width, width, rng), v(width, width, rng), out(width, width, rng), heads(heads_) {
  if (heads <= 0 || width % heads != 0) {
    throw ValidationError("attention width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                          " heads");
  }
}

Var MultiHeadAttention::operator()(const Var& x, int seq_len) const {
  return out(attention(q(x), k(x), v(x), heads, seq_len));
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterSet& params) const {
  q.collect(prefix + ".q", params);
  k.collect(prefix + ".k", params);
  v.collect(prefix + ".v", params);
  out.collect(prefix + ".out", params);
}

EncoderLayer::EncoderLayer(int width, int heads, int ffn_width, Rng& rng)
    : attention(width, heads, rng), norm1(width), norm2(width), ff1(width, ffn_width, rng), ff2(ffn_width, width, rng) {}

Var EncoderLayer::operator()(const Var& x, int seq_len) const {
  const Var h = norm1(add(x, attention(x, seq_len)));
  return norm2(add(h, ff2(gelu(ff1(h)))));
}

void EncoderLayer::collect(const std::string& prefix, ParameterSet& params) const {
  attention.collect(prefix + ".attn", params);
  norm1.collect(prefix + ".norm1", params);
  norm2.collect(prefix + ".norm2", params);
  ff1.collect(prefix + ".ff1", params);
  ff2.collect(prefix + ".ff2", params);
}

TransformerEncoder::TransformerEncoder(int width, int heads, int ffn_width, int layer_count, Rng& rng) {
  for (int i = 0; i < layer_count; ++i) layers.emplace_back(width, heads, ffn_width, rng);
}

Var TransformerEncoder::operator()(const Var& x, int seq_len) const {
  Var h = x;
  for (const auto& layer : layers) h = layer(h, seq_len);
  return h;
}

void TransformerEncoder::collect(const std::string& prefix, ParameterSet& params) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), params);
}

Matrix sinusoidal_encoding(int seq_len, int width) {
  Matrix pe(seq_len, width);
  for (int t = 0; t < seq_len; ++t) {
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
      pe(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
    }
  }
  return pe;
}

Var add_positional_encoding(const Var& x, int seq_len) {
  require_shape(seq_len > 0 && x.rows() % seq_len == 0, "add_positional_encoding",
                "rows not a multiple of the sequence length");
  const Matrix pe = sinusoidal_encoding(seq_len, static_cast<int>(x.cols()));
  Matrix tiled(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < x.rows() / seq_len; ++b) tiled.middleRows(b * seq_len, seq_len) = pe;
  return add(x, Var::constant(std::move(tiled)));
}

Mlp::Mlp(int in, int hidden, int out, Rng& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

void Mlp::collect(const std::string& prefix, ParameterSet& params) const {
  fc1.collect(prefix + ".fc1", params);
  fc2.collect(prefix + ".fc2", params);
}

Conv1d::Conv1d(int in_channels, int out_channels, int kernel_, int stride_, int pad_, Rng& rng)
    : weight(Var::parameter(
          uniform_matrix(out_channels, kernel_ * in_channels, 1.0 / std::sqrt(static_cast<double>(kernel_ * in_channels)), rng))),
      bias(Var::parameter(Matrix::Zero(1, out_channels))),
      kernel(kernel_),
      stride(stride_),
      pad(pad_) {}

void Conv1d::collect(const std::string& prefix, ParameterSet& params) const {
  params.add(prefix + ".weight", weight);
  params.add(prefix + ".bias", bias);
}

void Conv1d::zero() {
  weight.mutable_value().setZero();
  bias.mutable_value().setZero();
}

ConvTranspose1d::ConvTranspose1d(int in_channels, int out_channels, int kernel_, int stride_, int pad_,
                                 int output_padding_, Rng& rng)
    : weight(Var::parameter(uniform_matrix(
          in_channels, kernel_ * out_channels,
          1.0 / std::sqrt(static_cast<double>(in_channels) * kernel_ / static_cast<double>(stride_)), rng))),
      bias(Var::parameter(Matrix::Zero(1, out_channels))),
      kernel(kernel_),
      stride(stride_),
      pad(pad_),
      output_padding(output_padding_) {}

void ConvTranspose1d::collect(const std::string& prefix, ParameterSet& params) const {
  params.add(prefix + ".weight", weight);
  params.add(prefix + ".bias", bias);
}

void ConvTranspose1d::zero() {
  weight.mutable_value().setZero();
  bias.mutable_value().setZero();
}

}  // namespace sparsecap::nn
