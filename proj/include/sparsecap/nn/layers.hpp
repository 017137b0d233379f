#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sparsecap/nn/ops.hpp"
#include "sparsecap/nn/tensor.hpp"

namespace sparsecap::nn {

using Rng = std::mt19937_64;

struct NamedParameter {
  std::string name;
  Var var;
};

/// Ordered, uniquely named trainable tensors.
class ParameterSet {
 public:
  /// Throws ValidationError on duplicate names or non-trainable tensors.
  void add(std::string name, const Var& var);
  const std::vector<NamedParameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  /// Throws ValidationError for unknown names.
  const Var& at(const std::string& name) const;
  void zero_grad() const;

 private:
  std::vector<NamedParameter> items_;
};

/// Entries drawn uniformly from [-bound, bound].
Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out

  Linear() = default;
  Linear(int in, int out, Rng& rng);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParameterSet& params) const;
  void zero();
  int in_features() const { return static_cast<int>(weight.rows()); }
  int out_features() const { return static_cast<int>(weight.cols()); }
};

struct LayerNorm {
  Var gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(int width);
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParameterSet& params) const;
};

struct MultiHeadAttention {
  Linear q, k, v, out;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(int width, int heads, Rng& rng);
  Var operator()(const Var& x, int seq_len) const;
  void collect(const std::string& prefix, ParameterSet& params) const;
};

/// Post-norm encoder block: x = LN(x + MHA(x)); x = LN(x + FFN(x)) with a GELU FFN.
struct EncoderLayer {
  MultiHeadAttention attention;
  LayerNorm norm1, norm2;
  Linear ff1, ff2;

  EncoderLayer() = default;
  EncoderLayer(int width, int heads, int ffn_width, Rng& rng);
  Var operator()(const Var& x, int seq_len) const;
  void collect(const std::string& prefix, ParameterSet& params) const;
};

struct TransformerEncoder {
  std::vector<EncoderLayer> layers;

  TransformerEncoder() = default;
  TransformerEncoder(int width, int heads, int ffn_width, int layer_count, Rng& rng);
  Var operator()(const Var& x, int seq_len) const;
  void collect(const std::string& prefix, ParameterSet& params) const;
};

/// Standard sin/cos table, seq_len x width.
Matrix sinusoidal_encoding(int seq_len, int width);
/// Adds the table to every block of seq_len rows.
Var add_positional_encoding(const Var& x, int seq_len);

/// Linear -> GELU -> Linear.
struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(int in, int hidden, int out, Rng& rng);
  Var operator()(const Var& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& prefix, ParameterSet& params) const;
};

struct Conv1d {
  Var weight;  // Cout x (K * Cin)
  Var bias;    // 1 x Cout
  int kernel = 1, stride = 1, pad = 0;

  Conv1d() = default;
  Conv1d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng);
  Var operator()(const Var& x) const { return conv1d(x, weight, bias, kernel, stride, pad); }
  void collect(const std::string& prefix, ParameterSet& params) const;
  void zero();
};

struct ConvTranspose1d {
  Var weight;  // Cin x (K * Cout)
  Var bias;    // 1 x Cout
  int kernel = 1, stride = 1, pad = 0, output_padding = 0;

  ConvTranspose1d() = default;
  ConvTranspose1d(int in_channels, int out_channels, int kernel, int stride, int pad, int output_padding, Rng& rng);
  Var operator()(const Var& x) const {
    return conv_transpose1d(x, weight, bias, kernel, stride, pad, output_padding);
  }
  void collect(const std::string& prefix, ParameterSet& params) const;
  void zero();
};

}  // namespace sparsecap::nn
