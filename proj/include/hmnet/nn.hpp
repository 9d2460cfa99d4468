#pragma once

// Transformer building blocks shared by the encoders and the decoder.

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmnet/tensor.hpp"

namespace hmnet::nn {

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

// Train/eval switch for a forward pass. Dropout draws from `rng` only in
// training mode, so eval passes never touch it.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  Tensor drop(const Tensor& x) const;
};

// Sinusoidal encoding of one position: even dims sin(i / 10000^(2j/d)),
// odd dims the matching cos.
Tensor positional_encoding(Index position, Index d);

// Rows offset..offset+count-1 as a count x d matrix.
Tensor positional_encodings(Index count, Index d, Index offset = 0);

// Entry (i, j) is true (masked) iff j > i.
Mask causal_mask(Index n);

struct AttentionParams {
  Index n_heads = 0;
  Index d_query = 0;
  Index d_memory = 0;
  Index d_head = 0;
  Tensor wq;  // d_query x (n_heads * d_head)
  Tensor wk;  // d_memory x (n_heads * d_head)
  Tensor wv;  // d_memory x (n_heads * d_head)
  Tensor wo;  // (n_heads * d_head) x d_query

  // d_head = d_query / n_heads; throws ShapeMismatch unless it divides evenly.
  static AttentionParams init(Index n_heads, Index d_query, Index d_memory, std::mt19937_64& rng);
  void collect(const std::string& prefix, NamedParameters& out) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(Index d);
  void collect(const std::string& prefix, NamedParameters& out) const;
};

struct FeedForwardParams {
  Tensor w1;  // d_model x d_ff
  Tensor b1;
  Tensor w2;  // d_ff x d_model
  Tensor b2;

  static FeedForwardParams init(Index d_model, Index d_ff, std::mt19937_64& rng);
  void collect(const std::string& prefix, NamedParameters& out) const;
};

struct EncoderBlockParams {
  AttentionParams attention;
  FeedForwardParams ffn;
  LayerNormParams norm1;
  LayerNormParams norm2;

  Index d_model() const { return attention.d_query; }

  static EncoderBlockParams init(Index d_model, Index n_heads, Index ffn_multiplier,
                                 std::mt19937_64& rng);
  void collect(const std::string& prefix, NamedParameters& out) const;
};

// Normal(0, 1/fan_in) weights for a fan_in x fan_out projection.
Tensor init_projection(Index fan_in, Index fan_out, std::mt19937_64& rng);

// Scaled dot-product attention per head (scale 1/sqrt(d_head)), heads
// concatenated then output-projected. `mask`, when given, is q x m.
Tensor multi_head_attention(const Tensor& queries, const Tensor& memory, const Mask* mask,
                            const AttentionParams& params, const ForwardContext& ctx = {});

// relu(x W1 + b1) W2 + b2
Tensor feed_forward(const Tensor& x, const FeedForwardParams& params);

// LayerNorm(x + dropout(sublayer_out))
Tensor residual_norm(const Tensor& x, const Tensor& sublayer_out, const LayerNormParams& norm,
                     const ForwardContext& ctx);

Tensor encoder_block(const Tensor& x, const EncoderBlockParams& params, const Mask* mask = nullptr,
                     const ForwardContext& ctx = {});

// Throws EmptyStack for zero blocks, ShapeMismatch when widths disagree.
Tensor transformer_stack(const Tensor& x, std::span<const EncoderBlockParams> blocks,
                         const Mask* mask = nullptr, const ForwardContext& ctx = {});

}  // namespace hmnet::nn
