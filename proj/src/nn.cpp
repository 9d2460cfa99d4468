#include "hmnet/nn.hpp"

#include <cmath>

namespace hmnet::nn {

Tensor ForwardContext::drop(const Tensor& x) const {
  if (!training || dropout <= 0.0) return x;
  if (rng == nullptr) throw std::invalid_argument("training-mode dropout needs an rng");
  return hmnet::dropout(x, dropout, *rng, true);
}

Tensor positional_encoding(Index position, Index d) {
  return reshape(positional_encodings(1, d, position), {d});
}

Tensor positional_encodings(Index count, Index d, Index offset) {
  if (d <= 0 || d % 2 != 0) throw OddDimension("positional encoding width " + std::to_string(d));
  if (offset < 0 || count <= 0) throw ShapeMismatch("positional encoding range");
  Tensor::Matrix pe(count, d);
  for (Index j = 0; j < d / 2; ++j) {
    const double rate = std::pow(10000.0, static_cast<double>(2 * j) / static_cast<double>(d));
    for (Index r = 0; r < count; ++r) {
      const double angle = static_cast<double>(offset + r) / rate;
      pe(r, 2 * j) = std::sin(angle);
      pe(r, 2 * j + 1) = std::cos(angle);
    }
  }
  return Tensor::matrix(std::move(pe));
}

Mask causal_mask(Index n) {
  if (n <= 0) throw ZeroLength("causal mask of length " + std::to_string(n));
  Mask mask(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) mask(i, j) = j > i;
  }
  return mask;
}

Tensor init_projection(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  Tensor::Matrix w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  return Tensor({fan_in, fan_out}, std::move(w), true);
}

AttentionParams AttentionParams::init(Index n_heads, Index d_query, Index d_memory,
                                      std::mt19937_64& rng) {
  if (n_heads <= 0 || d_query % n_heads != 0) {
    throw ShapeMismatch("d_query " + std::to_string(d_query) + " not divisible by " +
                        std::to_string(n_heads) + " heads");
  }
  AttentionParams p;
  p.n_heads = n_heads;
  p.d_query = d_query;
  p.d_memory = d_memory;
  p.d_head = d_query / n_heads;
  const Index inner = p.d_head * n_heads;
  p.wq = init_projection(d_query, inner, rng);
  p.wk = init_projection(d_memory, inner, rng);
  p.wv = init_projection(d_memory, inner, rng);
  p.wo = init_projection(inner, d_query, rng);
  return p;
}

void AttentionParams::collect(const std::string& prefix, NamedParameters& out) const {
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".wv", wv);
  out.emplace_back(prefix + ".wo", wo);
}

LayerNormParams LayerNormParams::init(Index d) {
  return {Tensor({d}, 1.0, true), Tensor({d}, 0.0, true)};
}

void LayerNormParams::collect(const std::string& prefix, NamedParameters& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

FeedForwardParams FeedForwardParams::init(Index d_model, Index d_ff, std::mt19937_64& rng) {
  FeedForwardParams p;
  p.w1 = init_projection(d_model, d_ff, rng);
  p.b1 = Tensor({d_ff}, 0.0, true);
  p.w2 = init_projection(d_ff, d_model, rng);
  p.b2 = Tensor({d_model}, 0.0, true);
  return p;
}

void FeedForwardParams::collect(const std::string& prefix, NamedParameters& out) const {
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
  out.emplace_back(prefix + ".b2", b2);
}

EncoderBlockParams EncoderBlockParams::init(Index d_model, Index n_heads, Index ffn_multiplier,
                                            std::mt19937_64& rng) {
  EncoderBlockParams p;
  p.attention = AttentionParams::init(n_heads, d_model, d_model, rng);
  p.ffn = FeedForwardParams::init(d_model, ffn_multiplier * d_model, rng);
  p.norm1 = LayerNormParams::init(d_model);
  p.norm2 = LayerNormParams::init(d_model);
  return p;
}

void EncoderBlockParams::collect(const std::string& prefix, NamedParameters& out) const {
  attention.collect(prefix + ".self_attn", out);
  norm1.collect(prefix + ".norm1", out);
  ffn.collect(prefix + ".ffn", out);
  norm2.collect(prefix + ".norm2", out);
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& memory, const Mask* mask,
                            const AttentionParams& params, const ForwardContext& ctx) {
  if (queries.rank() != 2 || memory.rank() != 2 || queries.cols() != params.d_query ||
      memory.cols() != params.d_memory) {
    throw ShapeMismatch("attention inputs " + shape_string(queries.shape()) + " / " +
                        shape_string(memory.shape()) + " for widths " +
                        std::to_string(params.d_query) + " / " + std::to_string(params.d_memory));
  }
  if (mask && (mask->rows() != queries.rows() || mask->cols() != memory.rows())) {
    throw ShapeMismatch("attention mask shape");
  }
  const Tensor q = matmul(queries, params.wq);
  const Tensor k = matmul(memory, params.wk);
  const Tensor v = matmul(memory, params.wv);
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(params.d_head));

  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(params.n_heads));
  for (Index h = 0; h < params.n_heads; ++h) {
    const Index at = h * params.d_head;
    const Tensor qh = slice_cols(q, at, params.d_head);
    const Tensor kh = slice_cols(k, at, params.d_head);
    const Tensor vh = slice_cols(v, at, params.d_head);
    const Tensor scores = scale(matmul(qh, transpose(kh)), scale_factor);
    Tensor weights = mask ? softmax(scores, -1, *mask) : softmax(scores, -1);
    weights = ctx.drop(weights);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor joined = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return matmul(joined, params.wo);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& params) {
  return add(matmul(relu(add(matmul(x, params.w1), params.b1)), params.w2), params.b2);
}

Tensor residual_norm(const Tensor& x, const Tensor& sublayer_out, const LayerNormParams& norm,
                     const ForwardContext& ctx) {
  return layer_norm(add(x, ctx.drop(sublayer_out)), norm.gain, norm.bias);
}

Tensor encoder_block(const Tensor& x, const EncoderBlockParams& params, const Mask* mask,
                     const ForwardContext& ctx) {
  if (x.rank() != 2 || x.cols() != params.d_model()) {
    throw ShapeMismatch("encoder block of width " + std::to_string(params.d_model()) +
                        " given " + shape_string(x.shape()));
  }
  const Tensor y1 =
      residual_norm(x, multi_head_attention(x, x, mask, params.attention, ctx), params.norm1, ctx);
  return residual_norm(y1, feed_forward(y1, params.ffn), params.norm2, ctx);
}

Tensor transformer_stack(const Tensor& x, std::span<const EncoderBlockParams> blocks,
                         const Mask* mask, const ForwardContext& ctx) {
  if (blocks.empty()) throw EmptyStack("transformer stack needs at least one block");
  Tensor h = x;
  for (const auto& block : blocks) h = encoder_block(h, block, mask, ctx);
  return h;
}

}  // namespace hmnet::nn
