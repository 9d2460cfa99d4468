#pragma once

// The hierarchical meeting summarizer: a word-level encoder run per turn, a
// turn-level encoder over [BOS output; role vector] rows, and a decoder that
// cross-attends to word-level outputs first and turn-level outputs second.
// The vocabulary projection reuses the token embedding matrix.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hmnet/data.hpp"
#include "hmnet/nn.hpp"
#include "json.hpp"

namespace hmnet {

struct HMNetConfig {
  Index n_layers = 6;
  Index n_heads = 8;
  Index d_word = 512;
  Index d_pos = 16;
  Index d_ent = 16;
  Index d_role = 32;
  Index ffn_multiplier = 4;
  double dropout = 0.1;
  Index vocab_size = 0;
  Index n_roles = 0;
  Index n_pos_tags = 1;
  Index n_ent_tags = 1;
  Index max_turn_tokens = 256;
  Index max_turns = 1024;
  Index max_summary_tokens = 1024;

  // Optional width claims. When set, validate() checks them against the
  // widths implied by the embedding sizes.
  std::optional<Index> word_d_model;
  std::optional<Index> turn_d_model;
  std::optional<Index> decoder_d_model;

  Index word_width() const { return d_word + d_pos + d_ent; }
  Index turn_width() const { return word_width() + d_role; }
  Index decoder_width() const { return d_word; }

  // Throws ValidationError naming the offending field.
  void validate() const;

  bool operator==(const HMNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const HMNetConfig& cfg);
void from_json(const nlohmann::json& j, HMNetConfig& cfg);

struct DecoderBlockParams {
  nn::AttentionParams self_attn;
  nn::AttentionParams word_attn;
  nn::AttentionParams turn_attn;
  nn::FeedForwardParams ffn;
  nn::LayerNormParams norm_self;
  nn::LayerNormParams norm_word;
  nn::LayerNormParams norm_turn;
  nn::LayerNormParams norm_ffn;

  void collect(const std::string& prefix, nn::NamedParameters& out) const;
};

struct HMNetParams {
  Tensor embedding;       // vocab_size x d_word, also the output projection
  Tensor pos_embedding;   // n_pos_tags x d_pos
  Tensor ent_embedding;   // n_ent_tags x d_ent
  Tensor role_embedding;  // n_roles x d_role
  std::vector<nn::EncoderBlockParams> word_blocks;
  std::vector<nn::EncoderBlockParams> turn_blocks;
  std::vector<DecoderBlockParams> decoder_blocks;

  // Embedding tables ~ U(-0.02, 0.02); projections ~ N(0, 1/fan_in).
  static HMNetParams init(const HMNetConfig& cfg, std::uint64_t seed);

  // Stable names in a fixed order; tensors share storage with the model.
  nn::NamedParameters named_parameters() const;
  std::vector<Tensor> parameters() const;
  void zero_grad() const;
  // Deep copy of every parameter value.
  HMNetParams clone() const;
};

struct HMNet {
  HMNetConfig config;
  HMNetParams params;
};

struct TurnEncoding {
  Tensor bos_out;     // {word_width}
  Tensor token_outs;  // L x word_width
};

struct EncodedMeeting {
  Tensor word_memory;             // total tokens x word_width, BOS rows excluded
  std::vector<Index> word_turn;   // turn of origin per word_memory row
  Tensor turn_memory;             // turns x turn_width
};

namespace model {

// [D(token); POS(pos); ENT(ent)] as a rank-1 tensor of word_width.
Tensor embed_token(Index token_id, Index pos_id, Index ent_id, const HMNetParams& params);

// Row-wise embed_token for equal-length id lists.
Tensor embed_tokens(std::span<const Index> tokens, std::span<const Index> pos,
                    std::span<const Index> ent, const HMNetParams& params);

TurnEncoding encode_turn(const data::TurnIds& turn, const HMNet& net,
                         const nn::ForwardContext& ctx = {});

// Rows [bos_out_i ; r_{role_i}] before positional encoding.
Tensor turn_level_inputs(std::span<const TurnEncoding> turns, std::span<const Index> roles,
                         const HMNet& net);

EncodedMeeting encode_meeting(const data::MeetingIds& meeting, const HMNet& net,
                              const nn::ForwardContext& ctx = {});

// Row t holds the pre-softmax scores v_t D^T predicting token t+1.
Tensor decoder_forward(std::span<const Index> prev_ids, const EncodedMeeting& enc,
                       const HMNet& net, const nn::ForwardContext& ctx = {});

// Teacher-forced mean negative log-likelihood of target[1..] given target[..n-1].
Tensor compute_loss(const data::MeetingIds& meeting, std::span<const Index> target_ids,
                    const HMNet& net, const nn::ForwardContext& ctx = {});

}  // namespace model
}  // namespace hmnet
