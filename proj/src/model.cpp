#include "hmnet/model.hpp"

#include <random>

namespace hmnet {

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ValidationError(field + ": " + why);
}

void check_width(Index width, Index n_heads, const std::string& name) {
  require(width % 2 == 0, name, "width " + std::to_string(width) + " must be even");
  require(width % n_heads == 0, name,
          "width " + std::to_string(width) + " not divisible by n_heads " + std::to_string(n_heads));
}

Tensor uniform_table(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(-0.02, 0.02);
  Tensor::Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng);
  return Tensor({rows, cols}, std::move(m), true);
}

}  // namespace

void HMNetConfig::validate() const {
  require(n_layers >= 1, "n_layers", "must be >= 1");
  require(n_heads >= 1, "n_heads", "must be >= 1");
  require(d_word >= 1, "d_word", "must be >= 1");
  require(d_pos >= 1, "d_pos", "must be >= 1");
  require(d_ent >= 1, "d_ent", "must be >= 1");
  require(d_role >= 1, "d_role", "must be >= 1");
  require(ffn_multiplier >= 1, "ffn_multiplier", "must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout", "must lie in [0, 1)");
  require(vocab_size >= 0, "vocab_size", "must be >= 0");
  require(n_roles >= 0, "n_roles", "must be >= 0");
  require(n_pos_tags >= 1, "n_pos_tags", "must be >= 1");
  require(n_ent_tags >= 1, "n_ent_tags", "must be >= 1");
  require(max_turn_tokens >= 1, "max_turn_tokens", "must be >= 1");
  require(max_turns >= 1, "max_turns", "must be >= 1");
  require(max_summary_tokens >= 2, "max_summary_tokens", "must be >= 2");
  if (word_d_model) {
    require(*word_d_model == word_width(), "word_d_model",
            std::to_string(*word_d_model) + " != d_word + d_pos + d_ent = " +
                std::to_string(word_width()));
  }
  if (turn_d_model) {
    require(*turn_d_model == turn_width(), "turn_d_model",
            std::to_string(*turn_d_model) + " != word-level width + d_role = " +
                std::to_string(turn_width()));
  }
  if (decoder_d_model) {
    require(*decoder_d_model == decoder_width(), "decoder_d_model",
            std::to_string(*decoder_d_model) + " != d_word = " + std::to_string(decoder_width()));
  }
  check_width(word_width(), n_heads, "word_d_model");
  check_width(turn_width(), n_heads, "turn_d_model");
  check_width(decoder_width(), n_heads, "decoder_d_model");
}

void to_json(nlohmann::json& j, const HMNetConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},
                     {"n_heads", c.n_heads},
                     {"d_word", c.d_word},
                     {"d_pos", c.d_pos},
                     {"d_ent", c.d_ent},
                     {"d_role", c.d_role},
                     {"ffn_multiplier", c.ffn_multiplier},
                     {"dropout", c.dropout},
                     {"vocab_size", c.vocab_size},
                     {"n_roles", c.n_roles},
                     {"n_pos_tags", c.n_pos_tags},
                     {"n_ent_tags", c.n_ent_tags},
                     {"max_turn_tokens", c.max_turn_tokens},
                     {"max_turns", c.max_turns},
                     {"max_summary_tokens", c.max_summary_tokens}};
  if (c.word_d_model) j["word_d_model"] = *c.word_d_model;
  if (c.turn_d_model) j["turn_d_model"] = *c.turn_d_model;
  if (c.decoder_d_model) j["decoder_d_model"] = *c.decoder_d_model;
}

void from_json(const nlohmann::json& j, HMNetConfig& c) {
  auto field = [&](const char* key, auto& target) {
    if (j.contains(key)) j.at(key).get_to(target);
  };
  field("n_layers", c.n_layers);
  field("n_heads", c.n_heads);
  field("d_word", c.d_word);
  field("d_pos", c.d_pos);
  field("d_ent", c.d_ent);
  field("d_role", c.d_role);
  field("ffn_multiplier", c.ffn_multiplier);
  field("dropout", c.dropout);
  field("vocab_size", c.vocab_size);
  field("n_roles", c.n_roles);
  field("n_pos_tags", c.n_pos_tags);
  field("n_ent_tags", c.n_ent_tags);
  field("max_turn_tokens", c.max_turn_tokens);
  field("max_turns", c.max_turns);
  field("max_summary_tokens", c.max_summary_tokens);
  for (auto [key, target] : {std::pair{"word_d_model", &c.word_d_model},
                             std::pair{"turn_d_model", &c.turn_d_model},
                             std::pair{"decoder_d_model", &c.decoder_d_model}}) {
    if (j.contains(key) && !j.at(key).is_null()) *target = j.at(key).get<Index>();
  }
}

void DecoderBlockParams::collect(const std::string& prefix, nn::NamedParameters& out) const {
  self_attn.collect(prefix + ".self_attn", out);
  norm_self.collect(prefix + ".norm_self", out);
  word_attn.collect(prefix + ".word_attn", out);
  norm_word.collect(prefix + ".norm_word", out);
  turn_attn.collect(prefix + ".turn_attn", out);
  norm_turn.collect(prefix + ".norm_turn", out);
  ffn.collect(prefix + ".ffn", out);
  norm_ffn.collect(prefix + ".norm_ffn", out);
}

HMNetParams HMNetParams::init(const HMNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.vocab_size < 1) throw ValidationError("vocab_size: must be set before initialization");
  if (cfg.n_roles < 1) throw ValidationError("n_roles: must be set before initialization");
  std::mt19937_64 rng(seed);
  HMNetParams p;
  p.embedding = uniform_table(cfg.vocab_size, cfg.d_word, rng);
  p.pos_embedding = uniform_table(cfg.n_pos_tags, cfg.d_pos, rng);
  p.ent_embedding = uniform_table(cfg.n_ent_tags, cfg.d_ent, rng);
  p.role_embedding = uniform_table(cfg.n_roles, cfg.d_role, rng);
  for (Index i = 0; i < cfg.n_layers; ++i) {
    p.word_blocks.push_back(
        nn::EncoderBlockParams::init(cfg.word_width(), cfg.n_heads, cfg.ffn_multiplier, rng));
  }
  for (Index i = 0; i < cfg.n_layers; ++i) {
    p.turn_blocks.push_back(
        nn::EncoderBlockParams::init(cfg.turn_width(), cfg.n_heads, cfg.ffn_multiplier, rng));
  }
  const Index d = cfg.decoder_width();
  for (Index i = 0; i < cfg.n_layers; ++i) {
    DecoderBlockParams b;
    b.self_attn = nn::AttentionParams::init(cfg.n_heads, d, d, rng);
    b.word_attn = nn::AttentionParams::init(cfg.n_heads, d, cfg.word_width(), rng);
    b.turn_attn = nn::AttentionParams::init(cfg.n_heads, d, cfg.turn_width(), rng);
    b.ffn = nn::FeedForwardParams::init(d, cfg.ffn_multiplier * d, rng);
    b.norm_self = nn::LayerNormParams::init(d);
    b.norm_word = nn::LayerNormParams::init(d);
    b.norm_turn = nn::LayerNormParams::init(d);
    b.norm_ffn = nn::LayerNormParams::init(d);
    p.decoder_blocks.push_back(std::move(b));
  }
  return p;
}

nn::NamedParameters HMNetParams::named_parameters() const {
  nn::NamedParameters out;
  out.emplace_back("embedding", embedding);
  out.emplace_back("pos_embedding", pos_embedding);
  out.emplace_back("ent_embedding", ent_embedding);
  out.emplace_back("role_embedding", role_embedding);
  for (std::size_t i = 0; i < word_blocks.size(); ++i) {
    word_blocks[i].collect("word." + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < turn_blocks.size(); ++i) {
    turn_blocks[i].collect("turn." + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < decoder_blocks.size(); ++i) {
    decoder_blocks[i].collect("decoder." + std::to_string(i), out);
  }
  return out;
}

std::vector<Tensor> HMNetParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void HMNetParams::zero_grad() const {
  for (auto t : parameters()) t.zero_grad();
}

HMNetParams HMNetParams::clone() const {
  HMNetParams copy = *this;
  // Rebind every tensor handle in the copy to fresh storage.
  auto fresh = [](Tensor& t) { t = Tensor(t.shape(), t.value(), true); };
  fresh(copy.embedding);
  fresh(copy.pos_embedding);
  fresh(copy.ent_embedding);
  fresh(copy.role_embedding);
  auto fresh_attn = [&](nn::AttentionParams& a) {
    fresh(a.wq);
    fresh(a.wk);
    fresh(a.wv);
    fresh(a.wo);
  };
  auto fresh_ffn = [&](nn::FeedForwardParams& f) {
    fresh(f.w1);
    fresh(f.b1);
    fresh(f.w2);
    fresh(f.b2);
  };
  auto fresh_norm = [&](nn::LayerNormParams& n) {
    fresh(n.gain);
    fresh(n.bias);
  };
  for (auto* blocks : {&copy.word_blocks, &copy.turn_blocks}) {
    for (auto& b : *blocks) {
      fresh_attn(b.attention);
      fresh_ffn(b.ffn);
      fresh_norm(b.norm1);
      fresh_norm(b.norm2);
    }
  }
  for (auto& b : copy.decoder_blocks) {
    fresh_attn(b.self_attn);
    fresh_attn(b.word_attn);
    fresh_attn(b.turn_attn);
    fresh_ffn(b.ffn);
    fresh_norm(b.norm_self);
    fresh_norm(b.norm_word);
    fresh_norm(b.norm_turn);
    fresh_norm(b.norm_ffn);
  }
  return copy;
}

namespace model {

Tensor embed_token(Index token_id, Index pos_id, Index ent_id, const HMNetParams& params) {
  const Index t[] = {token_id};
  const Index p[] = {pos_id};
  const Index e[] = {ent_id};
  const Tensor row = embed_tokens(t, p, e, params);
  return reshape(row, {row.cols()});
}

Tensor embed_tokens(std::span<const Index> tokens, std::span<const Index> pos,
                    std::span<const Index> ent, const HMNetParams& params) {
  if (tokens.size() != pos.size() || tokens.size() != ent.size()) {
    throw ShapeMismatch("token, POS and ENT id lists differ in length");
  }
  return concat_cols<double>({gather_rows(params.embedding, tokens),
                              gather_rows(params.pos_embedding, pos),
                              gather_rows(params.ent_embedding, ent)});
}

TurnEncoding encode_turn(const data::TurnIds& turn, const HMNet& net,
                         const nn::ForwardContext& ctx) {
  const auto& cfg = net.config;
  const auto length = static_cast<Index>(turn.tokens.size());
  if (length == 0) throw EmptyTurn("turn with no tokens");
  if (length > cfg.max_turn_tokens) {
    throw TurnTooLong(std::to_string(length) + " tokens > max_turn_tokens " +
                      std::to_string(cfg.max_turn_tokens));
  }
  if (turn.pos.size() != turn.tokens.size() || turn.ent.size() != turn.tokens.size()) {
    throw ShapeMismatch("turn tag lists differ in length from tokens");
  }
  std::vector<Index> tokens{data::Vocab::kBos};
  std::vector<Index> pos{0};
  std::vector<Index> ent{0};
  tokens.insert(tokens.end(), turn.tokens.begin(), turn.tokens.end());
  pos.insert(pos.end(), turn.pos.begin(), turn.pos.end());
  ent.insert(ent.end(), turn.ent.begin(), turn.ent.end());

  const Index width = cfg.word_width();
  Tensor x = add(embed_tokens(tokens, pos, ent, net.params),
                 nn::positional_encodings(length + 1, width));
  x = ctx.drop(x);
  const Tensor out = nn::transformer_stack(x, net.params.word_blocks, nullptr, ctx);
  return {reshape(slice_rows(out, 0, 1), {width}), slice_rows(out, 1, length)};
}

Tensor turn_level_inputs(std::span<const TurnEncoding> turns, std::span<const Index> roles,
                         const HMNet& net) {
  if (turns.size() != roles.size()) throw ShapeMismatch("one role per turn required");
  std::vector<Tensor> bos;
  bos.reserve(turns.size());
  for (const auto& t : turns) bos.push_back(t.bos_out);
  for (Index r : roles) {
    if (r < 0 || r >= net.params.role_embedding.rows()) {
      throw UnknownRole("role id " + std::to_string(r) + " outside the role table");
    }
  }
  return concat_cols<double>({concat_rows(bos), gather_rows(net.params.role_embedding, roles)});
}

EncodedMeeting encode_meeting(const data::MeetingIds& meeting, const HMNet& net,
                              const nn::ForwardContext& ctx) {
  const auto& cfg = net.config;
  const auto m = static_cast<Index>(meeting.turns.size());
  if (m == 0) throw EmptyMeeting("meeting with no turns");
  if (m > cfg.max_turns) {
    throw TooManyTurns(std::to_string(m) + " turns > max_turns " + std::to_string(cfg.max_turns));
  }
  std::vector<TurnEncoding> turns;
  std::vector<Index> roles;
  turns.reserve(meeting.turns.size());
  for (const auto& t : meeting.turns) {
    turns.push_back(encode_turn(t, net, ctx));
    roles.push_back(t.role);
  }

  EncodedMeeting enc;
  std::vector<Tensor> words;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    words.push_back(turns[i].token_outs);
    enc.word_turn.insert(enc.word_turn.end(), static_cast<std::size_t>(turns[i].token_outs.rows()),
                         static_cast<Index>(i));
  }
  enc.word_memory = words.size() == 1 ? words.front() : concat_rows(words);

  Tensor x = add(turn_level_inputs(turns, roles, net), nn::positional_encodings(m, cfg.turn_width()));
  x = ctx.drop(x);
  enc.turn_memory = nn::transformer_stack(x, net.params.turn_blocks, nullptr, ctx);
  return enc;
}

Tensor decoder_forward(std::span<const Index> prev_ids, const EncodedMeeting& enc,
                       const HMNet& net, const nn::ForwardContext& ctx) {
  const auto& cfg = net.config;
  const auto k = static_cast<Index>(prev_ids.size());
  if (k == 0) throw EmptyPrefix("decoder needs at least the BEGIN token");
  if (k > cfg.max_summary_tokens) {
    throw PrefixTooLong(std::to_string(k) + " > max_summary_tokens " +
                        std::to_string(cfg.max_summary_tokens));
  }
  const Index d = cfg.decoder_width();
  Tensor x = add(gather_rows(net.params.embedding, prev_ids), nn::positional_encodings(k, d));
  x = ctx.drop(x);
  const Mask causal = nn::causal_mask(k);
  for (const auto& block : net.params.decoder_blocks) {
    x = nn::residual_norm(x, nn::multi_head_attention(x, x, &causal, block.self_attn, ctx),
                          block.norm_self, ctx);
    x = nn::residual_norm(
        x, nn::multi_head_attention(x, enc.word_memory, nullptr, block.word_attn, ctx),
        block.norm_word, ctx);
    x = nn::residual_norm(
        x, nn::multi_head_attention(x, enc.turn_memory, nullptr, block.turn_attn, ctx),
        block.norm_turn, ctx);
    x = nn::residual_norm(x, nn::feed_forward(x, block.ffn), block.norm_ffn, ctx);
  }
  return matmul(x, transpose(net.params.embedding));
}

Tensor compute_loss(const data::MeetingIds& meeting, std::span<const Index> target_ids,
                    const HMNet& net, const nn::ForwardContext& ctx) {
  if (target_ids.size() < 2) {
    throw TargetTooShort("target needs BEGIN and at least one predicted token");
  }
  const EncodedMeeting enc = encode_meeting(meeting, net, ctx);
  const Tensor logits = decoder_forward(target_ids.first(target_ids.size() - 1), enc, net, ctx);
  return cross_entropy(logits, target_ids.subspan(1));
}

}  // namespace model
}  // namespace hmnet
