#include "hmnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hmnet::gradcheck {

namespace {

constexpr double kTableJitter = 0.5;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad, double stddev = 1.0) {
  const auto [rows, cols] = detail::storage_dims(shape);
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor::Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return Tensor(std::move(shape), std::move(m), requires_grad);
}

// Fixed random read-out so every output entry contributes to the loss.
Tensor readout(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

std::vector<Index> sample_entries(Index numel, const Options& opt, std::mt19937_64& rng) {
  if (opt.max_entries <= 0 || numel <= opt.max_entries) return {};
  const auto perm = data::seeded_permutation(static_cast<std::size_t>(numel), rng());
  std::vector<Index> picked;
  for (Index i = 0; i < opt.max_entries; ++i) picked.push_back(static_cast<Index>(perm[i]));
  return picked;
}

template <typename F>
Result probe(const std::string& name, Tensor& x, F&& f, const Options& opt, std::mt19937_64& rng) {
  const auto entries = sample_entries(x.numel(), opt, rng);
  Result r;
  r.name = name;
  r.probes = entries.empty() ? x.numel() : static_cast<Index>(entries.size());
  r.max_rel_error = grad_check(f, x, opt.eps, entries);
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

void clear_grads(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

}  // namespace

std::vector<Result> check_layer_norm(const Options& opt) {
  std::mt19937_64 rng(opt.seed);
  Tensor x = random_tensor({4, 6}, rng, true);
  Tensor gain = random_tensor({6}, rng, true);
  Tensor bias = random_tensor({6}, rng, true);
  const Tensor w = random_tensor({4, 6}, rng, false);
  auto loss = [&](const Tensor&) { return readout(layer_norm(x, gain, bias), w); };

  std::vector<Result> out;
  out.push_back(probe("layer_norm/x", x, loss, opt, rng));
  out.push_back(probe("layer_norm/gain", gain, loss, opt, rng));
  out.push_back(probe("layer_norm/bias", bias, loss, opt, rng));
  return out;
}

std::vector<Result> check_attention(const Options& opt) {
  std::mt19937_64 rng(opt.seed + 1);
  auto params = nn::AttentionParams::init(2, 8, 6, rng);
  Tensor q = random_tensor({3, 8}, rng, true);
  Tensor mem = random_tensor({5, 6}, rng, true);
  Mask mask = Mask::Constant(3, 5, false);
  mask(0, 4) = true;
  mask(1, 0) = true;
  mask(2, 2) = true;
  const Tensor w = random_tensor({3, 8}, rng, false);
  auto loss = [&](const Tensor&) { return readout(nn::multi_head_attention(q, mem, &mask, params), w); };

  std::vector<Result> out;
  out.push_back(probe("attention/queries", q, loss, opt, rng));
  out.push_back(probe("attention/memory", mem, loss, opt, rng));
  out.push_back(probe("attention/wq", params.wq, loss, opt, rng));
  out.push_back(probe("attention/wk", params.wk, loss, opt, rng));
  out.push_back(probe("attention/wv", params.wv, loss, opt, rng));
  out.push_back(probe("attention/wo", params.wo, loss, opt, rng));
  return out;
}

std::vector<Result> check_encoder_block(const Options& opt) {
  std::mt19937_64 rng(opt.seed + 2);
  auto block = nn::EncoderBlockParams::init(8, 2, 4, rng);
  Tensor x = random_tensor({4, 8}, rng, true);
  const Mask mask = nn::causal_mask(4);
  const Tensor w = random_tensor({4, 8}, rng, false);
  auto loss = [&](const Tensor&) { return readout(nn::encoder_block(x, block, &mask), w); };

  std::vector<Result> out;
  out.push_back(probe("encoder_block/x", x, loss, opt, rng));
  nn::NamedParameters named;
  block.collect("", named);
  for (auto& [name, t] : named) out.push_back(probe("encoder_block/" + name, t, loss, opt, rng));
  return out;
}

HMNetConfig small_model_config() {
  HMNetConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_word = 16;
  cfg.d_pos = 4;
  cfg.d_ent = 4;
  cfg.d_role = 8;
  cfg.ffn_multiplier = 2;
  cfg.dropout = 0.0;
  cfg.vocab_size = 14;
  cfg.n_roles = 3;
  cfg.n_pos_tags = 3;
  cfg.n_ent_tags = 3;
  cfg.max_turn_tokens = 16;
  cfg.max_turns = 8;
  cfg.max_summary_tokens = 16;
  return cfg;
}

std::vector<Result> check_model_loss(const HMNetConfig& cfg, const Options& opt) {
  cfg.validate();
  std::mt19937_64 rng(opt.seed + 3);
  HMNet net{cfg, HMNetParams::init(cfg, opt.seed)};
  // Spread the embedding tables so attention is far from uniform; at the
  // stock init some attention gradients are ~1e-7, below what central
  // differences at eps=1e-5 can resolve against a loss of order 1.
  std::normal_distribution<double> jitter(0.0, kTableJitter);
  for (Tensor table : {net.params.embedding, net.params.pos_embedding, net.params.ent_embedding,
                       net.params.role_embedding}) {
    for (Index i = 0; i < table.numel(); ++i) table.mutable_value().data()[i] += jitter(rng);
  }
  auto id = [&](Index n) { return static_cast<Index>(rng() % static_cast<std::uint64_t>(n)); };

  data::MeetingIds meeting;
  for (Index t = 0; t < 5; ++t) {
    data::TurnIds turn;
    turn.role = id(cfg.n_roles);
    const Index len = 2 + id(3);
    for (Index i = 0; i < len; ++i) {
      turn.tokens.push_back(data::Vocab::kReservedCount + id(cfg.vocab_size - data::Vocab::kReservedCount));
      turn.pos.push_back(id(cfg.n_pos_tags));
      turn.ent.push_back(id(cfg.n_ent_tags));
    }
    meeting.turns.push_back(std::move(turn));
  }
  meeting.target.push_back(data::Vocab::kBegin);
  for (Index i = 0; i < 4; ++i) {
    meeting.target.push_back(data::Vocab::kReservedCount + id(cfg.vocab_size - data::Vocab::kReservedCount));
  }
  meeting.target.push_back(data::Vocab::kEnd);

  auto params = net.params.parameters();
  auto loss = [&](const Tensor&) { return model::compute_loss(meeting, meeting.target, net); };
  std::vector<Result> out;
  for (auto& [name, t] : net.params.named_parameters()) {
    Tensor handle = t;
    out.push_back(probe("model/" + name, handle, loss, opt, rng));
    clear_grads(params);
  }
  return out;
}

std::vector<Result> run_all(const Options& opt) {
  std::vector<Result> out;
  for (auto part : {check_layer_norm(opt), check_attention(opt), check_encoder_block(opt),
                    check_model_loss(small_model_config(), opt)}) {
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

bool all_passed(const std::vector<Result>& results) {
  return std::all_of(results.begin(), results.end(), [](const Result& r) { return r.passed; });
}

double worst_error(const std::vector<Result>& results) {
  double worst = 0.0;
  for (const auto& r : results) worst = std::max(worst, r.max_rel_error);
  return worst;
}

}  // namespace hmnet::gradcheck
