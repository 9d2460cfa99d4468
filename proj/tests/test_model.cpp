#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "hmnet/gradcheck.hpp"
#include "hmnet/model.hpp"

using namespace hmnet;

namespace {

HMNetConfig tiny_config() {
  HMNetConfig cfg = gradcheck::small_model_config();
  cfg.vocab_size = 12;
  cfg.n_roles = 4;
  return cfg;
}

// Default widths with one layer so forward passes stay cheap.
HMNetConfig default_width_config() {
  HMNetConfig cfg;
  cfg.n_layers = 1;
  cfg.vocab_size = 20;
  cfg.n_roles = 3;
  cfg.n_pos_tags = 3;
  cfg.n_ent_tags = 2;
  return cfg;
}

data::TurnIds make_turn(Index role, std::vector<Index> tokens) {
  data::TurnIds t;
  t.role = role;
  t.pos.assign(tokens.size(), 0);
  t.ent.assign(tokens.size(), 0);
  t.tokens = std::move(tokens);
  return t;
}

data::MeetingIds make_meeting() {
  data::MeetingIds m;
  m.turns.push_back(make_turn(0, {5, 6, 7}));
  m.turns.push_back(make_turn(1, {8, 9}));
  m.turns.push_back(make_turn(2, {6, 10, 11, 5}));
  m.target = {data::Vocab::kBegin, 7, 8, 9, data::Vocab::kEnd};
  return m;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("width chain at defaults") {
  const HMNetConfig cfg;
  CHECK(cfg.word_width() == 544);
  CHECK(cfg.turn_width() == 576);
  CHECK(cfg.decoder_width() == 512);
  HMNetConfig claimed = cfg;
  claimed.word_d_model = 544;
  claimed.turn_d_model = 576;
  claimed.decoder_d_model = 512;
  CHECK_NOTHROW(claimed.validate());
}

TEST_CASE("config validator rejects width violations") {
  HMNetConfig cfg;
  cfg.word_d_model = 528;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("word_d_model"), ValidationError);
  cfg = HMNetConfig{};
  cfg.turn_d_model = 544;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("turn_d_model"), ValidationError);
  cfg = HMNetConfig{};
  cfg.decoder_d_model = 544;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = HMNetConfig{};
  cfg.n_heads = 7;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = HMNetConfig{};
  cfg.dropout = 1.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("dropout"), ValidationError);
}

TEST_CASE("config json round trip") {
  HMNetConfig cfg = tiny_config();
  cfg.turn_d_model = cfg.turn_width();
  const nlohmann::json j = cfg;
  CHECK(j.get<HMNetConfig>() == cfg);
}

TEST_CASE("embed_token") {
  const HMNetConfig cfg = default_width_config();
  const auto params = HMNetParams::init(cfg, 1);
  const Tensor e = model::embed_token(7, 1, 1, params);
  CHECK(e.numel() == 544);
  CHECK(e.value() == model::embed_token(7, 1, 1, params).value());
  // Concatenation order: token, POS, ENT.
  CHECK(e.flat(0) == params.embedding(7, 0));
  CHECK(e.flat(512) == params.pos_embedding(1, 0));
  CHECK(e.flat(528) == params.ent_embedding(1, 0));
  CHECK_NOTHROW(model::embed_token(data::Vocab::kUnk, 0, 0, params));
  CHECK_THROWS_AS(model::embed_token(20, 0, 0, params), IdOutOfRange);
  CHECK_THROWS_AS(model::embed_token(1, 3, 0, params), IdOutOfRange);
}

TEST_CASE("encode_turn and encode_meeting shapes at default widths") {
  const HMNetConfig cfg = default_width_config();
  const HMNet net{cfg, HMNetParams::init(cfg, 2)};
  const auto five = model::encode_turn(make_turn(0, {5, 6, 7, 8, 9}), net);
  CHECK(five.token_outs.shape() == Shape{5, 544});
  CHECK(five.bos_out.numel() == 544);
  CHECK(model::encode_turn(make_turn(0, {5}), net).token_outs.shape() == Shape{1, 544});
  CHECK_THROWS_AS(model::encode_turn(make_turn(0, {}), net), EmptyTurn);

  data::MeetingIds three;
  for (Index r = 0; r < 3; ++r) three.turns.push_back(make_turn(r, {5, 6}));
  const auto enc = model::encode_meeting(three, net);
  CHECK(enc.turn_memory.shape() == Shape{3, 576});
  CHECK(enc.word_memory.shape() == Shape{6, 544});
  CHECK(enc.word_turn == std::vector<Index>{0, 0, 1, 1, 2, 2});

  data::MeetingIds one;
  one.turns.push_back(make_turn(0, {9}));
  const auto small = model::encode_meeting(one, net);
  CHECK(small.word_memory.shape() == Shape{1, 544});
  CHECK(small.turn_memory.shape() == Shape{1, 576});

  const std::vector<Index> prefix{data::Vocab::kBegin, 5, 6};
  CHECK(model::decoder_forward(prefix, enc, net).shape() == Shape{3, 20});
}

TEST_CASE("encoder errors") {
  HMNetConfig cfg = tiny_config();
  cfg.max_turn_tokens = 3;
  cfg.max_turns = 2;
  const HMNet net{cfg, HMNetParams::init(cfg, 3)};
  CHECK_THROWS_AS(model::encode_turn(make_turn(0, {5, 6, 7, 8}), net), TurnTooLong);
  CHECK_THROWS_AS(model::encode_meeting(data::MeetingIds{}, net), EmptyMeeting);
  data::MeetingIds many;
  for (int i = 0; i < 3; ++i) many.turns.push_back(make_turn(0, {5}));
  CHECK_THROWS_AS(model::encode_meeting(many, net), TooManyTurns);
  data::MeetingIds bad_role;
  bad_role.turns.push_back(make_turn(9, {5}));
  CHECK_THROWS_AS(model::encode_meeting(bad_role, net), UnknownRole);
}

TEST_CASE("swapping role ids changes the turn memory") {
  const HMNetConfig cfg = tiny_config();
  const HMNet net{cfg, HMNetParams::init(cfg, 4)};
  data::MeetingIds m = make_meeting();
  const auto base = model::encode_meeting(m, net);
  std::swap(m.turns[0].role, m.turns[1].role);
  const auto swapped = model::encode_meeting(m, net);
  CHECK((base.turn_memory.value() - swapped.turn_memory.value()).cwiseAbs().maxCoeff() > 1e-6);
  // Word-level outputs do not see roles.
  CHECK(base.word_memory.value() == swapped.word_memory.value());
}

TEST_CASE("role sensitivity of turn-level inputs") {
  const HMNetConfig cfg = tiny_config();
  HMNet net{cfg, HMNetParams::init(cfg, 5)};
  const data::MeetingIds m = make_meeting();
  std::vector<TurnEncoding> turns;
  for (const auto& t : m.turns) turns.push_back(model::encode_turn(t, net));
  const std::vector<Index> roles_a{0, 1, 2};
  const std::vector<Index> roles_b{0, 3, 2};
  const Tensor a = model::turn_level_inputs(turns, roles_a, net);
  const Tensor b = model::turn_level_inputs(turns, roles_b, net);
  CHECK(a.value().row(1) != b.value().row(1));
  CHECK(a.value().row(0) == b.value().row(0));
  CHECK(a.cols() == cfg.turn_width());

  net.params.role_embedding.mutable_value().row(3) = net.params.role_embedding.value().row(1);
  CHECK(model::turn_level_inputs(turns, roles_a, net).value() == model::turn_level_inputs(turns, roles_b, net).value());
}

TEST_CASE("decoder causality") {
  const HMNetConfig cfg = tiny_config();
  const HMNet net{cfg, HMNetParams::init(cfg, 6)};
  const auto enc = model::encode_meeting(make_meeting(), net);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Index k = 2 + static_cast<Index>(rng() % 6);
    std::vector<Index> prefix{data::Vocab::kBegin};
    for (Index i = 1; i < k; ++i) prefix.push_back(5 + static_cast<Index>(rng() % 7));
    const Index t = 1 + static_cast<Index>(rng() % (k - 1));
    std::vector<Index> changed = prefix;
    changed[t] = 5 + (changed[t] - 5 + 1 + static_cast<Index>(rng() % 6)) % 7;
    const Tensor a = model::decoder_forward(prefix, enc, net);
    const Tensor b = model::decoder_forward(changed, enc, net);
    CHECK(a.shape() == Shape{k, cfg.vocab_size});
    for (Index r = 0; r < t; ++r) CHECK((a.value().row(r) - b.value().row(r)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((a.value().row(t) - b.value().row(t)).cwiseAbs().maxCoeff() > 1e-9);
  }
}

TEST_CASE("decoder prefix bounds") {
  HMNetConfig cfg = tiny_config();
  cfg.max_summary_tokens = 4;
  const HMNet net{cfg, HMNetParams::init(cfg, 7)};
  const auto enc = model::encode_meeting(make_meeting(), net);
  CHECK_THROWS_AS(model::decoder_forward(std::vector<Index>{}, enc, net), EmptyPrefix);
  CHECK_NOTHROW(model::decoder_forward(std::vector<Index>{3, 5, 6, 7}, enc, net));
  CHECK_THROWS_AS(model::decoder_forward(std::vector<Index>{3, 5, 6, 7, 8}, enc, net), PrefixTooLong);
  CHECK_THROWS_AS(model::decoder_forward(std::vector<Index>{3, 99}, enc, net), IdOutOfRange);
}

TEST_CASE("loss matches an independent log-softmax over decoder logits") {
  const HMNetConfig cfg = tiny_config();
  const HMNet net{cfg, HMNetParams::init(cfg, 8)};
  const auto m = make_meeting();
  const double loss = model::compute_loss(m, m.target, net).item();
  const auto enc = model::encode_meeting(m, net);
  const std::vector<Index> prev(m.target.begin(), m.target.end() - 1);
  const Tensor logits = model::decoder_forward(prev, enc, net);
  double nll = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    double z = 0.0;
    for (Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c));
    nll -= logits(r, m.target[r + 1]) - std::log(z);
  }
  CHECK(loss == doctest::Approx(nll / static_cast<double>(logits.rows())).epsilon(1e-12));
  CHECK_THROWS_AS(model::compute_loss(m, std::vector<Index>{3}, net), TargetTooShort);
}

TEST_CASE("zeroed parameters give the uniform cross entropy") {
  const HMNetConfig cfg = tiny_config();
  HMNet net{cfg, HMNetParams::init(cfg, 9)};
  for (auto& t : net.params.parameters()) {
    Tensor h = t;
    h.mutable_value().setZero();
  }
  const auto m = make_meeting();
  CHECK(model::compute_loss(m, m.target, net).item() ==
        doctest::Approx(std::log(static_cast<double>(cfg.vocab_size))).epsilon(1e-12));
}

TEST_CASE("tied projection receives gradient through both uses") {
  const HMNetConfig cfg = tiny_config();
  const HMNet net{cfg, HMNetParams::init(cfg, 10)};
  const auto m = make_meeting();
  backward(model::compute_loss(m, m.target, net));
  const Tensor::Matrix g = net.params.embedding.grad();
  // UNK never appears as an input, so only the projection reaches it.
  CHECK(g.row(data::Vocab::kUnk).cwiseAbs().maxCoeff() > 0.0);
  // Token 5 is both an input and a candidate output.
  CHECK(g.row(5).cwiseAbs().maxCoeff() > 0.0);
  net.params.zero_grad();

  gradcheck::Options opt;
  opt.max_entries = 0;
  Tensor table = net.params.embedding;
  auto f = [&](const Tensor&) { return model::compute_loss(m, m.target, net); };
  std::vector<Index> rows_of_interest;
  for (Index c = 0; c < cfg.d_word; ++c) {
    rows_of_interest.push_back(1 * cfg.d_word + c);
    rows_of_interest.push_back(5 * cfg.d_word + c);
  }
  CHECK(grad_check(f, table, 1e-5, rows_of_interest) < 1e-4);
}

TEST_CASE("eval forward is bitwise deterministic") {
  const HMNetConfig cfg = tiny_config();
  const HMNet net{cfg, HMNetParams::init(cfg, 11)};
  const auto m = make_meeting();
  const auto a = model::encode_meeting(m, net);
  const auto b = model::encode_meeting(m, net);
  const std::vector<Index> prefix{3, 7, 8};
  CHECK(model::decoder_forward(prefix, a, net).value() == model::decoder_forward(prefix, b, net).value());
}

TEST_CASE("training mode dropout depends on the stream") {
  HMNetConfig cfg = tiny_config();
  cfg.dropout = 0.3;
  const HMNet net{cfg, HMNetParams::init(cfg, 12)};
  const auto m = make_meeting();
  std::mt19937_64 r1(1), r2(1), r3(2);
  const nn::ForwardContext c1{true, cfg.dropout, &r1}, c2{true, cfg.dropout, &r2}, c3{true, cfg.dropout, &r3};
  const double l1 = model::compute_loss(m, m.target, net, c1).item();
  CHECK(l1 == model::compute_loss(m, m.target, net, c2).item());
  CHECK(l1 != model::compute_loss(m, m.target, net, c3).item());
}

TEST_CASE("parameter bookkeeping") {
  const HMNetConfig cfg = tiny_config();
  const auto params = HMNetParams::init(cfg, 13);
  const auto named = params.named_parameters();
  CHECK(named.size() == params.parameters().size());
  CHECK(named.front().first == "embedding");
  std::set<std::string> names;
  for (const auto& [n, t] : named) names.insert(n);
  CHECK(names.size() == named.size());
  CHECK(names.contains("decoder.0.turn_attn.wk"));

  const auto copy = params.clone();
  Tensor e = copy.embedding;
  e.mutable_value()(0, 0) += 1.0;
  CHECK(params.embedding(0, 0) != copy.embedding(0, 0));
  CHECK(HMNetParams::init(cfg, 13).embedding.value() == params.embedding.value());
  HMNetConfig unset = cfg;
  unset.vocab_size = 0;
  CHECK_THROWS_AS(HMNetParams::init(unset, 1), ValidationError);
}

}  // TEST_SUITE
