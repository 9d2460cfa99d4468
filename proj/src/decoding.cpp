#include "hmnet/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hmnet {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ValidationError("beam_size: must be >= 1");
  if (min_len < 0) throw ValidationError("min_len: must be >= 0");
  if (min_len >= max_len) throw ValidationError("max_len: must exceed min_len");
  if (begin_id < 0) throw ValidationError("begin_id: must be >= 0");
  if (end_id < 0) throw ValidationError("end_id: must be >= 0");
  for (Index s : suppressed_ids) {
    if (s == end_id) throw ValidationError("suppressed_ids: may not contain end_id");
  }
}

void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = nlohmann::json{{"beam_size", c.beam_size},
                     {"min_len", c.min_len},
                     {"max_len", c.max_len},
                     {"trigram_blocking", c.trigram_blocking},
                     {"begin_id", c.begin_id},
                     {"end_id", c.end_id},
                     {"suppressed_ids", c.suppressed_ids}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
  auto field = [&](const char* key, auto& target) {
    if (j.contains(key)) j.at(key).get_to(target);
  };
  field("beam_size", c.beam_size);
  field("min_len", c.min_len);
  field("max_len", c.max_len);
  field("trigram_blocking", c.trigram_blocking);
  field("begin_id", c.begin_id);
  field("end_id", c.end_id);
  field("suppressed_ids", c.suppressed_ids);
}

void apply_trigram_block(std::span<const Index> prefix, std::span<double> logits) {
  const std::size_t n = prefix.size();
  if (n < 2) return;
  const Index a = prefix[n - 2];
  const Index b = prefix[n - 1];
  for (std::size_t i = 0; i + 2 < n; ++i) {
    if (prefix[i] == a && prefix[i + 1] == b) {
      const Index w = prefix[i + 2];
      if (w >= 0 && static_cast<std::size_t>(w) < logits.size()) logits[w] = kNegInf;
    }
  }
}

double hypothesis_score(const BeamHypothesis& h) {
  if (h.tokens.size() < 2) throw EmptyHypothesis("no tokens generated after BEGIN");
  return h.log_prob / static_cast<double>(h.tokens.size() - 1);
}

namespace decoding {

std::vector<double> step_log_probs(std::span<const Index> prefix, std::vector<double> logits,
                                   const DecodeConfig& cfg) {
  const auto vocab = static_cast<Index>(logits.size());
  if (cfg.trigram_blocking) apply_trigram_block(prefix, logits);
  const auto generated = static_cast<Index>(prefix.size()) - 1;
  if (generated < cfg.min_len && cfg.end_id < vocab) logits[cfg.end_id] = kNegInf;
  for (Index s : cfg.suppressed_ids) {
    if (s >= 0 && s < vocab) logits[s] = kNegInf;
  }
  double peak = kNegInf;
  for (double v : logits) peak = std::max(peak, v);
  if (peak == kNegInf) return logits;
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  const double log_z = peak + std::log(total);
  for (double& v : logits) v -= log_z;
  return logits;
}

}  // namespace decoding

BeamResult beam_search_detailed(const NextTokenLogits& next, const DecodeConfig& cfg) {
  cfg.validate();
  struct Candidate {
    double log_prob;
    Index token;
    std::size_t parent;
  };

  BeamResult result;
  std::vector<BeamHypothesis> live{BeamHypothesis{{cfg.begin_id}, 0.0, false}};
  const auto beam = static_cast<std::size_t>(cfg.beam_size);

  for (Index generated = 0; generated < cfg.max_len && !live.empty(); ++generated) {
    std::vector<Candidate> candidates;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const auto lp = decoding::step_log_probs(live[p].tokens, next(live[p].tokens), cfg);
      for (std::size_t w = 0; w < lp.size(); ++w) {
        if (lp[w] == kNegInf) continue;
        candidates.push_back({live[p].log_prob + lp[w], static_cast<Index>(w), p});
      }
    }
    const std::size_t keep = std::min(beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [](const Candidate& x, const Candidate& y) {
                        if (x.log_prob != y.log_prob) return x.log_prob > y.log_prob;
                        if (x.token != y.token) return x.token < y.token;
                        return x.parent < y.parent;
                      });

    std::vector<BeamHypothesis> survivors;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = candidates[i];
      BeamHypothesis h{live[c.parent].tokens, c.log_prob, false};
      h.tokens.push_back(c.token);
      if (c.token == cfg.end_id) {
        h.finished = true;
        result.finished.push_back(std::move(h));
      } else {
        survivors.push_back(std::move(h));
      }
    }
    live = std::move(survivors);
    if (result.finished.size() >= beam) break;
  }
  // Hypotheses still alive here hit max_len.
  for (auto& h : live) {
    h.finished = true;
    result.finished.push_back(std::move(h));
  }

  double best_score = kNegInf;
  for (const auto& h : result.finished) {
    const double s = hypothesis_score(h);
    if (result.best.tokens.empty() || s > best_score) {
      best_score = s;
      result.best = h;
    }
  }
  return result;
}

namespace {

std::vector<Index> strip(const BeamHypothesis& h, const DecodeConfig& cfg) {
  std::vector<Index> out;
  for (std::size_t i = 1; i < h.tokens.size(); ++i) {
    if (h.tokens[i] == cfg.end_id) break;
    out.push_back(h.tokens[i]);
  }
  return out;
}

void check_length(const HMNet& net, const DecodeConfig& cfg) {
  // The longest prefix fed to the decoder is BEGIN plus max_len - 1 tokens.
  if (cfg.max_len > net.config.max_summary_tokens) {
    throw ValidationError("max_len: exceeds model max_summary_tokens " +
                          std::to_string(net.config.max_summary_tokens));
  }
}

}  // namespace

std::vector<Index> beam_search(const NextTokenLogits& next, const DecodeConfig& cfg) {
  return strip(beam_search_detailed(next, cfg).best, cfg);
}

std::vector<Index> beam_search(const HMNet& net, const EncodedMeeting& enc,
                               const DecodeConfig& cfg) {
  check_length(net, cfg);
  return beam_search(model_logits(net, enc), cfg);
}

std::vector<Index> greedy_decode(const NextTokenLogits& next, const DecodeConfig& cfg) {
  cfg.validate();
  std::vector<Index> prefix{cfg.begin_id};
  for (Index generated = 0; generated < cfg.max_len; ++generated) {
    const auto lp = decoding::step_log_probs(prefix, next(prefix), cfg);
    std::size_t best = lp.size();
    for (std::size_t w = 0; w < lp.size(); ++w) {
      if (lp[w] == kNegInf) continue;
      if (best == lp.size() || lp[w] > lp[best]) best = w;
    }
    if (best == lp.size()) break;
    if (static_cast<Index>(best) == cfg.end_id) break;
    prefix.push_back(static_cast<Index>(best));
  }
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<Index> greedy_decode(const HMNet& net, const EncodedMeeting& enc,
                                 const DecodeConfig& cfg) {
  check_length(net, cfg);
  return greedy_decode(model_logits(net, enc), cfg);
}

NextTokenLogits model_logits(const HMNet& net, const EncodedMeeting& enc) {
  return [&net, &enc](std::span<const Index> prefix) {
    NoGradGuard guard;
    const Tensor logits = model::decoder_forward(prefix, enc, net);
    const auto row = logits.value().row(logits.rows() - 1);
    return std::vector<double>(row.data(), row.data() + row.size());
  };
}

}  // namespace hmnet
