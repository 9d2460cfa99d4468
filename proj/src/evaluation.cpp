#include "hmnet/evaluation.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace hmnet::eval {

namespace {

constexpr std::size_t kMaxSkipSpan = 5;

std::size_t total(const NGramCounts& c) {
  std::size_t n = 0;
  for (const auto& [k, v] : c) n += v;
  return n;
}

// Unbiased draw from [0, n) by rejection sampling on raw 64-bit output.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

RougeScore mean_score(std::span<const RougeScore> scores) {
  RougeScore m;
  if (scores.empty()) return m;
  for (const auto& s : scores) {
    m.precision += s.precision;
    m.recall += s.recall;
    m.f1 += s.f1;
  }
  const auto n = static_cast<double>(scores.size());
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

RougeTriple mean_triple(std::span<const RougeTriple> triples) {
  std::vector<RougeScore> r1, r2, su4;
  for (const auto& t : triples) {
    r1.push_back(t.r1);
    r2.push_back(t.r2);
    su4.push_back(t.su4);
  }
  return {mean_score(r1), mean_score(r2), mean_score(su4)};
}

}  // namespace

void to_json(nlohmann::json& j, const RougeScore& s) {
  j = nlohmann::json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

void to_json(nlohmann::json& j, const RougeTriple& t) {
  j = nlohmann::json{{"rouge_1", t.r1}, {"rouge_2", t.r2}, {"rouge_su4", t.su4}};
}

RougeScore score_from_counts(std::size_t match, std::size_t candidate_total,
                             std::size_t reference_total) {
  RougeScore s;
  if (candidate_total > 0) s.precision = static_cast<double>(match) / static_cast<double>(candidate_total);
  if (reference_total > 0) s.recall = static_cast<double>(match) / static_cast<double>(reference_total);
  if (s.precision + s.recall > 0.0) {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

NGramCounts ngram_counts(std::span<const std::string> tokens, std::size_t n) {
  if (n == 0) throw std::invalid_argument("n-gram order must be >= 1");
  NGramCounts counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

NGramCounts su4_units(std::span<const std::string> tokens) {
  NGramCounts counts;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    ++counts[NGram{tokens[i]}];
    for (std::size_t j = i + 1; j < tokens.size() && j - i <= kMaxSkipSpan; ++j) {
      ++counts[NGram{tokens[i], tokens[j]}];
    }
  }
  return counts;
}

std::size_t clipped_overlap(const NGramCounts& a, const NGramCounts& b) {
  std::size_t match = 0;
  for (const auto& [gram, count] : a) {
    if (auto it = b.find(gram); it != b.end()) match += std::min(count, it->second);
  }
  return match;
}

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   std::size_t n) {
  const auto c = ngram_counts(candidate, n);
  const auto r = ngram_counts(reference, n);
  return score_from_counts(clipped_overlap(c, r), total(c), total(r));
}

RougeScore rouge_su4(std::span<const std::string> candidate,
                     std::span<const std::string> reference) {
  const auto c = su4_units(candidate);
  const auto r = su4_units(reference);
  return score_from_counts(clipped_overlap(c, r), total(c), total(r));
}

double novel_ngram_ratio(std::span<const std::string> summary,
                         std::span<const std::string> transcript, std::size_t n) {
  if (n == 0) throw std::invalid_argument("n-gram order must be >= 1");
  if (summary.size() < n) {
    throw TooShort("summary has " + std::to_string(summary.size()) + " tokens, need " +
                   std::to_string(n));
  }
  const auto seen = ngram_counts(transcript, n);
  std::size_t novel = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + n <= summary.size(); ++i, ++count) {
    const NGram g(summary.begin() + static_cast<std::ptrdiff_t>(i),
                  summary.begin() + static_cast<std::ptrdiff_t>(i + n));
    if (!seen.contains(g)) ++novel;
  }
  return 100.0 * static_cast<double>(novel) / static_cast<double>(count);
}

std::vector<std::size_t> extractive_oracle_indices(std::span<const Tokens> sentences,
                                                   std::span<const std::string> reference,
                                                   std::size_t k) {
  if (sentences.empty()) throw EmptyTranscript("no sentences to extract from");
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  std::vector<double> f1;
  for (const auto& s : sentences) f1.push_back(rouge_n(s, reference, 1).f1);
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return f1[a] > f1[b]; });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

Tokens extractive_oracle(std::span<const Tokens> sentences, std::span<const std::string> reference,
                         std::size_t k) {
  Tokens out;
  for (std::size_t i : extractive_oracle_indices(sentences, reference, k)) {
    out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  }
  return out;
}

Tokens random_baseline(std::span<const Tokens> sentences, std::size_t k, std::uint64_t seed) {
  if (sentences.empty()) throw EmptyTranscript("no sentences to sample from");
  auto order = data::seeded_permutation(sentences.size(), seed);
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  Tokens out;
  for (std::size_t i : order) out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  return out;
}

RougeTriple rouge_all(std::span<const std::string> candidate,
                      std::span<const std::string> reference) {
  return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2),
          rouge_su4(candidate, reference)};
}

RougeTriple copy_from_train(std::span<const Tokens> train_summaries,
                            std::span<const Tokens> references, std::size_t trials,
                            std::uint64_t seed) {
  if (train_summaries.empty()) throw EmptyPool("no training summaries to copy from");
  if (references.empty()) throw EmptyPool("no references to score against");
  if (trials == 0) throw std::invalid_argument("trials must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<RougeTriple> per_reference;
  for (const auto& ref : references) {
    std::vector<RougeTriple> draws;
    for (std::size_t t = 0; t < trials; ++t) {
      draws.push_back(rouge_all(train_summaries[uniform_index(rng, train_summaries.size())], ref));
    }
    per_reference.push_back(mean_triple(draws));
  }
  return mean_triple(per_reference);
}

nlohmann::json evaluation_report(std::span<const Tokens> candidates,
                                 std::span<const Tokens> references,
                                 std::span<const Tokens> transcripts,
                                 std::span<const std::string> ids) {
  if (candidates.size() != references.size()) {
    throw SchemaError("candidate and reference counts differ");
  }
  if (!transcripts.empty() && transcripts.size() != candidates.size()) {
    throw SchemaError("transcript and candidate counts differ");
  }
  if (!ids.empty() && ids.size() != candidates.size()) {
    throw SchemaError("id and candidate counts differ");
  }
  if (candidates.empty()) throw EmptyCorpus("nothing to evaluate");

  constexpr std::size_t kMaxOrder = 4;
  nlohmann::json documents = nlohmann::json::array();
  std::vector<RougeTriple> triples;
  std::array<std::vector<double>, kMaxOrder> novel;
  for (std::size_t d = 0; d < candidates.size(); ++d) {
    const RougeTriple t = rouge_all(candidates[d], references[d]);
    triples.push_back(t);
    nlohmann::json doc{{"id", ids.empty() ? std::to_string(d) : ids[d]}};
    doc.update(nlohmann::json(t));
    if (!transcripts.empty()) {
      nlohmann::json nov = nlohmann::json::object();
      for (std::size_t n = 1; n <= kMaxOrder; ++n) {
        if (candidates[d].size() < n) {
          nov[std::to_string(n)] = nullptr;
          continue;
        }
        const double r = novel_ngram_ratio(candidates[d], transcripts[d], n);
        novel[n - 1].push_back(r);
        nov[std::to_string(n)] = r;
      }
      doc["novel_ngram_pct"] = nov;
    }
    documents.push_back(std::move(doc));
  }

  nlohmann::json corpus = mean_triple(triples);
  corpus["documents"] = candidates.size();
  if (!transcripts.empty()) {
    nlohmann::json nov = nlohmann::json::object();
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const auto& v = novel[n - 1];
      if (v.empty()) {
        nov[std::to_string(n)] = nullptr;
      } else {
        nov[std::to_string(n)] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      }
    }
    corpus["novel_ngram_pct"] = nov;
  }
  return nlohmann::json{{"corpus", corpus}, {"documents", documents}};
}

}  // namespace hmnet::eval
