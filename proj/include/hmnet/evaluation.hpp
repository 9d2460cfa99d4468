#pragma once

// ROUGE-1/2/SU4, novel n-gram ratios and the simple reference baselines.
// Scores are computed on tokens as given: no stemming, no stopword removal.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hmnet/data.hpp"
#include "json.hpp"

namespace hmnet::eval {

using Tokens = std::vector<std::string>;

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  bool operator==(const RougeScore&) const = default;
};

void to_json(nlohmann::json& j, const RougeScore& s);

// Balanced F from clipped match counts; empty denominators give 0.
RougeScore score_from_counts(std::size_t match, std::size_t candidate_total,
                             std::size_t reference_total);

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, std::size_t>;

// Contiguous n-grams with multiplicity.
NGramCounts ngram_counts(std::span<const std::string> tokens, std::size_t n);

// Ordered pairs (t_i, t_j) with 0 < j - i <= 5, plus a begin-marker pair for
// every token. The begin marker is stored as a one-element key {t}.
NGramCounts su4_units(std::span<const std::string> tokens);

// Sum over keys of min(a[k], b[k]).
std::size_t clipped_overlap(const NGramCounts& a, const NGramCounts& b);

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   std::size_t n);
RougeScore rouge_su4(std::span<const std::string> candidate,
                     std::span<const std::string> reference);

// Percentage of summary n-gram instances absent from the transcript's
// contiguous n-grams. Throws TooShort when the summary has fewer than n tokens.
double novel_ngram_ratio(std::span<const std::string> summary,
                         std::span<const std::string> transcript, std::size_t n);

inline constexpr std::size_t kOracleSentencesAmi = 18;
inline constexpr std::size_t kOracleSentencesIcsi = 23;

// Indices of the top-k sentences by ROUGE-1 F1 against `reference` (ties to
// the earlier sentence), returned in transcript order.
std::vector<std::size_t> extractive_oracle_indices(std::span<const Tokens> sentences,
                                                   std::span<const std::string> reference,
                                                   std::size_t k);
// Those sentences concatenated. Throws EmptyTranscript.
Tokens extractive_oracle(std::span<const Tokens> sentences, std::span<const std::string> reference,
                         std::size_t k = kOracleSentencesAmi);

// k sentences drawn uniformly without replacement, in transcript order.
Tokens random_baseline(std::span<const Tokens> sentences, std::size_t k, std::uint64_t seed);

struct RougeTriple {
  RougeScore r1;
  RougeScore r2;
  RougeScore su4;
};

void to_json(nlohmann::json& j, const RougeTriple& t);

RougeTriple rouge_all(std::span<const std::string> candidate,
                      std::span<const std::string> reference);

inline constexpr std::size_t kCopyTrials = 50;

// For each reference, scores `trials` summaries drawn uniformly (with
// replacement) from the training pool, averages per reference, then averages
// over references. Throws EmptyPool.
RougeTriple copy_from_train(std::span<const Tokens> train_summaries,
                            std::span<const Tokens> references, std::size_t trials = kCopyTrials,
                            std::uint64_t seed = 1);

// Per-document and corpus-mean ROUGE plus novel n-gram percentages for
// n = 1..4. Corpus values are macro averages; novel n-gram means skip
// documents shorter than n.
nlohmann::json evaluation_report(std::span<const Tokens> candidates,
                                 std::span<const Tokens> references,
                                 std::span<const Tokens> transcripts,
                                 std::span<const std::string> ids = {});

}  // namespace hmnet::eval
