#pragma once

// Length-synchronous beam search with trigram blocking and minimum-length
// enforcement. Pruning uses cumulative log-probability; the final pick uses
// the per-token average.

#include <functional>
#include <span>
#include <vector>

#include "hmnet/data.hpp"
#include "hmnet/model.hpp"
#include "json.hpp"

namespace hmnet {

struct DecodeConfig {
  Index beam_size = 6;
  Index min_len = 0;
  Index max_len = 512;  // generated tokens, END included
  bool trigram_blocking = true;
  Index begin_id = data::Vocab::kBegin;
  Index end_id = data::Vocab::kEnd;
  // Never generated. PAD, BOS and BEGIN carry no summary content.
  std::vector<Index> suppressed_ids{data::Vocab::kPad, data::Vocab::kBos, data::Vocab::kBegin};

  void validate() const;
  bool operator==(const DecodeConfig&) const = default;
};

void to_json(nlohmann::json& j, const DecodeConfig& cfg);
void from_json(const nlohmann::json& j, DecodeConfig& cfg);

struct BeamHypothesis {
  std::vector<Index> tokens;  // starts with BEGIN
  double log_prob = 0.0;
  bool finished = false;
};

// Sets logits[w] to -inf when (prefix[-2], prefix[-1], w) already occurs as a
// contiguous trigram of prefix.
void apply_trigram_block(std::span<const Index> prefix, std::span<double> logits);

// Cumulative log-probability divided by the number of generated tokens
// (BEGIN excluded, END included). Throws EmptyHypothesis when nothing was generated.
double hypothesis_score(const BeamHypothesis& h);

// Next-token logits (vocabulary sized) for a prefix that starts with BEGIN.
using NextTokenLogits = std::function<std::vector<double>(std::span<const Index> prefix)>;

namespace decoding {

// Log-softmax of logits after blocking, END-masking and suppression have been
// applied for the given prefix. Masked entries are -inf.
std::vector<double> step_log_probs(std::span<const Index> prefix, std::vector<double> logits,
                                   const DecodeConfig& cfg);

}  // namespace decoding

// Every finished hypothesis in the order it finished, plus the selected one.
struct BeamResult {
  std::vector<BeamHypothesis> finished;
  BeamHypothesis best;  // tokens empty when nothing finished
};

BeamResult beam_search_detailed(const NextTokenLogits& next, const DecodeConfig& cfg);

// The selected hypothesis with BEGIN/END stripped.
std::vector<Index> beam_search(const NextTokenLogits& next, const DecodeConfig& cfg);
std::vector<Index> beam_search(const HMNet& net, const EncodedMeeting& enc, const DecodeConfig& cfg);

// Argmax at every step under the same masking rules. Stops at END or max_len.
std::vector<Index> greedy_decode(const NextTokenLogits& next, const DecodeConfig& cfg);
std::vector<Index> greedy_decode(const HMNet& net, const EncodedMeeting& enc,
                                 const DecodeConfig& cfg);

// Last-row decoder logits in eval mode, without building a graph.
NextTokenLogits model_logits(const HMNet& net, const EncodedMeeting& enc);

}  // namespace hmnet
