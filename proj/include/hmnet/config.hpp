#pragma once

// Run configuration: one JSON document with a section per component, built
// from a named profile, then the config file, then key=value overrides.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hmnet/decoding.hpp"
#include "hmnet/gradcheck.hpp"
#include "hmnet/model.hpp"
#include "hmnet/training.hpp"
#include "json.hpp"

namespace hmnet {

struct DataConfig {
  std::size_t min_freq = 1;
  std::size_t max_vocab = 50000;
  std::size_t group_size = 4;  // articles per pseudo meeting
  // Extra meeting files whose tokens and roles join the lexicon, so a
  // pretrained model can be finetuned on a different corpus.
  std::vector<std::string> vocab_corpora;

  bool operator==(const DataConfig&) const = default;
};

struct GridConfig {
  std::vector<Index> min_lens{240, 280, 320, 360, 400, 440};
  std::vector<Index> beam_sizes{1, 3, 6, 8, 9, 10};
  Index stage1_beam = 3;
  Index max_len_margin = 64;  // max_len = min_len + margin

  bool operator==(const GridConfig&) const = default;
};

struct BaselineConfig {
  std::size_t oracle_k = 18;
  std::size_t random_k = 18;
  std::size_t copy_trials = 50;

  bool operator==(const BaselineConfig&) const = default;
};

struct PathsConfig {
  std::string input;       // file read by convert/summarize/evaluate/oracle
  std::string train;       // training meetings
  std::string dev;         // development meetings for model selection and grid
  std::string init;        // checkpoint to start finetuning from
  std::string checkpoint;  // checkpoint read by summarize/grid
  std::string candidates;  // summaries scored by evaluate
  std::string out;
  std::string log;         // per-step training log; default <out>.log.jsonl

  bool operator==(const PathsConfig&) const = default;
};

struct RunConfig {
  std::string profile = "ami-like";
  std::uint64_t seed = 1;
  HMNetConfig model;
  TrainConfig pretrain;
  TrainConfig finetune;
  DecodeConfig decode;
  DataConfig data;
  GridConfig grid;
  BaselineConfig baseline;
  gradcheck::Options gradcheck;
  PathsConfig paths;

  // Throws ValidationError naming the offending key.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// "ami-like", "icsi-like" or "toy". Throws ValidationError otherwise.
RunConfig profile_config(const std::string& name);
std::vector<std::string> profile_names();

// Applies one "key=value" override to a config document. Keys are dotted
// paths ("decode.beam_size") or bare names unique across sections
// ("beam_size"). Values parse as JSON when possible, else as strings.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Profile defaults < document values < overrides. Unknown keys are rejected.
RunConfig parse_config_text(const std::string& text, std::span<const std::string> overrides = {});
RunConfig parse_config(const std::filesystem::path& path,
                       std::span<const std::string> overrides = {});
// Profile defaults (or the "profile" override) < overrides.
RunConfig config_from_overrides(std::span<const std::string> overrides);

}  // namespace hmnet
