#pragma once

// Finite-difference checks of every composite block, shared by the CLI's
// gradcheck command and the test suites.

#include <cstdint>
#include <string>
#include <vector>

#include "hmnet/model.hpp"

namespace hmnet::gradcheck {

struct Options {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Probed entries per tensor; 0 probes every entry.
  Index max_entries = 24;
  std::uint64_t seed = 7;
};

struct Result {
  std::string name;    // "<suite>/<tensor>"
  double max_rel_error = 0.0;
  Index probes = 0;
  bool passed = false;
};

std::vector<Result> check_layer_norm(const Options& opt = {});
std::vector<Result> check_attention(const Options& opt = {});
std::vector<Result> check_encoder_block(const Options& opt = {});

// 2 layers, 2 heads, d_word 16 over a small random meeting.
HMNetConfig small_model_config();
std::vector<Result> check_model_loss(const HMNetConfig& cfg, const Options& opt = {});

// All of the above, model check at small_model_config().
std::vector<Result> run_all(const Options& opt = {});

bool all_passed(const std::vector<Result>& results);
double worst_error(const std::vector<Result>& results);

}  // namespace hmnet::gradcheck
