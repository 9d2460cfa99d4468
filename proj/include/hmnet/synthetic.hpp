#pragma once

// Seeded template grammar producing small meeting and news corpora for tests
// and smoke runs. Meetings use the four scenario roles PM, ID, UI and ME.

#include <cstdint>
#include <vector>

#include "hmnet/data.hpp"

namespace hmnet::data {

struct SyntheticMeetingSpec {
  std::size_t min_turns = 3;
  std::size_t max_turns = 6;
  std::size_t max_turn_tokens = 12;
  std::size_t max_summary_tokens = 10;
};

std::vector<Meeting> synthetic_meetings(std::size_t count, const SyntheticMeetingSpec& spec,
                                        std::uint64_t seed);

std::vector<Article> synthetic_articles(std::size_t count, std::uint64_t seed,
                                        const std::string& source_name = "news");

// The fixed four-role table used by synthetic meetings.
SymbolTable scenario_roles();

}  // namespace hmnet::data
