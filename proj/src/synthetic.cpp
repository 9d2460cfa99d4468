#include "hmnet/synthetic.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

namespace hmnet::data {
namespace {

const std::vector<std::string> kNouns{"remote", "button", "battery", "screen",  "case",
                                      "logo",   "chip",   "speaker", "station", "cover",
                                      "wheel",  "light"};
const std::vector<std::string> kAdjectives{"fancy", "simple", "rubber", "plastic", "yellow",
                                           "cheap", "round",  "small",  "curved",  "bright"};
const std::vector<std::string> kNumbers{"ten", "twelve", "fifteen", "twenty", "fifty", "eighty"};
const std::vector<std::string> kPlaces{"london", "paris", "tokyo", "berlin", "madrid", "boston"};
const std::vector<std::string> kStocks{"prices", "shares", "rents", "sales", "exports", "wages"};

const std::map<std::string, std::vector<std::string>> kRoleTemplates{
    {"PM",
     {"let us discuss the N1 and the N2 today .", "our budget for the N1 is NUM euros ."}},
    {"ID", {"the ADJ N1 needs a N2 inside .", "i can design a ADJ N1 with a N2 ."}},
    {"UI", {"users like a ADJ N1 with few buttons .", "the N1 should be ADJ and easy ."}},
    {"ME", {"the market prefers a ADJ N1 .", "research shows NUM percent want a N2 ."}},
};

const std::vector<std::string> kSummaryTemplates{
    "the group chose a ADJ N1 with a N2 .",
    "they agreed on a ADJ N1 and N2 .",
    "the N1 will be ADJ with a N2 .",
};

const std::set<std::string> kDeterminers{"the", "a"};
const std::set<std::string> kVerbs{"discuss", "is",     "needs", "design", "like",  "should",
                                   "be",      "prefers", "shows", "want",   "chose", "agreed",
                                   "will",    "rose",    "fell",  "said",   "can",   "let"};
const std::set<std::string> kPronouns{"us", "our", "i", "they", "users"};
const std::set<std::string> kAdpositions{"for", "with", "inside", "on", "in", "by", "and"};

std::vector<std::string> split(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string pos_of(const std::string& token) {
  if (token == "." || token == ",") return "PUNCT";
  if (kDeterminers.contains(token)) return "DET";
  if (kVerbs.contains(token)) return "VERB";
  if (kPronouns.contains(token)) return "PRON";
  if (kAdpositions.contains(token)) return "ADP";
  if (std::find(kNumbers.begin(), kNumbers.end(), token) != kNumbers.end()) return "NUM";
  if (std::find(kAdjectives.begin(), kAdjectives.end(), token) != kAdjectives.end()) return "ADJ";
  return "NOUN";
}

std::string ent_of(const std::string& token) {
  if (std::find(kNumbers.begin(), kNumbers.end(), token) != kNumbers.end()) return "CARDINAL";
  if (std::find(kPlaces.begin(), kPlaces.end(), token) != kPlaces.end()) return "GPE";
  return std::string(kNoneTag);
}

std::vector<std::string> fill(const std::string& pattern,
                              const std::map<std::string, std::string>& slots) {
  std::vector<std::string> out;
  for (auto& w : split(pattern)) {
    if (auto it = slots.find(w); it != slots.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(w);
    }
  }
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
  return items[static_cast<std::size_t>(rng() % items.size())];
}

Turn make_turn(const std::string& role, std::vector<std::string> tokens, std::size_t max_tokens) {
  if (tokens.size() > max_tokens) tokens.resize(max_tokens);
  Turn t;
  t.role = role;
  for (const auto& tok : tokens) {
    t.pos_tags.push_back(pos_of(tok));
    t.ent_tags.push_back(ent_of(tok));
  }
  t.tokens = std::move(tokens);
  return t;
}

}  // namespace

SymbolTable scenario_roles() { return SymbolTable({"PM", "ID", "UI", "ME"}); }

std::vector<Meeting> synthetic_meetings(std::size_t count, const SyntheticMeetingSpec& spec,
                                        std::uint64_t seed) {
  if (spec.min_turns == 0 || spec.min_turns > spec.max_turns) {
    throw std::invalid_argument("synthetic meeting turn range");
  }
  std::mt19937_64 rng(seed);
  const std::vector<std::string> roles = scenario_roles().names();
  std::set<std::tuple<std::string, std::string, std::string>> used;
  std::vector<Meeting> out;
  while (out.size() < count) {
    const std::string& adj = pick(kAdjectives, rng);
    const std::string& n1 = pick(kNouns, rng);
    const std::string& n2 = pick(kNouns, rng);
    if (n1 == n2 || !used.emplace(adj, n1, n2).second) {
      if (used.size() >= kAdjectives.size() * kNouns.size() * (kNouns.size() - 1)) {
        throw std::invalid_argument("synthetic grammar exhausted");
      }
      continue;
    }
    const std::map<std::string, std::string> slots{
        {"ADJ", adj}, {"N1", n1}, {"N2", n2}, {"NUM", pick(kNumbers, rng)}};

    Meeting m;
    m.id = "synthetic-" + std::to_string(out.size());
    const std::size_t turns =
        spec.min_turns + static_cast<std::size_t>(rng() % (spec.max_turns - spec.min_turns + 1));
    for (std::size_t i = 0; i < turns; ++i) {
      // PM opens; afterwards speakers are drawn uniformly.
      const std::string& role = i == 0 ? roles[0] : pick(roles, rng);
      const auto& pattern = pick(kRoleTemplates.at(role), rng);
      m.turns.push_back(make_turn(role, fill(pattern, slots), spec.max_turn_tokens));
    }
    m.summary = fill(pick(kSummaryTemplates, rng), slots);
    if (m.summary.size() > spec.max_summary_tokens) m.summary.resize(spec.max_summary_tokens);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Article> synthetic_articles(std::size_t count, std::uint64_t seed,
                                        const std::string& source_name) {
  std::mt19937_64 rng(seed);
  const std::vector<std::string> sentence_patterns{
      "STOCK in PLACE rose by NUM percent .",
      "officials in PLACE said STOCK will fall .",
      "analysts expect NUM new N1 plants in PLACE .",
      "the N1 market in PLACE is ADJ .",
  };
  const std::vector<std::string> summary_patterns{
      "PLACE STOCK rose .",
      "STOCK in PLACE fell .",
      "PLACE expects a ADJ N1 market .",
  };
  std::vector<Article> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::map<std::string, std::string> slots{{"PLACE", pick(kPlaces, rng)},
                                                   {"STOCK", pick(kStocks, rng)},
                                                   {"NUM", pick(kNumbers, rng)},
                                                   {"N1", pick(kNouns, rng)},
                                                   {"ADJ", pick(kAdjectives, rng)}};
    Article a;
    a.source_name = source_name;
    const std::size_t sentences = 2 + static_cast<std::size_t>(rng() % 3);
    for (std::size_t s = 0; s < sentences; ++s) {
      a.sentences.push_back(fill(pick(sentence_patterns, rng), slots));
    }
    a.summary = fill(pick(summary_patterns, rng), slots);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace hmnet::data
