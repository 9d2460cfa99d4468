#pragma once

// Meeting corpus data model, vocabularies, the news-to-meeting converter and
// length control.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hmnet/tensor.hpp"

namespace hmnet::data {

inline constexpr std::string_view kNoneTag = "NONE";

struct Turn {
  std::string role;
  std::vector<std::string> tokens;
  std::vector<std::string> pos_tags;
  std::vector<std::string> ent_tags;

  bool operator==(const Turn&) const = default;
};

struct Meeting {
  std::string id;
  std::vector<Turn> turns;
  std::vector<std::string> summary;  // empty when unlabelled

  bool operator==(const Meeting&) const = default;

  // All turn tokens in order, as one sequence.
  std::vector<std::string> transcript_tokens() const;
};

struct Article {
  std::string source_name;
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> summary;

  bool operator==(const Article&) const = default;
};

// Dense string <-> id mapping, ids in insertion order.
class SymbolTable {
 public:
  SymbolTable() = default;
  explicit SymbolTable(std::vector<std::string> names);

  // Returns the existing id when already present.
  Index add(const std::string& name);
  std::optional<Index> find(std::string_view name) const;
  const std::string& name(Index id) const;
  Index size() const { return static_cast<Index>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const SymbolTable& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Index> ids_;
};

class Vocab {
 public:
  static constexpr Index kPad = 0;
  static constexpr Index kUnk = 1;
  static constexpr Index kBos = 2;
  static constexpr Index kBegin = 3;
  static constexpr Index kEnd = 4;
  static constexpr std::size_t kReservedCount = 5;
  static const std::array<std::string, kReservedCount>& reserved();

  Vocab();
  // `tokens` must start with the reserved tokens in order, with no duplicates.
  explicit Vocab(std::vector<std::string> tokens);

  Index id(std::string_view token) const;  // UNK for unknown tokens
  bool contains(std::string_view token) const { return table_.find(token).has_value(); }
  const std::string& token(Index id) const { return table_.name(id); }
  Index size() const { return table_.size(); }
  const std::vector<std::string>& tokens() const { return table_.names(); }

  std::vector<Index> encode(std::span<const std::string> tokens) const;
  // Drops PAD/BOS/BEGIN/END.
  std::vector<std::string> decode(std::span<const Index> ids) const;

  bool operator==(const Vocab&) const = default;

 private:
  SymbolTable table_;
};

// Tag table whose id 0 is NONE; unknown tags map to NONE.
class TagVocab {
 public:
  TagVocab();
  explicit TagVocab(std::vector<std::string> tags);

  Index id(std::string_view tag) const;
  Index size() const { return table_.size(); }
  const std::vector<std::string>& tags() const { return table_.names(); }
  Index add(const std::string& tag) { return table_.add(tag); }

  bool operator==(const TagVocab&) const = default;

 private:
  SymbolTable table_;
};

// ---------------------------------------------------------------------------
// Id-level views consumed by the model.

struct TurnIds {
  Index role = 0;
  std::vector<Index> tokens;
  std::vector<Index> pos;
  std::vector<Index> ent;
};

struct MeetingIds {
  std::vector<TurnIds> turns;
  std::vector<Index> target;  // BEGIN summary... END; empty when unlabelled
};

// Everything needed to turn a Meeting into ids.
struct Lexicon {
  Vocab vocab;
  SymbolTable roles;
  TagVocab pos;
  TagVocab ent;

  // Throws UnknownRole for roles outside the role table.
  MeetingIds to_ids(const Meeting& meeting) const;
  std::vector<Index> target_ids(std::span<const std::string> summary) const;

  bool operator==(const Lexicon&) const = default;
};

// ---------------------------------------------------------------------------
// Operations

// Lowercases, splits on whitespace and detaches leading/trailing ASCII
// punctuation as one token per character.
std::vector<std::string> tokenize(std::string_view text);

// Reserved tokens first, then tokens with frequency >= min_freq by
// descending frequency (ties lexicographic), truncated to max_size entries.
Vocab build_vocab(std::span<const Meeting> corpus, std::size_t min_freq, std::size_t max_size);

TagVocab build_pos_vocab(std::span<const Meeting> corpus);
TagVocab build_ent_vocab(std::span<const Meeting> corpus);
// Roles in order of first appearance.
SymbolTable build_role_table(std::span<const Meeting> corpus);

Meeting parse_meeting(std::string_view line);
std::string serialize_meeting(const Meeting& meeting);

Article parse_article(std::string_view line);
std::string serialize_article(const Article& article);

// Sentences of article i become turns by "<source_name>-i" (1-based), turns
// shuffled by a permutation seeded from `seed`; the summary is the article
// summaries concatenated in article order.
Meeting news_to_pseudo_meeting(std::span<const Article> articles, std::uint64_t seed,
                               std::string id = {});

// Groups consecutive runs of `group_size` articles; a trailing partial group
// becomes a smaller meeting. Group g is shuffled with seed + g.
std::vector<Meeting> convert_articles(std::span<const Article> articles, std::size_t group_size,
                                      std::uint64_t seed);

struct LengthLimits {
  std::size_t max_turn_tokens = 256;
  std::size_t max_turns = 1024;
  std::size_t max_summary_tokens = 1024;  // includes BEGIN and END
};

// Keeps the earliest turns and the leading tokens of each list.
Meeting truncate_meeting(const Meeting& meeting, const LengthLimits& limits);

// Uniform permutation of 0..n-1 by Fisher-Yates over a 64-bit Mersenne
// twister with rejection sampling, identical across standard libraries.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files. One JSON record per line.

std::vector<Meeting> read_meetings(const std::filesystem::path& path);
void write_meetings(const std::filesystem::path& path, std::span<const Meeting> meetings);
std::vector<Article> read_articles(const std::filesystem::path& path);
void write_articles(const std::filesystem::path& path, std::span<const Article> articles);
// Newline-separated role names; line number is the role id.
SymbolTable read_role_table(const std::filesystem::path& path);
void write_role_table(const std::filesystem::path& path, const SymbolTable& roles);
// One summary per line, tokens separated by single spaces.
std::vector<std::vector<std::string>> read_token_lines(const std::filesystem::path& path);
void write_token_lines(const std::filesystem::path& path,
                       std::span<const std::vector<std::string>> lines);

}  // namespace hmnet::data
