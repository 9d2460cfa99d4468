#include "hmnet/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <random>

#include "json.hpp"

namespace hmnet::data {

using nlohmann::json;

std::vector<std::string> Meeting::transcript_tokens() const {
  std::vector<std::string> out;
  for (const auto& turn : turns) out.insert(out.end(), turn.tokens.begin(), turn.tokens.end());
  return out;
}

// ---------------------------------------------------------------------------
// Symbol tables

SymbolTable::SymbolTable(std::vector<std::string> names) {
  for (auto& n : names) {
    if (ids_.contains(n)) throw SchemaError("duplicate symbol '" + n + "'");
    add(n);
  }
}

Index SymbolTable::add(const std::string& name) {
  if (auto it = ids_.find(name); it != ids_.end()) return it->second;
  const auto id = static_cast<Index>(names_.size());
  names_.push_back(name);
  ids_.emplace(name, id);
  return id;
}

std::optional<Index> SymbolTable::find(std::string_view name) const {
  if (auto it = ids_.find(std::string(name)); it != ids_.end()) return it->second;
  return std::nullopt;
}

const std::string& SymbolTable::name(Index id) const {
  if (id < 0 || id >= size()) throw IdOutOfRange("symbol id " + std::to_string(id));
  return names_[static_cast<std::size_t>(id)];
}

const std::array<std::string, Vocab::kReservedCount>& Vocab::reserved() {
  static const std::array<std::string, kReservedCount> names{"<pad>", "<unk>", "<bos>",
                                                             "<begin>", "<end>"};
  return names;
}

Vocab::Vocab() : table_(std::vector<std::string>(reserved().begin(), reserved().end())) {}

Vocab::Vocab(std::vector<std::string> tokens) : table_(std::move(tokens)) {
  const auto& res = reserved();
  if (table_.size() < static_cast<Index>(res.size()) ||
      !std::equal(res.begin(), res.end(), table_.names().begin())) {
    throw SchemaError("vocabulary must begin with the reserved tokens");
  }
}

Index Vocab::id(std::string_view token) const { return table_.find(token).value_or(kUnk); }

std::vector<Index> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<Index> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const Index> ids) const {
  std::vector<std::string> out;
  for (Index i : ids) {
    if (i == kPad || i == kBos || i == kBegin || i == kEnd) continue;
    out.push_back(token(i));
  }
  return out;
}

TagVocab::TagVocab() : table_(std::vector<std::string>{std::string(kNoneTag)}) {}

TagVocab::TagVocab(std::vector<std::string> tags) : table_(std::move(tags)) {
  if (table_.size() == 0 || table_.name(0) != kNoneTag) {
    throw SchemaError("tag vocabulary must begin with NONE");
  }
}

Index TagVocab::id(std::string_view tag) const { return table_.find(tag).value_or(0); }

MeetingIds Lexicon::to_ids(const Meeting& meeting) const {
  MeetingIds out;
  out.turns.reserve(meeting.turns.size());
  for (const auto& turn : meeting.turns) {
    TurnIds ids;
    const auto role = roles.find(turn.role);
    if (!role) throw UnknownRole("'" + turn.role + "' is not in the role table");
    ids.role = *role;
    ids.tokens = vocab.encode(turn.tokens);
    for (const auto& t : turn.pos_tags) ids.pos.push_back(pos.id(t));
    for (const auto& t : turn.ent_tags) ids.ent.push_back(ent.id(t));
    out.turns.push_back(std::move(ids));
  }
  if (!meeting.summary.empty()) out.target = target_ids(meeting.summary);
  return out;
}

std::vector<Index> Lexicon::target_ids(std::span<const std::string> summary) const {
  std::vector<Index> ids{Vocab::kBegin};
  for (const auto& t : summary) ids.push_back(vocab.id(t));
  ids.push_back(Vocab::kEnd);
  return ids;
}

// ---------------------------------------------------------------------------
// Tokenization and vocabulary

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    std::string_view chunk = text.substr(start, i - start);
    if (chunk.empty()) continue;

    std::size_t lead = 0;
    while (lead < chunk.size() && is_punct(chunk[lead])) ++lead;
    std::size_t trail = chunk.size();
    while (trail > lead && is_punct(chunk[trail - 1])) --trail;

    for (std::size_t k = 0; k < lead; ++k) out.emplace_back(1, chunk[k]);
    if (trail > lead) {
      std::string word(chunk.substr(lead, trail - lead));
      std::transform(word.begin(), word.end(), word.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      out.push_back(std::move(word));
    }
    for (std::size_t k = std::max(trail, lead); k < chunk.size(); ++k) out.emplace_back(1, chunk[k]);
  }
  return out;
}

Vocab build_vocab(std::span<const Meeting> corpus, std::size_t min_freq, std::size_t max_size) {
  if (corpus.empty()) throw EmptyCorpus("cannot build a vocabulary from no meetings");
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
  if (max_size <= Vocab::kReservedCount) {
    throw std::invalid_argument("max_size must exceed the reserved token count");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& m : corpus) {
    for (const auto& turn : m.turns) {
      for (const auto& t : turn.tokens) ++counts[t];
    }
    for (const auto& t : m.summary) ++counts[t];
  }
  const auto& reserved = Vocab::reserved();
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, count] : counts) {
    if (count < min_freq) continue;
    if (std::find(reserved.begin(), reserved.end(), token) != reserved.end()) continue;
    ranked.emplace_back(token, count);
  }
  // std::map iteration is already lexicographic, so a stable sort on count
  // leaves ties in lexicographic order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens(reserved.begin(), reserved.end());
  for (const auto& [token, count] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(token);
  }
  return Vocab(std::move(tokens));
}

namespace {

TagVocab build_tag_vocab(std::span<const Meeting> corpus, bool pos) {
  TagVocab tags;
  std::map<std::string, int> seen;
  for (const auto& m : corpus) {
    for (const auto& turn : m.turns) {
      for (const auto& t : pos ? turn.pos_tags : turn.ent_tags) seen[t];
    }
  }
  for (const auto& [tag, unused] : seen) tags.add(tag);
  return tags;
}

}  // namespace

TagVocab build_pos_vocab(std::span<const Meeting> corpus) { return build_tag_vocab(corpus, true); }
TagVocab build_ent_vocab(std::span<const Meeting> corpus) { return build_tag_vocab(corpus, false); }

SymbolTable build_role_table(std::span<const Meeting> corpus) {
  SymbolTable roles;
  for (const auto& m : corpus) {
    for (const auto& turn : m.turns) roles.add(turn.role);
  }
  return roles;
}

// ---------------------------------------------------------------------------
// Records

namespace {

std::vector<std::string> string_list(const json& j, const char* field) {
  if (!j.is_array()) throw SchemaError(std::string("'") + field + "' must be a list");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& item : j) {
    if (!item.is_string()) throw SchemaError(std::string("'") + field + "' entries must be strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

json parse_json_record(std::string_view line) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw SchemaError("record must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("malformed record: ") + e.what());
  }
}

}  // namespace

Meeting parse_meeting(std::string_view line) {
  const json j = parse_json_record(line);
  Meeting m;
  if (j.contains("id")) {
    if (!j["id"].is_string()) throw SchemaError("'id' must be a string");
    m.id = j["id"].get<std::string>();
  }
  if (!j.contains("turns") || !j["turns"].is_array()) throw SchemaError("missing 'turns' list");
  for (const auto& jt : j["turns"]) {
    if (!jt.is_object()) throw SchemaError("turn must be an object");
    if (!jt.contains("role") || !jt["role"].is_string()) throw SchemaError("turn missing 'role'");
    if (!jt.contains("tokens")) throw SchemaError("turn missing 'tokens'");
    Turn t;
    t.role = jt["role"].get<std::string>();
    t.tokens = string_list(jt["tokens"], "tokens");
    if (t.tokens.empty()) throw SchemaError("turn with no tokens");
    for (const char* field : {"pos", "ent"}) {
      auto& tags = std::string_view(field) == "pos" ? t.pos_tags : t.ent_tags;
      if (jt.contains(field)) {
        tags = string_list(jt[field], field);
        if (tags.size() != t.tokens.size()) {
          throw SchemaError(std::string("'") + field + "' length " + std::to_string(tags.size()) +
                            " != tokens length " + std::to_string(t.tokens.size()));
        }
      } else {
        tags.assign(t.tokens.size(), std::string(kNoneTag));
      }
    }
    m.turns.push_back(std::move(t));
  }
  if (m.turns.empty()) throw SchemaError("meeting with zero turns");
  if (j.contains("summary")) m.summary = string_list(j["summary"], "summary");
  return m;
}

std::string serialize_meeting(const Meeting& meeting) {
  json j;
  j["id"] = meeting.id;
  j["turns"] = json::array();
  for (const auto& t : meeting.turns) {
    j["turns"].push_back(
        {{"role", t.role}, {"tokens", t.tokens}, {"pos", t.pos_tags}, {"ent", t.ent_tags}});
  }
  j["summary"] = meeting.summary;
  return j.dump();
}

Article parse_article(std::string_view line) {
  const json j = parse_json_record(line);
  Article a;
  if (!j.contains("source_name") || !j["source_name"].is_string()) {
    throw SchemaError("article missing 'source_name'");
  }
  a.source_name = j["source_name"].get<std::string>();
  if (!j.contains("sentences") || !j["sentences"].is_array()) {
    throw SchemaError("article missing 'sentences'");
  }
  for (const auto& s : j["sentences"]) a.sentences.push_back(string_list(s, "sentences"));
  if (j.contains("summary")) a.summary = string_list(j["summary"], "summary");
  return a;
}

std::string serialize_article(const Article& article) {
  json j;
  j["source_name"] = article.source_name;
  j["sentences"] = article.sentences;
  j["summary"] = article.summary;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Pseudo meetings

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t i = n; i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = kMax - (kMax % bound + 1) % bound;
    std::uint64_t r = rng();
    while (r > limit) r = rng();
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(r % bound)]);
  }
  return perm;
}

Meeting news_to_pseudo_meeting(std::span<const Article> articles, std::uint64_t seed,
                               std::string id) {
  if (articles.empty()) throw EmptyArticle("no articles to group");
  std::vector<Turn> ordered;
  Meeting m;
  m.id = std::move(id);
  for (std::size_t i = 0; i < articles.size(); ++i) {
    const auto& a = articles[i];
    if (a.sentences.empty()) throw EmptyArticle("article " + std::to_string(i) + " has no sentences");
    const std::string role = a.source_name + "-" + std::to_string(i + 1);
    for (const auto& sentence : a.sentences) {
      if (sentence.empty()) throw EmptyArticle("article " + std::to_string(i) + " has an empty sentence");
      Turn t;
      t.role = role;
      t.tokens = sentence;
      t.pos_tags.assign(sentence.size(), std::string(kNoneTag));
      t.ent_tags.assign(sentence.size(), std::string(kNoneTag));
      ordered.push_back(std::move(t));
    }
    m.summary.insert(m.summary.end(), a.summary.begin(), a.summary.end());
  }
  for (std::size_t k : seeded_permutation(ordered.size(), seed)) m.turns.push_back(ordered[k]);
  return m;
}

std::vector<Meeting> convert_articles(std::span<const Article> articles, std::size_t group_size,
                                      std::uint64_t seed) {
  if (group_size == 0) throw std::invalid_argument("group size must be >= 1");
  std::vector<Meeting> out;
  for (std::size_t start = 0, g = 0; start < articles.size(); start += group_size, ++g) {
    const std::size_t count = std::min(group_size, articles.size() - start);
    out.push_back(news_to_pseudo_meeting(articles.subspan(start, count), seed + g,
                                         "pseudo-" + std::to_string(g)));
  }
  return out;
}

Meeting truncate_meeting(const Meeting& meeting, const LengthLimits& limits) {
  if (limits.max_turn_tokens == 0 || limits.max_turns == 0 || limits.max_summary_tokens == 0) {
    throw std::invalid_argument("length limits must be positive");
  }
  Meeting out;
  out.id = meeting.id;
  const std::size_t turns = std::min(limits.max_turns, meeting.turns.size());
  for (std::size_t i = 0; i < turns; ++i) {
    Turn t = meeting.turns[i];
    const std::size_t keep = std::min(limits.max_turn_tokens, t.tokens.size());
    t.tokens.resize(keep);
    t.pos_tags.resize(std::min(keep, t.pos_tags.size()));
    t.ent_tags.resize(std::min(keep, t.ent_tags.size()));
    out.turns.push_back(std::move(t));
  }
  const std::size_t room = limits.max_summary_tokens > 2 ? limits.max_summary_tokens - 2 : 0;
  out.summary.assign(meeting.summary.begin(),
                     meeting.summary.begin() +
                         static_cast<std::ptrdiff_t>(std::min(room, meeting.summary.size())));
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

template <typename Record, typename Parse>
std::vector<Record> read_records(const std::filesystem::path& path, Parse parse) {
  auto in = open_input(path);
  std::vector<Record> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      out.push_back(parse(line));
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<Meeting> read_meetings(const std::filesystem::path& path) {
  return read_records<Meeting>(path, parse_meeting);
}

void write_meetings(const std::filesystem::path& path, std::span<const Meeting> meetings) {
  auto out = open_output(path);
  for (const auto& m : meetings) out << serialize_meeting(m) << '\n';
}

std::vector<Article> read_articles(const std::filesystem::path& path) {
  return read_records<Article>(path, parse_article);
}

void write_articles(const std::filesystem::path& path, std::span<const Article> articles) {
  auto out = open_output(path);
  for (const auto& a : articles) out << serialize_article(a) << '\n';
}

SymbolTable read_role_table(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw SchemaError(path.string() + ": empty role name");
    names.push_back(line);
  }
  return SymbolTable(std::move(names));
}

void write_role_table(const std::filesystem::path& path, const SymbolTable& roles) {
  auto out = open_output(path);
  for (const auto& n : roles.names()) out << n << '\n';
}

std::vector<std::vector<std::string>> read_token_lines(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      const std::size_t start = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i > start) tokens.push_back(line.substr(start, i - start));
    }
    out.push_back(std::move(tokens));
  }
  return out;
}

void write_token_lines(const std::filesystem::path& path,
                       std::span<const std::vector<std::string>> lines) {
  auto out = open_output(path);
  for (const auto& tokens : lines) {
    for (std::size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
    out << '\n';
  }
}

}  // namespace hmnet::data
