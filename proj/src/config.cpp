#include "hmnet/config.hpp"

#include "hmnet/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace hmnet {

namespace {

const char* kDefaultProfile = "ami-like";

std::string strip_prefix(const std::string& what) {
  const std::string prefix = "ValidationError: ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

template <typename F>
void within(const std::string& section, F&& check) {
  try {
    check();
  } catch (const ValidationError& e) {
    throw ValidationError(section + "." + strip_prefix(e.what()));
  }
}

void require(bool ok, const std::string& key, const std::string& why) {
  if (!ok) throw ValidationError(key + ": " + why);
}

nlohmann::json train_json(const TrainConfig& c) {
  nlohmann::json j = c;
  j.erase("seed");
  return j;
}

bool is_integer(const nlohmann::json& v) { return v.is_number_integer() || v.is_number_unsigned(); }

// Type of `value` must be compatible with the schema leaf it replaces.
void check_leaf(const std::string& key, const nlohmann::json& schema, const nlohmann::json& value) {
  auto fail = [&](const char* expected) {
    throw ValidationError(key + ": expected " + expected + ", got " + value.dump());
  };
  if (schema.is_null()) {
    if (!value.is_null() && !is_integer(value)) fail("an integer or null");
  } else if (is_integer(schema)) {
    if (is_integer(value)) {
      if (schema.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
        fail("a non-negative integer");
      }
    } else if (value.is_number_float()) {
      const double v = value.get<double>();
      if (v != static_cast<double>(static_cast<std::int64_t>(v))) fail("an integer");
    } else {
      fail("an integer");
    }
  } else if (schema.is_number_float()) {
    if (!value.is_number()) fail("a number");
  } else if (schema.is_boolean()) {
    if (!value.is_boolean()) fail("a boolean");
  } else if (schema.is_string()) {
    if (!value.is_string()) fail("a string");
  } else if (schema.is_array()) {
    if (!value.is_array()) fail("an array");
  }
}

nlohmann::json coerce(const nlohmann::json& schema, const nlohmann::json& value) {
  // Integral floats such as 400.0 stand in for integer fields.
  if (is_integer(schema) && value.is_number_float()) {
    return static_cast<std::int64_t>(value.get<double>());
  }
  return value;
}

void merge(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw ValidationError((path.empty() ? "config" : path) + ": expected an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ValidationError(full + ": unknown key");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, full);
    } else {
      check_leaf(full, slot, value);
      slot = coerce(slot, value);
    }
  }
}

template <typename T>
void read_section(const nlohmann::json& j, const char* key, T& target) {
  try {
    if (j.contains(key)) j.at(key).get_to(target);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string(key) + ": " + e.what());
  }
}

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

std::pair<std::string, std::string> split_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("'" + assignment + "': overrides take the form key=value");
  }
  return {assignment.substr(0, eq), assignment.substr(eq + 1)};
}

std::vector<std::string> split_dots(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream in(key);
  for (std::string part; std::getline(in, part, '.');) parts.push_back(part);
  return parts;
}

std::string profile_from(const nlohmann::json& doc, std::span<const std::string> overrides) {
  std::string profile = kDefaultProfile;
  if (doc.contains("profile")) {
    if (!doc.at("profile").is_string()) throw ValidationError("profile: expected a string");
    profile = doc.at("profile").get<std::string>();
  }
  for (const auto& o : overrides) {
    const auto [key, value] = split_assignment(o);
    if (key == "profile") profile = value;
  }
  return profile;
}

RunConfig build(const nlohmann::json& doc, std::span<const std::string> overrides) {
  nlohmann::json base = to_json(profile_config(profile_from(doc, overrides)));
  merge(base, doc, "");
  for (const auto& o : overrides) apply_override(base, o);
  RunConfig cfg = run_config_from_json(base);
  cfg.validate();
  return cfg;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json model = c.model;
  for (const char* key : {"word_d_model", "turn_d_model", "decoder_d_model"}) {
    if (!model.contains(key)) model[key] = nullptr;
  }
  return nlohmann::json{
      {"profile", c.profile},
      {"seed", c.seed},
      {"model", model},
      {"pretrain", train_json(c.pretrain)},
      {"finetune", train_json(c.finetune)},
      {"decode", c.decode},
      {"data",
       {{"min_freq", c.data.min_freq},
        {"max_vocab", c.data.max_vocab},
        {"group_size", c.data.group_size},
        {"vocab_corpora", c.data.vocab_corpora}}},
      {"grid",
       {{"min_lens", c.grid.min_lens},
        {"beam_sizes", c.grid.beam_sizes},
        {"stage1_beam", c.grid.stage1_beam},
        {"max_len_margin", c.grid.max_len_margin}}},
      {"baseline",
       {{"oracle_k", c.baseline.oracle_k},
        {"random_k", c.baseline.random_k},
        {"copy_trials", c.baseline.copy_trials}}},
      {"gradcheck",
       {{"eps", c.gradcheck.eps},
        {"tolerance", c.gradcheck.tolerance},
        {"max_entries", c.gradcheck.max_entries}}},
      {"paths",
       {{"input", c.paths.input},
        {"train", c.paths.train},
        {"dev", c.paths.dev},
        {"init", c.paths.init},
        {"checkpoint", c.paths.checkpoint},
        {"candidates", c.paths.candidates},
        {"out", c.paths.out},
        {"log", c.paths.log}}},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  read_section(j, "profile", c.profile);
  read_section(j, "seed", c.seed);
  read_section(j, "model", c.model);
  read_section(j, "pretrain", c.pretrain);
  read_section(j, "finetune", c.finetune);
  read_section(j, "decode", c.decode);
  try {
    auto field = [&](const char* section, const char* key, auto& target) {
      if (j.contains(section) && j.at(section).contains(key)) j.at(section).at(key).get_to(target);
    };
    field("data", "min_freq", c.data.min_freq);
    field("data", "max_vocab", c.data.max_vocab);
    field("data", "group_size", c.data.group_size);
    field("data", "vocab_corpora", c.data.vocab_corpora);
    field("grid", "min_lens", c.grid.min_lens);
    field("grid", "beam_sizes", c.grid.beam_sizes);
    field("grid", "stage1_beam", c.grid.stage1_beam);
    field("grid", "max_len_margin", c.grid.max_len_margin);
    field("baseline", "oracle_k", c.baseline.oracle_k);
    field("baseline", "random_k", c.baseline.random_k);
    field("baseline", "copy_trials", c.baseline.copy_trials);
    field("gradcheck", "eps", c.gradcheck.eps);
    field("gradcheck", "tolerance", c.gradcheck.tolerance);
    field("gradcheck", "max_entries", c.gradcheck.max_entries);
    field("paths", "input", c.paths.input);
    field("paths", "train", c.paths.train);
    field("paths", "dev", c.paths.dev);
    field("paths", "init", c.paths.init);
    field("paths", "checkpoint", c.paths.checkpoint);
    field("paths", "candidates", c.paths.candidates);
    field("paths", "out", c.paths.out);
    field("paths", "log", c.paths.log);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.pretrain.seed = c.seed;
  c.finetune.seed = c.seed;
  c.gradcheck.seed = c.seed;
  return c;
}

void RunConfig::validate() const {
  const auto names = profile_names();
  require(std::find(names.begin(), names.end(), profile) != names.end(), "profile",
          "unknown profile '" + profile + "'");
  within("model", [&] { model.validate(); });
  within("pretrain", [&] { pretrain.validate(); });
  within("finetune", [&] { finetune.validate(); });
  within("decode", [&] { decode.validate(); });
  require(decode.max_len <= model.max_summary_tokens, "decode.max_len",
          "exceeds model.max_summary_tokens");
  require(data.min_freq >= 1, "data.min_freq", "must be >= 1");
  require(data.max_vocab > data::Vocab::kReservedCount, "data.max_vocab",
          "must exceed the reserved token count");
  require(data.group_size >= 1, "data.group_size", "must be >= 1");
  require(!grid.min_lens.empty(), "grid.min_lens", "must not be empty");
  require(!grid.beam_sizes.empty(), "grid.beam_sizes", "must not be empty");
  for (Index v : grid.min_lens) require(v >= 0, "grid.min_lens", "entries must be >= 0");
  for (Index v : grid.beam_sizes) require(v >= 1, "grid.beam_sizes", "entries must be >= 1");
  require(grid.stage1_beam >= 1, "grid.stage1_beam", "must be >= 1");
  require(grid.max_len_margin >= 1, "grid.max_len_margin", "must be >= 1");
  require(baseline.oracle_k >= 1, "baseline.oracle_k", "must be >= 1");
  require(baseline.random_k >= 1, "baseline.random_k", "must be >= 1");
  require(baseline.copy_trials >= 1, "baseline.copy_trials", "must be >= 1");
  require(gradcheck.eps > 0.0, "gradcheck.eps", "must be > 0");
  require(gradcheck.tolerance > 0.0, "gradcheck.tolerance", "must be > 0");
  require(gradcheck.max_entries >= 0, "gradcheck.max_entries", "must be >= 0");
}

std::vector<std::string> profile_names() { return {"ami-like", "icsi-like", "toy"}; }

RunConfig profile_config(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "ami-like") {
    c.decode.beam_size = 6;
    c.decode.min_len = 400;
    c.baseline.oracle_k = eval::kOracleSentencesAmi;
    c.baseline.random_k = eval::kOracleSentencesAmi;
  } else if (name == "icsi-like") {
    c.decode.beam_size = 6;
    c.decode.min_len = 280;
    c.baseline.oracle_k = eval::kOracleSentencesIcsi;
    c.baseline.random_k = eval::kOracleSentencesIcsi;
  } else if (name == "toy") {
    c.model.n_layers = 2;
    c.model.n_heads = 2;
    c.model.d_word = 64;
    c.model.d_pos = 8;
    c.model.d_ent = 8;
    c.model.d_role = 16;
    c.model.dropout = 0.1;
    c.model.max_turn_tokens = 64;
    c.model.max_turns = 64;
    c.model.max_summary_tokens = 512;
    for (TrainConfig* t : {&c.pretrain, &c.finetune}) {
      t->warmup_steps = 100;
      t->peak_lr = 1e-3;
      t->accumulation_steps = 2;
      t->max_steps = 200;
      t->checkpoint_every = 100;
      t->eval_every = 100;
    }
    c.decode.beam_size = 4;
    c.decode.min_len = 0;
    c.decode.max_len = 32;
    c.baseline.oracle_k = 2;
    c.baseline.random_k = 2;
  } else {
    throw ValidationError("profile: unknown profile '" + name + "'");
  }
  if (name != "toy") {
    c.finetune.peak_lr = 1e-4;
    c.decode.max_len = 512;
  }
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto [key, text] = split_assignment(assignment);
  const nlohmann::json value = parse_value(text);

  std::vector<std::string> path;
  if (key.find('.') != std::string::npos) {
    path = split_dots(key);
  } else if (doc.contains(key) && !doc.at(key).is_object()) {
    path = {key};
  } else {
    std::vector<std::string> matches;
    for (const auto& [section, body] : doc.items()) {
      if (body.is_object() && body.contains(key)) matches.push_back(section);
    }
    if (matches.empty()) throw ValidationError(key + ": unknown key");
    if (matches.size() > 1) {
      std::string where;
      for (const auto& m : matches) where += (where.empty() ? "" : ", ") + m + "." + key;
      throw ValidationError(key + ": ambiguous, qualify as one of " + where);
    }
    path = {matches.front(), key};
  }

  nlohmann::json* slot = &doc;
  for (const auto& part : path) {
    if (!slot->is_object() || !slot->contains(part)) throw ValidationError(key + ": unknown key");
    slot = &(*slot)[part];
  }
  if (slot->is_object()) throw ValidationError(key + ": names a section, not a value");
  // Strings stay strings even when they look like JSON ("paths.out=1").
  const nlohmann::json typed = slot->is_string() && !value.is_string() ? nlohmann::json(text) : value;
  check_leaf(key, *slot, typed);
  *slot = coerce(*slot, typed);
}

RunConfig parse_config_text(const std::string& text, std::span<const std::string> overrides) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigParseError(e.what());
  }
  if (!doc.is_object()) throw ConfigParseError("top level must be an object");
  return build(doc, overrides);
}

RunConfig parse_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigParseError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), overrides);
}

RunConfig config_from_overrides(std::span<const std::string> overrides) {
  return build(nlohmann::json::object(), overrides);
}

}  // namespace hmnet
