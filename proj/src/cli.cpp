#include "hmnet/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "hmnet/config.hpp"
#include "hmnet/evaluation.hpp"

namespace hmnet::cli {

namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Logging to stderr; HMNET_LOG=quiet|info|debug (or 0|1|2).

enum class Level { kQuiet = 0, kInfo = 1, kDebug = 2 };

Level log_level() {
  const char* env = std::getenv("HMNET_LOG");
  if (env == nullptr) return Level::kInfo;
  const std::string v = env;
  if (v == "quiet" || v == "0" || v == "error") return Level::kQuiet;
  if (v == "debug" || v == "2") return Level::kDebug;
  return Level::kInfo;
}

void log(Level level, const std::string& message) {
  if (static_cast<int>(level) <= static_cast<int>(log_level())) {
    std::cerr << "[hmnet] " << message << '\n';
  }
}

// ---------------------------------------------------------------------------
// Options shared by every subcommand.

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string input;
  std::string train;
  std::string dev;
  std::string init;
  std::string checkpoint;
  std::string candidates;
  std::string log;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--set", f.sets, "key=value override (repeatable)");
  cmd->add_option("--seed", f.seed, "Seed for every stochastic step");
  cmd->add_option("--out", f.out, "Output path");
  cmd->add_option("--in", f.input, "Input file");
  cmd->add_option("--train", f.train, "Training meetings");
  cmd->add_option("--dev", f.dev, "Development meetings");
  cmd->add_option("--init", f.init, "Checkpoint to initialize from");
  cmd->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
  cmd->add_option("--candidates", f.candidates, "Summaries to score, one per line");
  cmd->add_option("--log", f.log, "Per-step training log");
}

RunConfig load_config(const Flags& f) {
  RunConfig cfg = f.config.empty() ? config_from_overrides(f.sets) : parse_config(f.config, f.sets);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.pretrain.seed = cfg.finetune.seed = cfg.gradcheck.seed = *f.seed;
  }
  auto take = [](const std::string& flag, std::string& slot) {
    if (!flag.empty()) slot = flag;
  };
  take(f.out, cfg.paths.out);
  take(f.input, cfg.paths.input);
  take(f.train, cfg.paths.train);
  take(f.dev, cfg.paths.dev);
  take(f.init, cfg.paths.init);
  take(f.checkpoint, cfg.paths.checkpoint);
  take(f.candidates, cfg.paths.candidates);
  take(f.log, cfg.paths.log);
  log(Level::kInfo, "effective config " + to_json(cfg).dump());
  return cfg;
}

const std::string& require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + ": required for this command");
  return value;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

data::LengthLimits limits_of(const HMNetConfig& m) {
  return {static_cast<std::size_t>(m.max_turn_tokens), static_cast<std::size_t>(m.max_turns),
          static_cast<std::size_t>(m.max_summary_tokens)};
}

std::vector<data::Meeting> read_truncated(const std::string& path, const HMNetConfig& model) {
  std::vector<data::Meeting> out;
  for (const auto& m : data::read_meetings(path)) out.push_back(data::truncate_meeting(m, limits_of(model)));
  if (out.empty()) throw EmptyCorpus(path + " holds no meetings");
  return out;
}

std::vector<std::vector<std::string>> turn_sentences(const data::Meeting& m) {
  std::vector<std::vector<std::string>> out;
  for (const auto& t : m.turns) out.push_back(t.tokens);
  return out;
}

std::vector<Index> decode_meeting(const HMNet& net, const data::Lexicon& lexicon,
                                  const data::Meeting& meeting, const DecodeConfig& cfg) {
  NoGradGuard guard;
  const auto ids = lexicon.to_ids(meeting);
  const auto enc = model::encode_meeting(ids, net);
  return beam_search(net, enc, cfg);
}

double dev_rouge1(const HMNet& net, const data::Lexicon& lexicon,
                  std::span<const data::Meeting> dev, const DecodeConfig& cfg) {
  double total = 0.0;
  for (const auto& m : dev) {
    const auto tokens = lexicon.vocab.decode(decode_meeting(net, lexicon, m, cfg));
    total += eval::rouge_n(tokens, m.summary, 1).f1;
  }
  return total / static_cast<double>(dev.size());
}

eval::RougeTriple dev_rouge(const HMNet& net, const data::Lexicon& lexicon,
                            std::span<const data::Meeting> dev, const DecodeConfig& cfg) {
  eval::RougeTriple sum;
  for (const auto& m : dev) {
    const auto tokens = lexicon.vocab.decode(decode_meeting(net, lexicon, m, cfg));
    const auto t = eval::rouge_all(tokens, m.summary);
    sum.r1.f1 += t.r1.f1;
    sum.r2.f1 += t.r2.f1;
    sum.su4.f1 += t.su4.f1;
  }
  const auto n = static_cast<double>(dev.size());
  sum.r1.f1 /= n;
  sum.r2.f1 /= n;
  sum.su4.f1 /= n;
  return sum;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_convert(const RunConfig& cfg) {
  const auto articles = data::read_articles(require_path(cfg.paths.input, "--in"));
  if (articles.empty()) throw EmptyCorpus(cfg.paths.input + " holds no articles");
  const auto meetings = data::convert_articles(articles, cfg.data.group_size, cfg.seed);
  const auto& out = require_path(cfg.paths.out, "--out");
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  data::write_meetings(out, meetings);
  log(Level::kInfo, "converted " + std::to_string(articles.size()) + " articles into " +
                        std::to_string(meetings.size()) + " meetings");
  return kExitOk;
}

data::Lexicon build_lexicon(const std::vector<data::Meeting>& train, const RunConfig& cfg) {
  std::vector<data::Meeting> all = train;
  for (const auto& extra : cfg.data.vocab_corpora) {
    for (auto& m : data::read_meetings(extra)) all.push_back(std::move(m));
  }
  data::Lexicon lex;
  lex.vocab = data::build_vocab(all, cfg.data.min_freq, cfg.data.max_vocab);
  lex.roles = data::build_role_table(all);
  lex.pos = data::build_pos_vocab(all);
  lex.ent = data::build_ent_vocab(all);
  return lex;
}

// Appends rows ~ U(-0.02, 0.02) so an embedding table covers `rows` ids.
Tensor grow_table(const Tensor& table, Index rows, std::mt19937_64& rng) {
  const Tensor::Matrix& old = table.value();
  if (rows <= old.rows()) return table;
  std::uniform_real_distribution<double> uniform(-0.02, 0.02);
  Tensor::Matrix m(rows, old.cols());
  m.topRows(old.rows()) = old;
  for (Index r = old.rows(); r < rows; ++r) {
    for (Index c = 0; c < old.cols(); ++c) m(r, c) = uniform(rng);
  }
  return Tensor({rows, old.cols()}, std::move(m), true);
}

// Adds tokens, roles and tags first seen in `corpus` to an initialized model,
// so a model pretrained on one corpus can be finetuned on another.
void extend_lexicon(HMNet& net, data::Lexicon& lexicon, const std::vector<data::Meeting>& corpus,
                    const RunConfig& cfg) {
  std::vector<std::string> tokens = lexicon.vocab.tokens();
  const auto fresh = data::build_vocab(corpus, cfg.data.min_freq, cfg.data.max_vocab);
  for (std::size_t i = data::Vocab::kReservedCount; i < fresh.tokens().size(); ++i) {
    if (!lexicon.vocab.contains(fresh.tokens()[i])) tokens.push_back(fresh.tokens()[i]);
  }
  lexicon.vocab = data::Vocab(std::move(tokens));
  for (const auto& m : corpus) {
    for (const auto& t : m.turns) {
      lexicon.roles.add(t.role);
      for (const auto& tag : t.pos_tags) lexicon.pos.add(tag);
      for (const auto& tag : t.ent_tags) lexicon.ent.add(tag);
    }
  }
  HMNetConfig& c = net.config;
  const Index added = (lexicon.vocab.size() - c.vocab_size) + (lexicon.roles.size() - c.n_roles) +
                      (lexicon.pos.size() - c.n_pos_tags) + (lexicon.ent.size() - c.n_ent_tags);
  if (added == 0) return;
  std::mt19937_64 rng(cfg.seed);
  net.params.embedding = grow_table(net.params.embedding, lexicon.vocab.size(), rng);
  net.params.role_embedding = grow_table(net.params.role_embedding, lexicon.roles.size(), rng);
  net.params.pos_embedding = grow_table(net.params.pos_embedding, lexicon.pos.size(), rng);
  net.params.ent_embedding = grow_table(net.params.ent_embedding, lexicon.ent.size(), rng);
  c.vocab_size = lexicon.vocab.size();
  c.n_roles = lexicon.roles.size();
  c.n_pos_tags = lexicon.pos.size();
  c.n_ent_tags = lexicon.ent.size();
  log(Level::kInfo, "lexicon extended by " + std::to_string(added) + " entries");
}

int cmd_train(const RunConfig& cfg, const TrainConfig& tcfg, const char* stage) {
  const auto& out = require_path(cfg.paths.out, "--out");
  data::Lexicon lexicon;
  HMNet net;
  std::vector<data::Meeting> train;
  if (!cfg.paths.init.empty()) {
    Checkpoint init = load_checkpoint(cfg.paths.init);
    lexicon = std::move(init.lexicon);
    net = HMNet{init.model, std::move(init.params)};
    train = read_truncated(require_path(cfg.paths.train, "--train"), net.config);
    std::vector<data::Meeting> all = train;
    for (const auto& extra : cfg.data.vocab_corpora) {
      for (auto& m : data::read_meetings(extra)) all.push_back(std::move(m));
    }
    extend_lexicon(net, lexicon, all, cfg);
    log(Level::kInfo, std::string(stage) + ": initialized from " + cfg.paths.init);
  } else {
    train = read_truncated(require_path(cfg.paths.train, "--train"), cfg.model);
    lexicon = build_lexicon(train, cfg);
    HMNetConfig model = cfg.model;
    model.vocab_size = lexicon.vocab.size();
    model.n_roles = lexicon.roles.size();
    model.n_pos_tags = lexicon.pos.size();
    model.n_ent_tags = lexicon.ent.size();
    net = HMNet{model, HMNetParams::init(model, cfg.seed)};
  }

  std::vector<data::MeetingIds> corpus;
  for (const auto& m : train) {
    if (!m.summary.empty()) corpus.push_back(lexicon.to_ids(m));
  }
  if (corpus.empty()) throw EmptyCorpus("no training meeting has a summary");

  std::vector<data::Meeting> dev;
  if (!cfg.paths.dev.empty()) dev = read_truncated(cfg.paths.dev, net.config);

  const fs::path log_path = cfg.paths.log.empty() ? fs::path(out + ".log.jsonl") : fs::path(cfg.paths.log);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream step_log(log_path, std::ios::trunc);
  if (!step_log) throw IoError("cannot write " + log_path.string());

  TrainCallbacks callbacks;
  callbacks.on_step = [&](const StepResult& r) {
    step_log << nlohmann::json{{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}, {"grad_norm", r.grad_norm}}.dump()
             << '\n';
    const bool milestone = r.step % 50 == 0 || r.step == 1;
    log(milestone ? Level::kInfo : Level::kDebug,
        std::string(stage) + " step " + std::to_string(r.step) + " loss " + std::to_string(r.loss));
  };
  if (!dev.empty()) {
    callbacks.dev_score = [&](const HMNet& m) {
      const double score = dev_rouge1(m, lexicon, dev, cfg.decode);
      log(Level::kInfo, std::string(stage) + " dev ROUGE-1 F1 " + std::to_string(score));
      return score;
    };
  }
  if (out.find('/') != std::string::npos && fs::path(out).has_parent_path()) {
    fs::create_directories(fs::path(out).parent_path());
  }
  callbacks.on_checkpoint = [&](const HMNet& m, const RAdamState& state, Index) {
    save_checkpoint(out, Checkpoint{m.config, tcfg, lexicon, m.params, state});
  };

  RAdamState state = RAdamState::init(net.params.parameters(), tcfg.beta1, tcfg.beta2, tcfg.epsilon);
  const TrainSummary summary = hmnet::train(net, state, corpus, tcfg, callbacks);
  std::ostringstream msg;
  msg << stage << " done: " << summary.steps << " steps, final loss " << summary.final_loss;
  if (summary.best_dev_score) msg << ", best dev ROUGE-1 F1 " << *summary.best_dev_score << " at step " << summary.best_step;
  log(Level::kInfo, msg.str());
  return kExitOk;
}

int cmd_summarize(const RunConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(require_path(cfg.paths.checkpoint, "--checkpoint"));
  const HMNet net{ckpt.model, ckpt.params};
  const auto meetings = read_truncated(require_path(cfg.paths.input, "--in"), net.config);
  std::vector<std::vector<std::string>> lines;
  for (const auto& m : meetings) {
    lines.push_back(ckpt.lexicon.vocab.decode(decode_meeting(net, ckpt.lexicon, m, cfg.decode)));
    log(Level::kDebug, m.id + ": " + std::to_string(lines.back().size()) + " tokens");
  }
  const auto& out = require_path(cfg.paths.out, "--out");
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  data::write_token_lines(out, lines);
  log(Level::kInfo, "wrote " + std::to_string(lines.size()) + " summaries to " + out);
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg) {
  const auto candidates = data::read_token_lines(require_path(cfg.paths.candidates, "--candidates"));
  const auto meetings = data::read_meetings(require_path(cfg.paths.input, "--in"));
  std::vector<eval::Tokens> references, transcripts;
  std::vector<std::string> ids;
  for (const auto& m : meetings) {
    references.push_back(m.summary);
    transcripts.push_back(m.transcript_tokens());
    ids.push_back(m.id);
  }
  const auto report = eval::evaluation_report(candidates, references, transcripts, ids);
  write_text(require_path(cfg.paths.out, "--out"), report.dump(2) + "\n");
  const auto& c = report.at("corpus");
  std::ostringstream msg;
  msg << std::fixed << std::setprecision(4) << "ROUGE-1 " << c.at("rouge_1").at("f1").get<double>()
      << " ROUGE-2 " << c.at("rouge_2").at("f1").get<double>() << " ROUGE-SU4 "
      << c.at("rouge_su4").at("f1").get<double>();
  log(Level::kInfo, msg.str());
  return kExitOk;
}

int cmd_oracle(const RunConfig& cfg) {
  const auto meetings = data::read_meetings(require_path(cfg.paths.input, "--in"));
  if (meetings.empty()) throw EmptyCorpus(cfg.paths.input + " holds no meetings");
  const fs::path dir = require_path(cfg.paths.out, "--out");
  fs::create_directories(dir);

  std::vector<eval::Tokens> extractive, random, references;
  for (std::size_t i = 0; i < meetings.size(); ++i) {
    const auto sentences = turn_sentences(meetings[i]);
    extractive.push_back(eval::extractive_oracle(sentences, meetings[i].summary, cfg.baseline.oracle_k));
    random.push_back(eval::random_baseline(sentences, cfg.baseline.random_k, cfg.seed + i));
    references.push_back(meetings[i].summary);
  }
  data::write_token_lines(dir / "extractive.txt", extractive);
  data::write_token_lines(dir / "random.txt", random);

  auto corpus_mean = [&](const std::vector<eval::Tokens>& candidates) {
    return eval::evaluation_report(candidates, references, {}).at("corpus");
  };
  nlohmann::json scores{{"extractive_oracle", corpus_mean(extractive)}, {"random", corpus_mean(random)}};
  if (!cfg.paths.train.empty()) {
    std::vector<eval::Tokens> pool;
    for (const auto& m : data::read_meetings(cfg.paths.train)) {
      if (!m.summary.empty()) pool.push_back(m.summary);
    }
    scores["copy_from_train"] = eval::copy_from_train(pool, references, cfg.baseline.copy_trials, cfg.seed);
  }
  write_text(dir / "baselines.json", scores.dump(2) + "\n");
  log(Level::kInfo, "baseline outputs written to " + dir.string());
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg) {
  const auto results = gradcheck::run_all(cfg.gradcheck);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " max_rel_error=" << std::scientific
              << std::setprecision(3) << r.max_rel_error << " probes=" << r.probes << '\n';
    rows.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"probes", r.probes}, {"passed", r.passed}});
  }
  const bool ok = gradcheck::all_passed(results);
  std::cout << (ok ? "PASS" : "FAIL") << " worst=" << std::scientific << std::setprecision(3)
            << gradcheck::worst_error(results) << " tolerance=" << cfg.gradcheck.tolerance << '\n';
  if (!cfg.paths.out.empty()) write_text(cfg.paths.out, rows.dump(2) + "\n");
  return ok ? kExitOk : kExitNumeric;
}

int cmd_grid(const RunConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(require_path(cfg.paths.checkpoint, "--checkpoint"));
  const HMNet net{ckpt.model, ckpt.params};
  const std::string& dev_path = cfg.paths.dev.empty() ? cfg.paths.input : cfg.paths.dev;
  const auto dev = read_truncated(require_path(dev_path, "--dev"), net.config);

  auto settings = [&](Index beam, Index min_len) {
    DecodeConfig d = cfg.decode;
    d.beam_size = beam;
    d.min_len = min_len;
    d.max_len = std::min(min_len + cfg.grid.max_len_margin, net.config.max_summary_tokens);
    if (d.max_len <= d.min_len) {
      throw ValidationError("grid.min_lens: " + std::to_string(min_len) +
                            " leaves no room below model max_summary_tokens");
    }
    return d;
  };
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v;
    return s.str();
  };

  std::ostringstream table;
  nlohmann::json record{{"stage1", nlohmann::json::array()}, {"stage2", nlohmann::json::array()}};
  table << "stage 1 (beam_size=" << cfg.grid.stage1_beam << ")\n";
  table << "min_len\tR-1\tR-2\tR-SU4\n";
  Index best_min = cfg.grid.min_lens.front();
  double best_r1 = -1.0;
  for (Index min_len : cfg.grid.min_lens) {
    const auto s = dev_rouge(net, ckpt.lexicon, dev, settings(cfg.grid.stage1_beam, min_len));
    table << min_len << '\t' << fmt(s.r1.f1) << '\t' << fmt(s.r2.f1) << '\t' << fmt(s.su4.f1) << '\n';
    record["stage1"].push_back({{"min_len", min_len}, {"rouge_1", s.r1.f1}, {"rouge_2", s.r2.f1}, {"rouge_su4", s.su4.f1}});
    if (s.r1.f1 > best_r1) {
      best_r1 = s.r1.f1;
      best_min = min_len;
    }
  }
  table << "\nstage 2 (min_len=" << best_min << ")\n";
  table << "beam_size\tR-1\tR-2\tR-SU4\n";
  Index best_beam = cfg.grid.beam_sizes.front();
  best_r1 = -1.0;
  for (Index beam : cfg.grid.beam_sizes) {
    const auto s = dev_rouge(net, ckpt.lexicon, dev, settings(beam, best_min));
    table << beam << '\t' << fmt(s.r1.f1) << '\t' << fmt(s.r2.f1) << '\t' << fmt(s.su4.f1) << '\n';
    record["stage2"].push_back({{"beam_size", beam}, {"rouge_1", s.r1.f1}, {"rouge_2", s.r2.f1}, {"rouge_su4", s.su4.f1}});
    if (s.r1.f1 > best_r1) {
      best_r1 = s.r1.f1;
      best_beam = beam;
    }
  }
  table << "\nselected min_len=" << best_min << " beam_size=" << best_beam << '\n';
  record["selected"] = {{"min_len", best_min}, {"beam_size", best_beam}};

  if (cfg.paths.out.empty()) {
    std::cout << table.str();
  } else {
    write_text(cfg.paths.out, table.str());
    write_text(cfg.paths.out + ".json", record.dump(2) + "\n");
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Hierarchical meeting summarization toolkit", args.empty() ? "hmnet" : args.front()};
  app.require_subcommand(1, 1);
  Flags flags;

  struct Command {
    const char* name;
    const char* help;
    std::function<int(const RunConfig&)> body;
  };
  const std::vector<Command> commands{
      {"convert", "Group news articles into pseudo meetings", cmd_convert},
      {"pretrain", "Train on (pseudo) meetings from scratch",
       [](const RunConfig& c) { return cmd_train(c, c.pretrain, "pretrain"); }},
      {"finetune", "Continue training on meetings, optionally from --init",
       [](const RunConfig& c) { return cmd_train(c, c.finetune, "finetune"); }},
      {"summarize", "Beam-search a summary per meeting", cmd_summarize},
      {"evaluate", "Score summaries against meeting references", cmd_evaluate},
      {"oracle", "Write extractive-oracle, random and copy-from-train baselines", cmd_oracle},
      {"gradcheck", "Finite-difference gradient checks of every block", cmd_gradcheck},
      {"grid", "Two-stage min_len then beam_size search on dev data", cmd_grid},
  };
  for (const auto& c : commands) add_common(app.add_subcommand(c.name, c.help), flags);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    for (const auto& c : commands) {
      if (app.got_subcommand(c.name)) return c.body(load_config(flags));
    }
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
}

int run(int argc, const char* const* argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace hmnet::cli
