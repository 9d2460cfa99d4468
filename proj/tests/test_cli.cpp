#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hmnet/cli.hpp"
#include "hmnet/data.hpp"
#include "hmnet/synthetic.hpp"
#include "json.hpp"

using namespace hmnet;
namespace fs = std::filesystem;

namespace {

const fs::path kToy = fs::path(HMNET_SOURCE_DIR) / "configs" / "toy.json";

const std::vector<std::string> kTinyModel{
    "--set", "model.d_word=16", "--set", "model.d_pos=4", "--set", "model.d_ent=4",
    "--set", "model.d_role=8",  "--set", "model.n_layers=1"};

int run_cli(std::vector<std::string> args) {
  ::setenv("HMNET_LOG", "quiet", 1);
  args.insert(args.begin(), "hmnet");
  return cli::run(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Synthetic corpora plus a briefly trained tiny checkpoint, built once.
struct Workspace {
  fs::path dir;
  fs::path meetings, articles, checkpoint;

  Workspace() {
    dir = fs::temp_directory_path() / "hmnet_cli_tests";
    fs::remove_all(dir);
    fs::create_directories(dir);
    meetings = dir / "meetings.jsonl";
    articles = dir / "articles.jsonl";
    checkpoint = dir / "tiny.ckpt";
    data::write_meetings(meetings, data::synthetic_meetings(4, {}, 3));
    data::write_articles(articles, data::synthetic_articles(8, 3));
    std::vector<std::string> args{"pretrain", "--config", kToy.string(), "--train", meetings.string(),
                                  "--out", checkpoint.string(), "--set", "pretrain.max_steps=4"};
    args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
    REQUIRE(run_cli(args) == 0);
  }
};

const Workspace& workspace() {
  static const Workspace w;
  return w;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 1") {
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"launch"}) == 1);
  CHECK(run_cli({"convert", "--bogus-flag"}) == 1);
  CHECK(run_cli({"convert", "--out", "x"}) == 1);
  CHECK(run_cli({"convert", "--set", "beem_size=3", "--in", "a", "--out", "b"}) == 1);
  CHECK(run_cli({"convert", "--config", "/nonexistent.json", "--in", "a", "--out", "b"}) == 1);
  CHECK(run_cli({"--help"}) == 0);
}

TEST_CASE("data errors exit 2") {
  const auto& w = workspace();
  CHECK(run_cli({"convert", "--in", (w.dir / "missing.jsonl").string(), "--out", (w.dir / "x").string()}) == 2);
  std::ofstream(w.dir / "broken.jsonl") << "{\"sentences\": 3}\n";
  CHECK(run_cli({"convert", "--in", (w.dir / "broken.jsonl").string(), "--out", (w.dir / "x").string()}) == 2);
  CHECK(run_cli({"summarize", "--checkpoint", w.meetings.string(), "--in", w.meetings.string(), "--out",
               (w.dir / "s.txt").string()}) == 2);
}

TEST_CASE("convert is reproducible") {
  const auto& w = workspace();
  const auto a = w.dir / "pseudo_a.jsonl";
  const auto b = w.dir / "pseudo_b.jsonl";
  CHECK(run_cli({"convert", "--in", w.articles.string(), "--out", a.string(), "--seed", "5"}) == 0);
  CHECK(run_cli({"convert", "--in", w.articles.string(), "--out", b.string(), "--seed", "5"}) == 0);
  CHECK(slurp(a) == slurp(b));
  const auto meetings = data::read_meetings(a);
  REQUIRE(meetings.size() == 2);
  CHECK(meetings[0].turns[0].role.rfind("news-", 0) == 0);
  CHECK(run_cli({"convert", "--in", w.articles.string(), "--out", b.string(), "--seed", "6"}) == 0);
  CHECK(slurp(a) != slurp(b));
}

TEST_CASE("pretrain writes a step log") {
  const auto& w = workspace();
  std::ifstream log(w.checkpoint.string() + ".log.jsonl");
  std::string line;
  int steps = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step") == ++steps);
    for (const char* key : {"lr", "loss", "grad_norm"}) CHECK(j.contains(key));
  }
  CHECK(steps == 4);
}

TEST_CASE("summarize respects min_len and is byte reproducible") {
  const auto& w = workspace();
  const auto out_a = w.dir / "sum_a.txt";
  const auto out_b = w.dir / "sum_b.txt";
  for (const auto& out : {out_a, out_b}) {
    CHECK(run_cli({"summarize", "--config", kToy.string(), "--checkpoint", w.checkpoint.string(), "--in",
                 w.meetings.string(), "--out", out.string(), "--set", "min_len=3", "--set", "max_len=8"}) == 0);
  }
  CHECK(slurp(out_a) == slurp(out_b));
  const auto lines = data::read_token_lines(out_a);
  REQUIRE(lines.size() == 4);
  for (const auto& l : lines) {
    CHECK(l.size() >= 3);
    CHECK(l.size() <= 8);
  }
  CHECK(run_cli({"summarize", "--config", kToy.string(), "--checkpoint", w.checkpoint.string(), "--in",
               w.meetings.string(), "--out", out_a.string(), "--set", "max_len=600"}) == 1);
}

TEST_CASE("evaluate writes a report") {
  const auto& w = workspace();
  const auto cands = w.dir / "cands.txt";
  std::vector<std::vector<std::string>> lines;
  for (const auto& m : data::read_meetings(w.meetings)) lines.push_back(m.summary);
  data::write_token_lines(cands, lines);
  const auto report_path = w.dir / "report.json";
  CHECK(run_cli({"evaluate", "--candidates", cands.string(), "--in", w.meetings.string(), "--out",
               report_path.string()}) == 0);
  const auto report = nlohmann::json::parse(slurp(report_path));
  CHECK(report.at("corpus").at("rouge_1").at("f1") == 1.0);
  CHECK(report.at("corpus").at("documents") == 4);
  CHECK(report.at("documents").size() == 4);

  lines.pop_back();
  data::write_token_lines(cands, lines);
  CHECK(run_cli({"evaluate", "--candidates", cands.string(), "--in", w.meetings.string(), "--out",
               report_path.string()}) == 2);
}

TEST_CASE("oracle writes baseline outputs") {
  const auto& w = workspace();
  const auto dir = w.dir / "baselines";
  CHECK(run_cli({"oracle", "--config", kToy.string(), "--in", w.meetings.string(), "--train", w.meetings.string(),
               "--out", dir.string()}) == 0);
  CHECK(data::read_token_lines(dir / "extractive.txt").size() == 4);
  CHECK(data::read_token_lines(dir / "random.txt").size() == 4);
  const auto scores = nlohmann::json::parse(slurp(dir / "baselines.json"));
  for (const char* key : {"extractive_oracle", "random", "copy_from_train"}) CHECK(scores.contains(key));
}

TEST_CASE("finetune from a checkpoint extends the lexicon") {
  const auto& w = workspace();
  const auto pseudo = w.dir / "pseudo_ft.jsonl";
  REQUIRE(run_cli({"convert", "--in", w.articles.string(), "--out", pseudo.string()}) == 0);
  const auto out = w.dir / "ft.ckpt";
  CHECK(run_cli({"finetune", "--config", kToy.string(), "--init", w.checkpoint.string(), "--train", pseudo.string(),
               "--dev", pseudo.string(), "--out", out.string(), "--set", "finetune.max_steps=2",
               "--set", "finetune.eval_every=1", "--set", "max_len=6"}) == 0);
  CHECK(fs::exists(out));
  CHECK(run_cli({"summarize", "--config", kToy.string(), "--checkpoint", out.string(), "--in", pseudo.string(),
               "--out", (w.dir / "ft.txt").string(), "--set", "max_len=6"}) == 0);
}

TEST_CASE("gradcheck exits 0") {
  CHECK(run_cli({"gradcheck", "--config", kToy.string()}) == 0);
}

TEST_CASE("grid emits one stage-1 row per min_len") {
  const auto& w = workspace();
  const auto dev = w.dir / "dev.jsonl";
  data::write_meetings(dev, std::vector<data::Meeting>{data::read_meetings(w.meetings)[0]});
  const auto out = w.dir / "grid.txt";
  CHECK(run_cli({"grid", "--config", kToy.string(), "--checkpoint", w.checkpoint.string(), "--dev", dev.string(),
               "--out", out.string(), "--set", "grid.beam_sizes=[1,2]"}) == 0);
  const auto table = nlohmann::json::parse(slurp(out.string() + ".json"));
  std::vector<Index> rows;
  for (const auto& r : table.at("stage1")) rows.push_back(r.at("min_len"));
  CHECK(rows == std::vector<Index>{240, 280, 320, 360, 400, 440});
  CHECK(table.at("stage2").size() == 2);
  const std::string text = slurp(out);
  CHECK(text.find("stage 1 (beam_size=3)") != std::string::npos);
  CHECK(text.find("selected min_len=") != std::string::npos);
}

}  // TEST_SUITE
