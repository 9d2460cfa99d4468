// Writes seeded synthetic meeting and article corpora for smoke runs.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "hmnet/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic corpus generator"};
  std::size_t meetings = 8;
  std::size_t articles = 32;
  std::uint64_t seed = 1;
  std::string dir = ".";
  app.add_option("--meetings", meetings, "Meetings to write to meetings.jsonl");
  app.add_option("--articles", articles, "Articles to write to articles.jsonl");
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--out", dir, "Output directory");
  CLI11_PARSE(app, argc, argv);

  namespace fs = std::filesystem;
  try {
    fs::create_directories(dir);
    using namespace hmnet::data;
    write_meetings(fs::path(dir) / "meetings.jsonl", synthetic_meetings(meetings, {}, seed));
    write_articles(fs::path(dir) / "articles.jsonl", synthetic_articles(articles, seed + 1));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
