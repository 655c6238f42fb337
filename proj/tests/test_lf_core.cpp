#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "helpers.hpp"

using namespace nlsup;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("token validation") {
  CHECK(valid_token("alice"));
  CHECK(valid_token("("));
  CHECK(valid_token("<s>"));
  CHECK_FALSE(valid_token(""));
  CHECK_FALSE(valid_token("two words"));
  CHECK_FALSE(valid_token("tab\there"));
}

TEST_CASE("mention list serializes kind-ordered with boundaries") {
  MentionList m;
  m.mentions.push_back({MentionKind::topic, {"budget"}});
  m.mentions.push_back({MentionKind::person, {"alice"}});
  m.mentions.push_back({MentionKind::person, {"bob"}});
  CHECK_FALSE(m.kind_ordered());
  auto flat = m.serialize();
  CHECK(flat == std::vector<Token>{"[", "alice", "]", "[", "bob", "]", "[",
                                   "budget", "]"});
  m.sort_by_kind();
  CHECK(m.kind_ordered());
  // stable within kind
  CHECK(m.mentions[0].tokens[0] == "alice");
  CHECK(m.mentions[1].tokens[0] == "bob");
}

TEST_CASE("record json round trip") {
  World w = generate_world(WorldConfig{}, 7);
  CorpusConfig cfg;
  cfg.counts = {10, 20, 10};
  Rng rng(11);
  Corpus c = build_corpus(w, cfg, rng);
  std::vector<InteractionRecord> all;
  all.insert(all.end(), c.seed.begin(), c.seed.end());
  all.insert(all.end(), c.unlabeled.begin(), c.unlabeled.end());
  all.insert(all.end(), c.test.begin(), c.test.end());
  for (const auto& r : all) {
    InteractionRecord back = parse_record(serialize_record(r));
    CHECK(back.utterance == r.utterance);
    CHECK(back.mentions == r.mentions);
    CHECK(back.predicted_lf == r.predicted_lf);
    CHECK(back.feedback == r.feedback);
    CHECK(back.num_corrections == r.num_corrections);
    CHECK(back.gold_lf == r.gold_lf);
  }

  // gold_lf is optional
  InteractionRecord r = all.front();
  r.gold_lf.reset();
  std::string line = serialize_record(r);
  CHECK(line.find("gold_lf") == std::string::npos);
  CHECK_FALSE(parse_record(line).gold_lf.has_value());
}

TEST_CASE("parse errors name the problem and the line") {
  auto msg = [](const std::string& line, size_t line_no) {
    try {
      parse_record(line, line_no);
      return std::string("no error");
    } catch (const std::exception& e) {
      return std::string(e.what());
    }
  };
  CHECK_THAT(msg("not json", 7), Catch::Matchers::ContainsSubstring("line 7"));
  CHECK_THAT(msg(R"({"utterance":["hi"]})", 3),
             Catch::Matchers::ContainsSubstring("missing field"));
  CHECK_THAT(
      msg(R"({"utterance":[],"mentions":[],"predicted_lf":[],"feedback":[],"num_corrections":0})",
          4),
      Catch::Matchers::ContainsSubstring("at least 1 token"));
  CHECK_THAT(
      msg(R"({"utterance":["hi"],"mentions":[],"predicted_lf":["(","find_email"],"feedback":[],"num_corrections":0})",
          5),
      Catch::Matchers::ContainsSubstring("unbalanced"));
  CHECK_THAT(
      msg(R"({"utterance":["hi"],"mentions":[],"predicted_lf":[],"feedback":[],"num_corrections":-2})",
          6),
      Catch::Matchers::ContainsSubstring("num_corrections"));
  CHECK_THAT(
      msg(R"({"utterance":["hi"],"mentions":[{"kind":"topic","tokens":["a"]},{"kind":"person","tokens":["b"]}],"predicted_lf":[],"feedback":[],"num_corrections":0})",
          8),
      Catch::Matchers::ContainsSubstring("ordered"));
  CHECK_THAT(
      msg(R"({"utterance":["hi"],"mentions":[{"kind":"animal","tokens":["a"]}],"predicted_lf":[],"feedback":[],"num_corrections":0})",
          9),
      Catch::Matchers::ContainsSubstring("kind"));
}

TEST_CASE("vocabulary reserves ids 0-3 and round-trips") {
  Vocabulary v = Vocabulary::with_reserved();
  CHECK(v.token(Vocabulary::kSeq) == "<s>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token(Vocabulary::kOpen) == "[");
  CHECK(v.token(Vocabulary::kClose) == "]");
  int a = v.add("alice");
  CHECK(a == 4);
  CHECK(v.add("alice") == 4);  // idempotent
  CHECK(v.lookup("nope") == Vocabulary::kUnk);
  CHECK(v.find("nope") == -1);

  std::string path = temp_path("vocab_test.vocab");
  v.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.find("alice") == 4);

  // tampered reserved rows are rejected
  {
    std::ofstream out(path);
    out << "<s>\nalice\n[\n]\n";
  }
  CHECK_THROWS_WITH(Vocabulary::load(path),
                    Catch::Matchers::ContainsSubstring("reserve lines 0-3"));
  {
    std::ofstream out(path);
    out << "<s>\n<unk>\n[\n]\ndup\ndup\n";
  }
  CHECK_THROWS_WITH(Vocabulary::load(path),
                    Catch::Matchers::ContainsSubstring("duplicate"));
  std::remove(path.c_str());
}

TEST_CASE("lf equality is token equality") {
  LogicalForm a{{"(", "find_email", "(", "sender", "alice", ")", ")"}};
  LogicalForm b = a;
  CHECK(lf_equal(a, b));
  b.tokens[4] = "bob";
  CHECK_FALSE(lf_equal(a, b));
}

TEST_CASE("full-size corpus file loads with validation") {
  WorldConfig wc;
  wc.entity_counts = {24, 12, 16, 16};
  World w = generate_world(wc, 300);
  CorpusConfig cfg;
  cfg.counts = {50, 2400, 50};
  Rng rng(300);
  Corpus c = build_corpus(w, cfg, rng);
  REQUIRE(c.unlabeled.size() >= 4321);
  c.unlabeled.resize(4321);
  std::string path = temp_path("corpus_4321.jsonl");
  save_records(path, c.unlabeled);
  auto loaded = load_records(path);
  CHECK(loaded.size() == 4321);
  CHECK(loaded.back().predicted_lf == c.unlabeled.back().predicted_lf);
  std::remove(path.c_str());
}
