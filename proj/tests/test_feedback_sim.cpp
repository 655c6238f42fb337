#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace nlsup;
using nlsup_test::invert_feedback;
using nlsup_test::is_affirmation;

namespace {

NoiseConfig no_noise() {
  NoiseConfig n;
  n.miss_error_rate = 0;
  n.spurious_correction_rate = 0;
  return n;
}

}  // namespace

TEST_CASE("template inventory is large enough and join-safe") {
  CHECK(fbtpl::entity_sub_templates().size() >= 8);
  CHECK(fbtpl::pred_sub_templates().size() >= 8);
  CHECK(fbtpl::insertion_templates().size() >= 8);
  CHECK(fbtpl::deletion_templates().size() >= 8);
  CHECK(fbtpl::affirmation_templates().size() >= 8);
  auto check_no_and = [](const std::vector<std::string>& tpls) {
    for (const auto& t : tpls)
      for (const Token& tok : split_tokens(t)) CHECK(tok != "and");
  };
  check_no_and(fbtpl::entity_sub_templates());
  check_no_and(fbtpl::pred_sub_templates());
  check_no_and(fbtpl::insertion_templates());
  check_no_and(fbtpl::deletion_templates());
  check_no_and(fbtpl::affirmation_templates());
  for (const Token& t : feedback_template_lexicon()) CHECK(valid_token(t));
}

TEST_CASE("matching parse gets an affirmation") {
  World w = generate_world(WorldConfig{}, 1);
  Rng rng(2);
  auto ex = generate_example(w, QuestionConfig{}, 0, rng);
  auto fb = generate_feedback(ex.gold, ex.gold, no_noise(), w, rng);
  CHECK(fb.num_corrections == 0);
  CHECK(is_affirmation(fb.feedback));
}

TEST_CASE("zero-noise feedback inverts exactly to gold") {
  World w = generate_world(WorldConfig{}, 3);
  QuestionConfig qc;
  Rng rng(4);
  int checked = 0;
  for (int i = 0; i < 400; ++i) {
    auto ex = generate_example(w, qc, 0, rng);
    int k = 1 + static_cast<int>(rng.uniform_int(3));
    LogicalForm bad;
    try {
      bad = corrupt(ex.gold, k, w, rng);
    } catch (const std::runtime_error&) {
      continue;
    }
    auto fb = generate_feedback(ex.gold, bad, no_noise(), w, rng);
    CHECK(fb.num_corrections == k);
    auto results = invert_feedback(bad, fb.feedback);
    INFO("yhat: " << join_tokens(bad.tokens));
    INFO("feedback: " << join_tokens(fb.feedback.tokens));
    REQUIRE(results.size() == 1);
    CHECK(*results.begin() == join_tokens(ex.gold.tokens));
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("root swaps are realized and invertible") {
  LogicalForm gold{{"(", "find_person", "(", "employer", "acme", ")", ")"}};
  LogicalForm pred{{"(", "find_email", "(", "sender_org", "acme", ")", ")"}};
  World w = generate_world(WorldConfig{}, 5);
  Rng rng(6);
  auto fb = generate_feedback(gold, pred, no_noise(), w, rng);
  CHECK(fb.num_corrections == static_cast<int>(diff_lf(gold, pred).size()));
  auto results = invert_feedback(pred, fb.feedback);
  REQUIRE(results.count(join_tokens(gold.tokens)) == 1);
}

TEST_CASE("miss-error rate grows with gold complexity") {
  World w = generate_world(WorldConfig{}, 7);
  NoiseConfig noise;
  noise.miss_error_rate = 0.05;
  noise.spurious_correction_rate = 0;
  noise.complexity_scaling = 0.5;
  QuestionConfig qc;
  Rng rng(8);
  std::map<int, std::pair<int, int>> by_count;  // preds -> (misses, draws)
  for (int i = 0; i < 60000 &&
                  (by_count.size() < 4 || by_count.begin()->second.second <
                                              4000);
       ++i) {
    auto ex = generate_example(w, qc, 0, rng);
    int preds = predicate_count(ex.gold);
    if (preds > 4) continue;
    LogicalForm bad = corrupt(ex.gold, 1, w, rng);
    auto fb = generate_feedback(ex.gold, bad, noise, w, rng);
    auto& [miss, total] = by_count[preds];
    ++total;
    if (fb.miss_error) ++miss;
  }
  double prev = -1;
  for (const auto& [preds, counts] : by_count) {
    auto [miss, total] = counts;
    REQUIRE(total >= 1000);
    double expected = noise.miss_rate_for(preds);
    double rate = static_cast<double>(miss) / total;
    double sigma = std::sqrt(expected * (1 - expected) / total);
    INFO("preds=" << preds << " rate=" << rate << " expected=" << expected);
    CHECK(std::abs(rate - expected) <= 3 * sigma + 1e-12);
    CHECK(rate > prev);
    prev = rate;
  }
}

TEST_CASE("miss rate clamps to one") {
  NoiseConfig noise;
  noise.miss_error_rate = 0.9;
  noise.complexity_scaling = 10;
  CHECK(noise.miss_rate_for(6) == 1.0);
  World w = generate_world(WorldConfig{}, 9);
  Rng rng(10);
  LogicalForm gold{{"(", "find_email", "(", "sender", w.of_kind(MentionKind::person)[0], ")",
                    "(", "recipient", w.of_kind(MentionKind::person)[1], ")", ")"}};
  LogicalForm bad = corrupt(gold, 1, w, rng);
  // six gold predicates would be needed for the full clamp; two already give
  // rate 0.9*(1+10) clamped to 1
  for (int i = 0; i < 50; ++i) {
    auto fb = generate_feedback(gold, bad, noise, w, rng);
    CHECK(fb.miss_error);
  }
}

TEST_CASE("spurious corrections replace affirmations at the configured rate") {
  World w = generate_world(WorldConfig{}, 11);
  QuestionConfig qc;
  NoiseConfig noise;
  noise.miss_error_rate = 0;
  noise.spurious_correction_rate = 0.04;
  Rng rng(12);
  int spurious = 0, total = 0;
  for (int i = 0; i < 10000; ++i) {
    auto ex = generate_example(w, qc, 0, rng);
    auto fb = generate_feedback(ex.gold, ex.gold, noise, w, rng);
    ++total;
    if (fb.spurious) {
      ++spurious;
      CHECK(fb.num_corrections == 1);
      CHECK_FALSE(is_affirmation(fb.feedback));
    } else {
      CHECK(fb.num_corrections == 0);
      CHECK(is_affirmation(fb.feedback));
    }
  }
  double rate = static_cast<double>(spurious) / total;
  double sigma = std::sqrt(0.04 * 0.96 / total);
  CHECK(std::abs(rate - 0.04) <= 3 * sigma);
}

TEST_CASE("confirmations cover the parse and stay local under edits") {
  World w = generate_world(WorldConfig{}, 13);
  QuestionConfig qc;
  Rng rng(14);

  std::map<std::string, std::set<std::string>> lfs_by_confirmation;
  for (int i = 0; i < 200; ++i) {
    auto ex = generate_example(w, qc, 0, rng);
    Utterance conf = render_confirmation(ex.gold);
    REQUIRE(conf.tokens.size() >= 4);
    CHECK(std::vector<Token>(conf.tokens.begin(), conf.tokens.begin() + 3) ==
          std::vector<Token>{"did", "you", "mean"});
    // every entity (and the time entity in particular) is spelled out
    for (const Clause& c : parse_lf(ex.gold).clauses)
      CHECK(std::find(conf.tokens.begin(), conf.tokens.end(), c.entity) !=
            conf.tokens.end());
    // deterministic and injective
    CHECK(render_confirmation(ex.gold).tokens == conf.tokens);
    lfs_by_confirmation[join_tokens(conf.tokens)].insert(
        join_tokens(ex.gold.tokens));
  }
  for (const auto& [conf, lfs] : lfs_by_confirmation) CHECK(lfs.size() == 1);

  // an entity substitution changes exactly one confirmation token
  for (int i = 0; i < 50; ++i) {
    auto ex = generate_example(w, qc, 0, rng);
    LogicalForm bad = corrupt(ex.gold, 1, w, rng);
    auto script = diff_lf(ex.gold, bad);
    if (script.size() != 1 || script[0].kind != EditKind::entity_substitution)
      continue;
    Utterance a = render_confirmation(ex.gold);
    Utterance b = render_confirmation(bad);
    REQUIRE(a.tokens.size() == b.tokens.size());
    int differing = 0;
    for (size_t j = 0; j < a.tokens.size(); ++j)
      if (a.tokens[j] != b.tokens[j]) ++differing;
    CHECK(differing == 1);
  }
}
