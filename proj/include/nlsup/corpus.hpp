#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlsup/edits.hpp"
#include "nlsup/feedback.hpp"
#include "nlsup/lf.hpp"
#include "nlsup/rng.hpp"
#include "nlsup/world.hpp"

namespace nlsup {

struct CorpusCounts {
  int seed_labeled = 50;
  int unlabeled = 300;  // questions; each yields 1-3 feedback records
  int test = 200;
};

struct CorruptionPolicy {
  // weight of k = 1, 2, 3 edits per corrupted parse
  std::vector<double> k_weights = {0.6, 0.3, 0.1};
  // weight of 1, 2, 3 feedback records per unlabeled question
  std::vector<double> per_question_weights = {0.35, 0.40, 0.25};
};

struct CorpusConfig {
  CorpusCounts counts;
  CorruptionPolicy policy;
  NoiseConfig noise;
  QuestionConfig question;
  // weight of mention-list size 0, 1, 2, 3, 4
  std::vector<double> mention_count_weights = {0.20, 0.10, 0.25, 0.25, 0.20};
};

struct CorpusStats {
  int seed_records = 0;
  int test_records = 0;
  int unlabeled_questions = 0;
  int unlabeled_records = 0;
  std::map<int, int> correction_histogram;
  int affirmation_records = 0;  // unlabeled records with 0 corrections
  int miss_errors = 0;
  int miss_eligible = 0;
  int spurious_corrections = 0;
  int spurious_eligible = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed_records"] = seed_records;
    j["test_records"] = test_records;
    j["unlabeled_questions"] = unlabeled_questions;
    j["unlabeled_records"] = unlabeled_records;
    j["feedback_per_question_mean"] =
        unlabeled_questions
            ? static_cast<double>(unlabeled_records) / unlabeled_questions
            : 0.0;
    nlohmann::json hist;
    for (const auto& [k, v] : correction_histogram)
      hist[std::to_string(k)] = v;
    j["correction_histogram"] = hist;
    j["affirmation_records"] = affirmation_records;
    j["miss_errors"] = miss_errors;
    j["miss_eligible"] = miss_eligible;
    j["realized_miss_rate"] =
        miss_eligible ? static_cast<double>(miss_errors) / miss_eligible : 0.0;
    j["spurious_corrections"] = spurious_corrections;
    j["spurious_eligible"] = spurious_eligible;
    j["realized_spurious_rate"] =
        spurious_eligible
            ? static_cast<double>(spurious_corrections) / spurious_eligible
            : 0.0;
    return j;
  }
};

// Draws n distinct questions (identity = utterance token string), skipping
// anything already in `taken` so that splits never share a question.
inline std::vector<GeneratedExample> generate_questions(
    const World& world, const CorpusConfig& cfg, size_t n, Rng& rng,
    std::set<std::string>& taken) {
  std::vector<GeneratedExample> out;
  size_t attempts = 0, cap = 200 * n + 1000;
  while (out.size() < n) {
    if (++attempts > cap)
      throw std::runtime_error(
          "generate_questions: exhausted candidates; counts infeasible for "
          "this world size");
    size_t context = rng.categorical(cfg.mention_count_weights);
    GeneratedExample ex = generate_example(world, cfg.question, context, rng);
    std::string key = join_tokens(ex.utterance.tokens);
    if (taken.count(key)) continue;
    taken.insert(key);
    out.push_back(std::move(ex));
  }
  return out;
}

inline InteractionRecord labeled_record(const GeneratedExample& ex) {
  InteractionRecord r;
  r.utterance = ex.utterance;
  r.mentions = ex.mentions;
  r.predicted_lf = ex.gold;
  r.feedback = canonical_affirmation();
  r.num_corrections = 0;
  r.gold_lf = ex.gold;
  return r;
}

// 1-3 corrupted-parse records for one unlabeled question
inline std::vector<InteractionRecord> unlabeled_records_for(
    const GeneratedExample& ex, const CorpusConfig& cfg, const World& world,
    Rng& rng, CorpusStats& stats) {
  size_t n_fb = 1 + rng.categorical(cfg.policy.per_question_weights);
  std::vector<InteractionRecord> out;
  std::set<std::string> seen_parses;
  for (size_t i = 0; i < n_fb; ++i) {
    int k = 1 + static_cast<int>(rng.categorical(cfg.policy.k_weights));
    // a reviewer can flag at most one mistake per predicate, so feedback
    // complexity is bounded by (and correlates with) parse length
    k = std::min(k, predicate_count(ex.gold));
    LogicalForm yhat;
    bool made = false;
    for (int kk = k; kk >= 1 && !made; --kk) {
      // prefer a corrupted parse distinct from this question's other records
      for (int attempt = 0; attempt < 20; ++attempt) {
        try {
          yhat = corrupt(ex.gold, kk, world, rng);
        } catch (const std::runtime_error&) {
          break;  // kk infeasible, relax
        }
        made = true;
        if (!seen_parses.count(join_tokens(yhat.tokens))) break;
      }
    }
    if (!made)
      throw std::runtime_error("unlabeled corpus: cannot corrupt " +
                               join_tokens(ex.gold.tokens));
    seen_parses.insert(join_tokens(yhat.tokens));

    FeedbackResult fb =
        generate_feedback(ex.gold, yhat, cfg.noise, world, rng);
    ++stats.miss_eligible;
    if (fb.miss_error) ++stats.miss_errors;

    InteractionRecord r;
    r.utterance = ex.utterance;
    r.mentions = ex.mentions;
    r.predicted_lf = yhat;
    r.feedback = fb.feedback;
    r.num_corrections = fb.num_corrections;
    r.gold_lf = ex.gold;
    out.push_back(std::move(r));

    ++stats.correction_histogram[fb.num_corrections];
    if (fb.num_corrections == 0) ++stats.affirmation_records;
  }
  return out;
}

struct Corpus {
  std::vector<InteractionRecord> seed;
  std::vector<InteractionRecord> unlabeled;
  std::vector<InteractionRecord> test;
  CorpusStats stats;
};

inline Corpus build_corpus(const World& world, const CorpusConfig& cfg,
                           Rng& rng) {
  if (cfg.counts.seed_labeled < 1 || cfg.counts.unlabeled < 1 ||
      cfg.counts.test < 1)
    throw std::invalid_argument("build_corpus: all counts must be >= 1");
  Corpus c;
  std::set<std::string> taken;
  auto test_qs = generate_questions(world, cfg, cfg.counts.test, rng, taken);
  auto seed_qs =
      generate_questions(world, cfg, cfg.counts.seed_labeled, rng, taken);
  auto unl_qs =
      generate_questions(world, cfg, cfg.counts.unlabeled, rng, taken);
  for (const auto& ex : test_qs) c.test.push_back(labeled_record(ex));
  for (const auto& ex : seed_qs) c.seed.push_back(labeled_record(ex));
  for (const auto& ex : unl_qs) {
    auto recs = unlabeled_records_for(ex, cfg, world, rng, c.stats);
    c.unlabeled.insert(c.unlabeled.end(), recs.begin(), recs.end());
  }
  c.stats.seed_records = static_cast<int>(c.seed.size());
  c.stats.test_records = static_cast<int>(c.test.size());
  c.stats.unlabeled_questions = static_cast<int>(unl_qs.size());
  c.stats.unlabeled_records = static_cast<int>(c.unlabeled.size());
  return c;
}

// ---------------------------------------------------------------------------
// Vocabularies. Both files reserve ids 0-3. The input vocabulary holds every
// template word plus everything the seed split surfaces; entities that only
// occur outside the seed stay OOV and are reachable through copying alone.

inline Vocabulary build_input_vocab(
    const std::vector<InteractionRecord>& seed) {
  Vocabulary v = Vocabulary::with_reserved();
  for (const Token& t : question_template_lexicon()) v.add(t);
  for (const Token& t : feedback_template_lexicon()) v.add(t);
  for (const InteractionRecord& r : seed) {
    for (const Token& t : r.utterance.tokens) v.add(t);
    for (const Mention& m : r.mentions.mentions)
      for (const Token& t : m.tokens) v.add(t);
    for (const Token& t : r.feedback.tokens) v.add(t);
  }
  return v;
}

inline Vocabulary build_output_vocab(
    const std::vector<InteractionRecord>& seed) {
  Vocabulary v = Vocabulary::with_reserved();
  v.add("(");
  v.add(")");
  for (const Token& r : lf_roots()) v.add(r);
  for (const PredicateInfo& p : predicate_table()) v.add(p.name);
  for (const InteractionRecord& r : seed) {
    if (!r.gold_lf) continue;
    for (const Token& t : r.gold_lf->tokens) v.add(t);
  }
  return v;
}

}  // namespace nlsup
