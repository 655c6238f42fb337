#pragma once
// Experiment grid: training modes x unlabeled-set sizes x replications over a
// single generated world.  The test set is sampled once and stays fixed; every
// replication resamples its own seed and unlabeled questions, and the smaller
// unlabeled sizes are question-prefixes of the largest so cells within one
// replication differ only in how much feedback they see.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <tuple>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "eval.hpp"
#include "training.hpp"

namespace nlsup {

struct ExperimentConfig {
  WorldConfig world;
  // counts.seed_labeled and counts.test size each cell's labeled splits;
  // counts.unlabeled caps the question pool the size grid draws from
  CorpusConfig corpus;
  std::vector<int> unlabeled_sizes = {50, 100, 200, 300};  // questions per cell
  int replications = 3;
  std::vector<TrainMode> modes = {TrainMode::full, TrainMode::no_feedback,
                                  TrainMode::no_feedback_reject, TrainMode::self_training};
  ParserDims dims;
  TrainingConfig training;  // mode and seed are overridden per cell
  EvalOptions eval;
  // derive max_parse_len per replication from the seed gold lengths instead
  // of taking training.max_parse_len / eval.max_parse_len as given
  bool auto_max_parse_len = true;
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: keep results in memory only

  void validate() const {
    if (replications < 1)
      throw std::invalid_argument("experiment config: replications must be >= 1");
    if (unlabeled_sizes.empty())
      throw std::invalid_argument("experiment config: unlabeled_sizes must be non-empty");
    for (int s : unlabeled_sizes) {
      if (s < 1) throw std::invalid_argument("experiment config: unlabeled sizes must be >= 1");
      if (s > corpus.counts.unlabeled)
        throw std::invalid_argument(
            "experiment config: unlabeled size exceeds the question pool (corpus.counts.unlabeled)");
    }
    if (modes.empty()) throw std::invalid_argument("experiment config: modes must be non-empty");
    for (std::size_t i = 0; i < modes.size(); ++i)
      for (std::size_t j = i + 1; j < modes.size(); ++j)
        if (modes[i] == modes[j])
          throw std::invalid_argument(std::string("experiment config: duplicate mode ") + mode_name(modes[i]));
    if (corpus.counts.seed_labeled < 1 || corpus.counts.test < 1)
      throw std::invalid_argument("experiment config: corpus counts must be >= 1");
    if (dims.emb < 1 || dims.hidden < 1)
      throw std::invalid_argument("experiment config: parser dims must be >= 1");
    if (eval.beam_width < 1)
      throw std::invalid_argument("experiment config: eval beam width must be >= 1");
    training.validate();
  }
};

inline void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = nlohmann::json{{"entity_counts", c.entity_counts}};
}

inline void from_json(const nlohmann::json& j, WorldConfig& c) {
  c = WorldConfig{};
  if (j.contains("entity_counts")) j.at("entity_counts").get_to(c.entity_counts);
}

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{
      {"counts",
       {{"seed_labeled", c.counts.seed_labeled},
        {"unlabeled", c.counts.unlabeled},
        {"test", c.counts.test}}},
      {"policy",
       {{"k_weights", c.policy.k_weights},
        {"per_question_weights", c.policy.per_question_weights}}},
      {"noise",
       {{"miss_error_rate", c.noise.miss_error_rate},
        {"spurious_correction_rate", c.noise.spurious_correction_rate},
        {"complexity_scaling", c.noise.complexity_scaling}}},
      {"question",
       {{"p_email", c.question.p_email},
        {"clause_weights", c.question.clause_weights},
        {"p_reference", c.question.p_reference}}},
      {"mention_count_weights", c.mention_count_weights}};
}

inline void from_json(const nlohmann::json& j, CorpusConfig& c) {
  c = CorpusConfig{};
  if (j.contains("counts")) {
    const auto& n = j.at("counts");
    if (n.contains("seed_labeled")) n.at("seed_labeled").get_to(c.counts.seed_labeled);
    if (n.contains("unlabeled")) n.at("unlabeled").get_to(c.counts.unlabeled);
    if (n.contains("test")) n.at("test").get_to(c.counts.test);
  }
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    if (p.contains("k_weights")) p.at("k_weights").get_to(c.policy.k_weights);
    if (p.contains("per_question_weights"))
      p.at("per_question_weights").get_to(c.policy.per_question_weights);
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    if (n.contains("miss_error_rate")) n.at("miss_error_rate").get_to(c.noise.miss_error_rate);
    if (n.contains("spurious_correction_rate"))
      n.at("spurious_correction_rate").get_to(c.noise.spurious_correction_rate);
    if (n.contains("complexity_scaling"))
      n.at("complexity_scaling").get_to(c.noise.complexity_scaling);
  }
  if (j.contains("question")) {
    const auto& q = j.at("question");
    if (q.contains("p_email")) q.at("p_email").get_to(c.question.p_email);
    if (q.contains("clause_weights")) q.at("clause_weights").get_to(c.question.clause_weights);
    if (q.contains("p_reference")) q.at("p_reference").get_to(c.question.p_reference);
  }
  if (j.contains("mention_count_weights"))
    j.at("mention_count_weights").get_to(c.mention_count_weights);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  std::vector<std::string> mode_names;
  for (TrainMode m : c.modes) mode_names.push_back(mode_name(m));
  j = nlohmann::json{{"world", c.world},
                     {"corpus", c.corpus},
                     {"unlabeled_sizes", c.unlabeled_sizes},
                     {"replications", c.replications},
                     {"modes", mode_names},
                     {"dims", {{"emb", c.dims.emb}, {"hidden", c.dims.hidden}}},
                     {"training", c.training},
                     {"eval",
                      {{"beam_width", c.eval.beam_width},
                       {"max_parse_len", c.eval.max_parse_len}}},
                     {"auto_max_parse_len", c.auto_max_parse_len},
                     {"seed", c.seed},
                     {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("world")) j.at("world").get_to(c.world);
  if (j.contains("corpus")) j.at("corpus").get_to(c.corpus);
  if (j.contains("unlabeled_sizes")) j.at("unlabeled_sizes").get_to(c.unlabeled_sizes);
  if (j.contains("replications")) j.at("replications").get_to(c.replications);
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : j.at("modes")) c.modes.push_back(parse_mode(m.get<std::string>()));
  }
  if (j.contains("dims")) {
    const auto& d = j.at("dims");
    if (d.contains("emb")) d.at("emb").get_to(c.dims.emb);
    if (d.contains("hidden")) d.at("hidden").get_to(c.dims.hidden);
  }
  if (j.contains("training")) j.at("training").get_to(c.training);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("beam_width")) e.at("beam_width").get_to(c.eval.beam_width);
    if (e.contains("max_parse_len")) e.at("max_parse_len").get_to(c.eval.max_parse_len);
  }
  if (j.contains("auto_max_parse_len")) j.at("auto_max_parse_len").get_to(c.auto_max_parse_len);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("output_dir")) j.at("output_dir").get_to(c.output_dir);
}

// Desk-scale preset: a grid that finishes in minutes on one core.  The
// learning rate is raised to suit the small model; at full scale Adam crawls
// on a 64/32 parser.
inline ExperimentConfig desk_experiment_config() {
  ExperimentConfig c;
  c.corpus.counts = {50, 300, 200};
  c.unlabeled_sizes = {50, 100, 200, 300};
  c.replications = 3;
  c.dims = {64, 32};
  c.training.learning_rate = 1e-2;
  c.training.pretrain_epochs = 20;
  c.training.semisup_epochs = 10;
  return c;
}

// Full-scale preset mirroring the original data regime.  Hours of compute;
// kept for documentation and for runs on real hardware.
inline ExperimentConfig full_scale_experiment_config() {
  ExperimentConfig c;
  c.corpus.counts = {300, 1700, 1285};
  c.unlabeled_sizes = {300, 500, 1000, 1700};
  c.replications = 10;
  c.dims = {300, 128};
  c.training.learning_rate = 1e-4;
  c.training.pretrain_epochs = 20;
  c.training.semisup_epochs = 10;
  return c;
}

struct ReplicationData {
  std::vector<InteractionRecord> seed;
  // one group of 1-3 feedback records per unlabeled question; sizes take
  // question-prefixes of this list
  std::vector<std::vector<InteractionRecord>> unlabeled_groups;
  CorpusStats stats;
};

struct ExperimentData {
  World world;
  std::vector<InteractionRecord> test;
  std::vector<ReplicationData> reps;
};

inline std::vector<InteractionRecord> unlabeled_prefix(const ReplicationData& rep,
                                                       int questions) {
  if (questions < 1 || static_cast<std::size_t>(questions) > rep.unlabeled_groups.size())
    throw std::invalid_argument("unlabeled_prefix: size outside the generated pool");
  std::vector<InteractionRecord> out;
  for (int q = 0; q < questions; ++q)
    out.insert(out.end(), rep.unlabeled_groups[q].begin(), rep.unlabeled_groups[q].end());
  return out;
}

inline ExperimentData build_experiment_data(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentData d;
  d.world = generate_world(cfg.world, derive_seed(cfg.seed, 1));

  std::set<std::string> test_taken;
  Rng tr(derive_seed(cfg.seed, 2));
  for (const auto& ex :
       generate_questions(d.world, cfg.corpus, cfg.corpus.counts.test, tr, test_taken))
    d.test.push_back(labeled_record(ex));

  int pool = *std::max_element(cfg.unlabeled_sizes.begin(), cfg.unlabeled_sizes.end());
  for (int r = 0; r < cfg.replications; ++r) {
    ReplicationData rep;
    std::set<std::string> taken = test_taken;
    Rng rr(derive_seed(cfg.seed, 3, static_cast<std::uint64_t>(r)));
    for (const auto& ex : generate_questions(d.world, cfg.corpus,
                                             cfg.corpus.counts.seed_labeled, rr, taken))
      rep.seed.push_back(labeled_record(ex));
    auto unl_qs = generate_questions(d.world, cfg.corpus, pool, rr, taken);
    int unl_records = 0;
    for (const auto& ex : unl_qs) {
      rep.unlabeled_groups.push_back(
          unlabeled_records_for(ex, cfg.corpus, d.world, rr, rep.stats));
      unl_records += static_cast<int>(rep.unlabeled_groups.back().size());
    }
    rep.stats.seed_records = static_cast<int>(rep.seed.size());
    rep.stats.test_records = static_cast<int>(d.test.size());
    rep.stats.unlabeled_questions = static_cast<int>(unl_qs.size());
    rep.stats.unlabeled_records = unl_records;
    d.reps.push_back(std::move(rep));
  }
  return d;
}

// Returns a duplicated utterance if the test split shares one with any
// replication's seed or unlabeled split (or seed with unlabeled), else empty.
inline std::optional<std::string> split_overlap(const ExperimentData& d) {
  std::set<std::string> test_keys;
  for (const auto& r : d.test) test_keys.insert(join_tokens(r.utterance.tokens));
  for (const auto& rep : d.reps) {
    std::set<std::string> seed_keys;
    for (const auto& r : rep.seed) {
      std::string k = join_tokens(r.utterance.tokens);
      if (test_keys.count(k)) return k;
      seed_keys.insert(k);
    }
    for (const auto& g : rep.unlabeled_groups)
      for (const auto& r : g) {
        std::string k = join_tokens(r.utterance.tokens);
        if (test_keys.count(k) || seed_keys.count(k)) return k;
      }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Per-replication pre-training, shared across every mode and size in the
// replication.  The three stores reproduce run_mode's from-scratch pre-training
// bit for bit: the same init salts (11 task, 12 proposal) and the same shuffle
// salts (102 task, 103 feedback), so composing them per mode is equivalent to
// pre-training inside each cell, just without paying for it sixteen times.

struct RepPretrain {
  ParamStore task;      // task.* parameters
  ParamStore fb_full;   // feedback.* with the feedback encoder
  ParamStore fb_blind;  // feedback.* without it (proposal for no-feedback modes)
  TrainingLog task_log, fb_full_log, fb_blind_log;
};

inline RepPretrain pretrain_replication(const World& world, const ReplicationData& rep,
                                        ParserDims dims, const Vocabulary& vin,
                                        const Vocabulary& vout, const TrainingConfig& cfg) {
  RepPretrain out;
  PretrainData data = synthesize_pretrain_data(rep.seed, world, cfg.pretrain_corruption,
                                               derive_seed(cfg.seed, 101));

  Parser task = Parser::task(dims, vin, vout);
  {
    Rng init(derive_seed(cfg.seed, 11));
    task.init_params(out.task, init);
  }
  out.task_log = pretrain_parser(task, out.task, data.task, cfg, 102, "task");

  Parser fb_full = Parser::feedback(dims, vin, vout);
  {
    Rng init(derive_seed(cfg.seed, 12));
    fb_full.init_params(out.fb_full, init);
  }
  out.fb_full_log = pretrain_parser(fb_full, out.fb_full, data.feedback, cfg, 103, "feedback");

  Parser fb_blind = make_proposal_parser(TrainMode::no_feedback, dims, vin, vout);
  {
    Rng init(derive_seed(cfg.seed, 12));
    fb_blind.init_params(out.fb_blind, init);
  }
  out.fb_blind_log = pretrain_parser(fb_blind, out.fb_blind, data.feedback, cfg, 103, "feedback");
  return out;
}

inline ParamStore compose_pretrained(const RepPretrain& pre, TrainMode mode) {
  ParamStore ps = pre.task;
  if (mode == TrainMode::full)
    ps.absorb(pre.fb_full);
  else if (mode_has_proposal(mode))
    ps.absorb(pre.fb_blind);
  return ps;
}

inline TrainingLog compose_pretrain_log(const RepPretrain& pre, TrainMode mode) {
  TrainingLog log = pre.task_log;
  if (mode == TrainMode::full)
    log.merge_offset(pre.fb_full_log, 0);
  else if (mode_has_proposal(mode))
    log.merge_offset(pre.fb_blind_log, 0);
  return log;
}

// ---------------------------------------------------------------------------
// Result rows and the CSV they serialize to.

struct ResultRow {
  std::string mode;
  int unlabeled_size = 0;
  std::string replication;  // "0", "1", ... or "mean"
  std::string split;        // "test" or "unlabeled"; empty on a failed cell
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  // mean predicates per gold parse over the rows this accuracy covers
  double mean_gold_lf_length = std::numeric_limits<double>::quiet_NaN();
  int correction_bucket = -1;  // -1 whole split, else 1, 2, 3 (rendered "3+")
  std::string status = "ok";
};

inline std::string bucket_label(int bucket) {
  if (bucket < 0) return "";
  return bucket >= 3 ? "3+" : std::to_string(bucket);
}

namespace detail {

inline std::string csv_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_safe(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return out;
}

inline double mean_gold_predicates(const std::vector<InteractionRecord>& records) {
  if (records.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& r : records) {
    if (!r.gold_lf) throw std::invalid_argument("mean_gold_predicates: record lacks a gold parse");
    sum += static_cast<double>(predicate_count(*r.gold_lf));
  }
  return sum / static_cast<double>(records.size());
}

}  // namespace detail

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out =
      "mode,unlabeled_size,replication,split,accuracy,mean_gold_lf_length,"
      "correction_bucket,status\n";
  for (const auto& r : rows) {
    out += r.mode + ',' + std::to_string(r.unlabeled_size) + ',' + r.replication + ',' +
           r.split + ',' + detail::csv_double(r.accuracy) + ',' +
           detail::csv_double(r.mean_gold_lf_length) + ',' + bucket_label(r.correction_bucket) +
           ',' + detail::csv_safe(r.status) + '\n';
  }
  return out;
}

inline void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_results_csv: cannot open " + path);
  f << results_csv(rows);
}

// ---------------------------------------------------------------------------
// The grid itself.

struct ExperimentOutput {
  std::vector<ResultRow> rows;
  nlohmann::json stats;  // per-replication corpus stats plus per-cell diagnostics
};

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentData data = build_experiment_data(cfg);
  if (auto dup = split_overlap(data))
    throw std::logic_error("run_experiment: splits share the utterance '" + *dup + "'");

  const bool persist = !cfg.output_dir.empty();
  std::filesystem::path out_dir(cfg.output_dir);
  if (persist) std::filesystem::create_directories(out_dir / "logs");

  ExperimentOutput out;
  out.stats["config"] = cfg;
  out.stats["replications"] = nlohmann::json::array();
  for (const auto& rep : data.reps) out.stats["replications"].push_back(rep.stats.to_json());
  out.stats["cells"] = nlohmann::json::array();

  // accumulators for the mean rows, keyed to preserve emission order
  struct GroupKey {
    std::size_t mode_idx, size_idx;
    std::string split;
    int bucket;
    bool operator<(const GroupKey& o) const {
      return std::tie(mode_idx, size_idx, split, bucket) <
             std::tie(o.mode_idx, o.size_idx, o.split, o.bucket);
    }
  };
  std::map<GroupKey, std::vector<std::pair<double, double>>> groups;
  auto note = [&](std::size_t mi, std::size_t si, const ResultRow& row) {
    out.rows.push_back(row);
    if (row.status == "ok")
      groups[{mi, si, row.split, row.correction_bucket}].push_back(
          {row.accuracy, row.mean_gold_lf_length});
  };

  for (int r = 0; r < cfg.replications; ++r) {
    const ReplicationData& rep = data.reps[r];
    Vocabulary vin = build_input_vocab(rep.seed);
    Vocabulary vout = build_output_vocab(rep.seed);

    TrainingConfig tcfg = cfg.training;
    tcfg.seed = derive_seed(cfg.seed, 4, static_cast<std::uint64_t>(r));
    EvalOptions ev = cfg.eval;
    if (cfg.auto_max_parse_len) {
      std::size_t len = default_max_parse_len(rep.seed);
      tcfg.max_parse_len = len;
      ev.max_parse_len = len;
    }

    RepPretrain pre = pretrain_replication(data.world, rep, cfg.dims, vin, vout, tcfg);

    Corpus corpus;
    corpus.seed = rep.seed;
    corpus.unlabeled = unlabeled_prefix(rep, static_cast<int>(rep.unlabeled_groups.size()));
    corpus.test = data.test;
    corpus.stats = rep.stats;

    for (std::size_t mi = 0; mi < cfg.modes.size(); ++mi) {
      TrainMode mode = cfg.modes[mi];
      for (std::size_t si = 0; si < cfg.unlabeled_sizes.size(); ++si) {
        int size = cfg.unlabeled_sizes[si];
        std::string rep_id = std::to_string(r);
        ResultRow base{mode_name(mode), size, rep_id, "", std::numeric_limits<double>::quiet_NaN(),
                       std::numeric_limits<double>::quiet_NaN(), -1, "ok"};
        try {
          std::vector<InteractionRecord> subset = unlabeled_prefix(rep, size);
          std::uint64_t fingerprint = records_fingerprint(subset);
          ParamStore store = compose_pretrained(pre, mode);
          RunModeResult res = run_mode(mode, data.world, corpus, vin, vout, cfg.dims, tcfg,
                                       "", &store, &subset);

          EvalResult test_r = exact_match_accuracy(res.task, res.params, data.test, ev);
          EvalResult unl_r = unlabeled_recovery_accuracy(res.task, res.params, subset,
                                                         fingerprint, ev);
          Breakdown bd = breakdown_by_corrections(res.task, res.params, subset, ev);

          ResultRow row = base;
          row.split = "test";
          row.accuracy = test_r.accuracy;
          row.mean_gold_lf_length = detail::mean_gold_predicates(data.test);
          note(mi, si, row);

          row.split = "unlabeled";
          row.accuracy = unl_r.accuracy;
          row.mean_gold_lf_length = detail::mean_gold_predicates(subset);
          note(mi, si, row);

          for (const BucketRow& b : bd.rows) {
            row.split = "unlabeled";
            row.accuracy = b.accuracy;
            row.mean_gold_lf_length = b.mean_gold_predicates;
            row.correction_bucket = b.bucket;
            note(mi, si, row);
          }

          int skipped = 0;
          for (const auto& e : res.log.entries)
            if (e.parser == "task") skipped += e.skipped;
          out.stats["cells"].push_back(
              {{"mode", mode_name(mode)},
               {"unlabeled_size", size},
               {"replication", r},
               {"status", "ok"},
               {"unlabeled_records", subset.size()},
               {"zero_correction_records", bd.zero_correction_records},
               {"test_bracket_validity_rate", test_r.bracket_validity_rate},
               {"unlabeled_bracket_validity_rate", unl_r.bracket_validity_rate},
               {"skipped_total", skipped},
               {"max_parse_len", tcfg.max_parse_len}});

          if (persist) {
            TrainingLog full_log = compose_pretrain_log(pre, mode);
            full_log.merge_offset(res.log, 0);  // res.log is already offset
            char name[96];
            std::snprintf(name, sizeof name, "%s_u%d_r%d.csv", mode_name(mode), size, r);
            write_training_csv(full_log, (out_dir / "logs" / name).string());
          }
        } catch (const std::exception& e) {
          ResultRow row = base;
          row.status = e.what();
          note(mi, si, row);
          out.stats["cells"].push_back({{"mode", mode_name(mode)},
                                        {"unlabeled_size", size},
                                        {"replication", r},
                                        {"status", e.what()}});
        }
      }
    }
  }

  if (cfg.replications > 1) {
    for (const auto& [key, vals] : groups) {
      if (vals.empty()) continue;
      double acc = 0.0, len = 0.0;
      for (const auto& [a, l] : vals) {
        acc += a;
        len += l;
      }
      ResultRow row{mode_name(cfg.modes[key.mode_idx]), cfg.unlabeled_sizes[key.size_idx],
                    "mean", key.split, acc / static_cast<double>(vals.size()),
                    len / static_cast<double>(vals.size()), key.bucket, "ok"};
      out.rows.push_back(row);
    }
  }

  if (persist) {
    write_results_csv(out.rows, (out_dir / "results.csv").string());
    nlohmann::json echo = cfg;
    std::ofstream cj(out_dir / "config.json", std::ios::binary);
    if (!cj) throw std::runtime_error("run_experiment: cannot write config echo");
    cj << echo.dump(2) << "\n";
    std::ofstream sj(out_dir / "experiment_stats.json", std::ios::binary);
    if (!sj) throw std::runtime_error("run_experiment: cannot write stats sidecar");
    sj << out.stats.dump(2) << "\n";
  }
  return out;
}

}  // namespace nlsup
