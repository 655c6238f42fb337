#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nlsup/corpus.hpp"
#include "nlsup/edits.hpp"
#include "nlsup/feedback.hpp"
#include "nlsup/inference.hpp"
#include "nlsup/params.hpp"
#include "nlsup/parser.hpp"
#include "nlsup/rng.hpp"

namespace nlsup {

enum class TrainMode { full, no_feedback, no_feedback_reject, self_training };

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::full: return "full";
    case TrainMode::no_feedback: return "no_feedback";
    case TrainMode::no_feedback_reject: return "no_feedback_reject";
    case TrainMode::self_training: return "self_training";
  }
  throw std::logic_error("mode_name: unreachable");
}

// Accepts both underscore and dash spellings (CLI flags use dashes).
inline TrainMode parse_mode(std::string s) {
  for (char& c : s)
    if (c == '-') c = '_';
  if (s == "full") return TrainMode::full;
  if (s == "no_feedback") return TrainMode::no_feedback;
  if (s == "no_feedback_reject") return TrainMode::no_feedback_reject;
  if (s == "self_training") return TrainMode::self_training;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

// The chain proposal may never return the original prediction in the full
// model and in the reject ablation; the plain no-feedback ablation ignores
// the prediction entirely.
inline bool mode_rejects_yhat(TrainMode m) {
  return m == TrainMode::full || m == TrainMode::no_feedback_reject;
}

inline bool mode_has_proposal(TrainMode m) { return m != TrainMode::self_training; }

// The no-feedback ablations swap the feedback-reading proposal for a second
// task-architecture parser that keeps the feedback parameter prefix.
inline Parser make_proposal_parser(TrainMode m, ParserDims dims, Vocabulary vin,
                                   Vocabulary vout) {
  if (!mode_has_proposal(m))
    throw std::invalid_argument("make_proposal_parser: self_training has no proposal parser");
  if (m == TrainMode::full) return Parser::feedback(dims, std::move(vin), std::move(vout));
  return Parser("feedback.", false, dims, std::move(vin), std::move(vout));
}

struct TrainingConfig {
  int pretrain_epochs = 20;
  int semisup_epochs = 10;
  double learning_rate = 1e-4;
  double clip_threshold = 10.0;
  MHConfig mh;
  TrainMode mode = TrainMode::full;
  std::uint64_t seed = 1;
  bool shuffle = true;
  // off by default: the semi-supervised loop sees unlabeled records only
  bool replay_seed_set = false;
  std::size_t max_parse_len = 24;
  std::size_t beam_width = 5;
  // edit-count weights for the synthesized corrective pre-training pairs
  CorruptionPolicy pretrain_corruption;
  // wall-clock stays 0.0 by default so logs are a pure function of the seed
  bool record_wall_clock = false;

  void validate() const {
    if (pretrain_epochs < 0 || semisup_epochs < 0)
      throw std::invalid_argument("training config: epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("training config: learning_rate must be > 0");
    if (!(clip_threshold > 0.0))
      throw std::invalid_argument("training config: clip_threshold must be > 0");
    if (max_parse_len < 1) throw std::invalid_argument("training config: max_parse_len must be >= 1");
    if (beam_width < 1) throw std::invalid_argument("training config: beam_width must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"pretrain_epochs", c.pretrain_epochs},
                     {"semisup_epochs", c.semisup_epochs},
                     {"learning_rate", c.learning_rate},
                     {"clip_threshold", c.clip_threshold},
                     {"mh", {{"num_iterations", c.mh.num_iterations},
                             {"reject_yhat", c.mh.reject_yhat},
                             {"max_resample_attempts", c.mh.max_resample_attempts}}},
                     {"mode", mode_name(c.mode)},
                     {"seed", c.seed},
                     {"shuffle", c.shuffle},
                     {"replay_seed_set", c.replay_seed_set},
                     {"max_parse_len", c.max_parse_len},
                     {"beam_width", c.beam_width},
                     {"pretrain_corruption",
                      {{"k_weights", c.pretrain_corruption.k_weights},
                       {"per_question_weights", c.pretrain_corruption.per_question_weights}}},
                     {"record_wall_clock", c.record_wall_clock}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c = TrainingConfig{};
  if (j.contains("pretrain_epochs")) j.at("pretrain_epochs").get_to(c.pretrain_epochs);
  if (j.contains("semisup_epochs")) j.at("semisup_epochs").get_to(c.semisup_epochs);
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
  if (j.contains("clip_threshold")) j.at("clip_threshold").get_to(c.clip_threshold);
  if (j.contains("mh")) {
    const auto& m = j.at("mh");
    if (m.contains("num_iterations")) m.at("num_iterations").get_to(c.mh.num_iterations);
    if (m.contains("reject_yhat")) m.at("reject_yhat").get_to(c.mh.reject_yhat);
    if (m.contains("max_resample_attempts"))
      m.at("max_resample_attempts").get_to(c.mh.max_resample_attempts);
  }
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("shuffle")) j.at("shuffle").get_to(c.shuffle);
  if (j.contains("replay_seed_set")) j.at("replay_seed_set").get_to(c.replay_seed_set);
  if (j.contains("max_parse_len")) j.at("max_parse_len").get_to(c.max_parse_len);
  if (j.contains("beam_width")) j.at("beam_width").get_to(c.beam_width);
  if (j.contains("pretrain_corruption")) {
    const auto& p = j.at("pretrain_corruption");
    if (p.contains("k_weights")) p.at("k_weights").get_to(c.pretrain_corruption.k_weights);
    if (p.contains("per_question_weights"))
      p.at("per_question_weights").get_to(c.pretrain_corruption.per_question_weights);
  }
  if (j.contains("record_wall_clock")) j.at("record_wall_clock").get_to(c.record_wall_clock);
}

struct TrainingLogEntry {
  int epoch = 0;
  std::string parser;
  double loss = 0.0;
  int skipped = 0;
  double acceptance_rate_mean = 0.0;
  double seconds = 0.0;
};

struct TrainingLog {
  std::vector<TrainingLogEntry> entries;

  void merge_offset(const TrainingLog& other, int epoch_offset) {
    for (TrainingLogEntry e : other.entries) {
      e.epoch += epoch_offset;
      entries.push_back(std::move(e));
    }
  }
};

inline void write_training_csv(const TrainingLog& log, std::ostream& out) {
  out << "epoch,parser,loss,skipped,acceptance_rate_mean,seconds\n";
  char buf[40];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (const auto& e : log.entries)
    out << e.epoch << ',' << e.parser << ',' << num(e.loss) << ',' << e.skipped << ','
        << num(e.acceptance_rate_mean) << ',' << num(e.seconds) << '\n';
}

inline void write_training_csv(const TrainingLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("training log: cannot write " + path);
  write_training_csv(log, out);
  if (!out) throw std::runtime_error("training log: write failed for " + path);
}

namespace detail {

inline double elapsed_or_zero(const TrainingConfig& cfg,
                              std::chrono::steady_clock::time_point t0) {
  if (!cfg.record_wall_clock) return 0.0;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void require_gold(const std::vector<InteractionRecord>& records, const char* where) {
  if (records.empty()) throw std::invalid_argument(std::string(where) + ": empty record set");
  for (const auto& r : records)
    if (!r.gold_lf)
      throw std::invalid_argument(std::string(where) + ": record lacks a gold logical form");
}

}  // namespace detail

// Decode cap: twice the 95th-percentile gold length of the seed set, which
// keeps early-training runaway decodes bounded without clipping real parses.
inline std::size_t default_max_parse_len(const std::vector<InteractionRecord>& seed) {
  detail::require_gold(seed, "default_max_parse_len");
  std::vector<std::size_t> lens;
  lens.reserve(seed.size());
  for (const auto& r : seed) lens.push_back(r.gold_lf->tokens.size());
  std::sort(lens.begin(), lens.end());
  std::size_t rank = (lens.size() * 95 + 99) / 100;
  return 2 * lens[rank == 0 ? 0 : rank - 1];
}

struct PretrainData {
  std::vector<InteractionRecord> task;
  std::vector<InteractionRecord> feedback;
};

// The task parser pre-trains on the seed records as they are.  The feedback
// parser needs to see corrective feedback before the semi-supervised phase
// or chain proposals are uninformative, so its set is a 50/50 mix: each seed
// record once with affirmation feedback and the gold parse as the prediction,
// and once with a corrupted prediction plus noise-free corrective feedback.
inline PretrainData synthesize_pretrain_data(const std::vector<InteractionRecord>& seed,
                                             const World& world, const CorruptionPolicy& policy,
                                             std::uint64_t seed_value) {
  detail::require_gold(seed, "pretrain data");
  PretrainData out;
  out.task = seed;
  Rng rng(seed_value);
  for (const auto& r : seed) {
    InteractionRecord aff = r;
    aff.predicted_lf = *r.gold_lf;
    aff.feedback = render_affirmation(rng);
    aff.num_corrections = 0;
    out.feedback.push_back(std::move(aff));
  }
  NoiseConfig clean;
  clean.miss_error_rate = 0.0;
  clean.spurious_correction_rate = 0.0;
  for (const auto& r : seed) {
    int k = 1 + static_cast<int>(rng.categorical(policy.k_weights));
    // same per-predicate cap the unlabeled corpus applies
    k = std::min(k, predicate_count(*r.gold_lf));
    InteractionRecord corr = r;
    for (;; --k) {
      try {
        corr.predicted_lf = corrupt(*r.gold_lf, k, world, rng);
        break;
      } catch (const std::runtime_error&) {
        if (k <= 1) throw;
      }
    }
    FeedbackResult fb = generate_feedback(*r.gold_lf, corr.predicted_lf, clean, world, rng);
    corr.feedback = fb.feedback;
    corr.num_corrections = fb.num_corrections;
    out.feedback.push_back(std::move(corr));
  }
  return out;
}

// Epochs of per-record clipped Adam steps on -log P(gold | record).
inline TrainingLog pretrain_parser(const Parser& parser, ParamStore& ps,
                                   const std::vector<InteractionRecord>& records,
                                   const TrainingConfig& cfg, std::uint64_t shuffle_salt,
                                   const std::string& log_name,
                                   const std::string& checkpoint_dir = "") {
  cfg.validate();
  detail::require_gold(records, "pretrain");
  TrainingLog log;
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    if (cfg.shuffle) {
      Rng r(derive_seed(cfg.seed, shuffle_salt, static_cast<std::uint64_t>(epoch)));
      r.shuffle(order);
    }
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const InteractionRecord& rec = records[idx];
      double lp = 0.0;
      GradMap g = parser.loss_grad(ps, rec, *rec.gold_lf, &lp);
      clip_and_step(ps, g, cfg.learning_rate, cfg.clip_threshold);
      loss_sum += -lp;
    }
    log.entries.push_back({epoch, log_name, loss_sum / static_cast<double>(records.size()), 0,
                           0.0, detail::elapsed_or_zero(cfg, t0)});
    if (!checkpoint_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "pretrain_%s_epoch_%03d.json", log_name.c_str(), epoch);
      ps.save((std::filesystem::path(checkpoint_dir) / name).string(), false);
    }
  }
  return log;
}

// Supervised pre-training of both parsers on the seed set.  `feedback` may be
// null (self-training never consults a second parser).
inline TrainingLog pretrain(const Parser& task, const Parser* feedback, ParamStore& ps,
                            const std::vector<InteractionRecord>& seed, const World& world,
                            const TrainingConfig& cfg, const std::string& checkpoint_dir = "") {
  PretrainData data = synthesize_pretrain_data(seed, world, cfg.pretrain_corruption,
                                               derive_seed(cfg.seed, 101));
  TrainingLog log = pretrain_parser(task, ps, data.task, cfg, 102, "task", checkpoint_dir);
  if (feedback) {
    TrainingLog fb = pretrain_parser(*feedback, ps, data.feedback, cfg, 103, "feedback",
                                     checkpoint_dir);
    log.merge_offset(fb, 0);
  }
  return log;
}

// One semi-supervised pass per epoch over the unlabeled records: infer a
// latent parse per the mode, skip the record this epoch when the chain
// returns no sample, otherwise take one clipped Adam step per parser on the
// inferred parse.  `replay` records (normally empty) get supervised gold
// steps mixed into the same shuffled order.
inline TrainingLog train_semisup(const Parser& task, const Parser* proposal, ParamStore& ps,
                                 const std::vector<InteractionRecord>& unlabeled,
                                 const std::vector<InteractionRecord>& replay,
                                 const TrainingConfig& cfg,
                                 const std::string& checkpoint_dir = "") {
  cfg.validate();
  const bool with_proposal = mode_has_proposal(cfg.mode);
  if (with_proposal && proposal == nullptr)
    throw std::invalid_argument("train_semisup: mode requires a proposal parser");
  // self-training never consults a proposal even when one is passed
  const Parser& prop = with_proposal ? *proposal : task;
  if (unlabeled.empty()) throw std::invalid_argument("train_semisup: empty unlabeled set");
  if (!replay.empty()) detail::require_gold(replay, "train_semisup replay");

  MHConfig mh = cfg.mh;
  mh.reject_yhat = mode_rejects_yhat(cfg.mode);

  struct Item {
    std::size_t idx;
    bool is_replay;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) items.push_back({i, false});
  for (std::size_t i = 0; i < replay.size(); ++i) items.push_back({i, true});

  TrainingLog log;
  for (int epoch = 0; epoch < cfg.semisup_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    if (cfg.shuffle) {
      Rng r(derive_seed(cfg.seed, 201, static_cast<std::uint64_t>(epoch)));
      r.shuffle(items);
    }
    double task_loss = 0.0, fb_loss = 0.0, acc_sum = 0.0;
    int task_updates = 0, fb_updates = 0, chains = 0, skipped = 0;
    for (const Item& item : items) {
      const InteractionRecord& rec = item.is_replay ? replay[item.idx] : unlabeled[item.idx];
      LogicalForm target;
      if (item.is_replay) {
        target = *rec.gold_lf;
      } else if (cfg.mode == TrainMode::self_training) {
        target = task.beam_search(ps, rec, cfg.beam_width, cfg.max_parse_len).front().lf;
      } else {
        Rng rec_rng(derive_seed(cfg.seed, 202, static_cast<std::uint64_t>(epoch), item.idx));
        MHOutcome out = mh_map_record(task, prop, ps, rec, mh, cfg.max_parse_len, rec_rng);
        acc_sum += out.diagnostics.acceptance_rate;
        ++chains;
        if (!out.best) {
          ++skipped;
          continue;
        }
        target = out.best->lf;
      }
      double lp_t = 0.0;
      GradMap gt = task.loss_grad(ps, rec, target, &lp_t);
      clip_and_step(ps, gt, cfg.learning_rate, cfg.clip_threshold);
      task_loss += -lp_t;
      ++task_updates;
      if (with_proposal) {
        double lp_f = 0.0;
        GradMap gf = prop.loss_grad(ps, rec, target, &lp_f);
        clip_and_step(ps, gf, cfg.learning_rate, cfg.clip_threshold);
        fb_loss += -lp_f;
        ++fb_updates;
      }
    }
    double secs = detail::elapsed_or_zero(cfg, t0);
    double acc_mean = chains ? acc_sum / chains : 0.0;
    log.entries.push_back({epoch, "task", task_updates ? task_loss / task_updates : 0.0,
                           skipped, acc_mean, secs});
    if (with_proposal)
      log.entries.push_back({epoch, "feedback", fb_updates ? fb_loss / fb_updates : 0.0,
                             skipped, acc_mean, secs});
    if (!checkpoint_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "semisup_epoch_%03d.json", epoch);
      ps.save((std::filesystem::path(checkpoint_dir) / name).string(), false);
    }
  }
  return log;
}

struct RunModeResult {
  Parser task;
  std::optional<Parser> proposal;
  ParamStore params;
  TrainingLog log;
};

// Pre-train (or adopt `pretrained`) and run the semi-supervised phase for one
// mode.  When `run_dir` is set, per-epoch checkpoints, the merged log, the
// config echo, and a final checkpoint with optimizer state land there.
inline RunModeResult run_mode(TrainMode mode, const World& world, const Corpus& corpus,
                              const Vocabulary& vin, const Vocabulary& vout, ParserDims dims,
                              TrainingConfig cfg, const std::string& run_dir = "",
                              const ParamStore* pretrained = nullptr,
                              const std::vector<InteractionRecord>* unlabeled_subset = nullptr) {
  cfg.mode = mode;
  cfg.validate();
  if (!run_dir.empty()) std::filesystem::create_directories(run_dir);

  RunModeResult out{Parser::task(dims, vin, vout), std::nullopt, ParamStore{}, TrainingLog{}};
  if (mode_has_proposal(mode)) out.proposal = make_proposal_parser(mode, dims, vin, vout);
  const Parser* prop = out.proposal ? &*out.proposal : nullptr;

  if (pretrained != nullptr) {
    out.params = *pretrained;
  } else {
    Rng ti(derive_seed(cfg.seed, 11));
    out.task.init_params(out.params, ti);
    if (prop != nullptr) {
      Rng fi(derive_seed(cfg.seed, 12));
      prop->init_params(out.params, fi);
    }
    out.log = pretrain(out.task, prop, out.params, corpus.seed, world, cfg, run_dir);
  }

  const std::vector<InteractionRecord>& unlabeled =
      unlabeled_subset != nullptr ? *unlabeled_subset : corpus.unlabeled;
  static const std::vector<InteractionRecord> kNoReplay;
  TrainingLog semi = train_semisup(out.task, prop, out.params, unlabeled,
                                   cfg.replay_seed_set ? corpus.seed : kNoReplay, cfg, run_dir);
  out.log.merge_offset(semi, cfg.pretrain_epochs);

  if (!run_dir.empty()) {
    std::filesystem::path dir(run_dir);
    out.params.save((dir / "final.json").string(), true);
    write_training_csv(out.log, (dir / "training_log.csv").string());
    nlohmann::json echo = cfg;
    echo["mode"] = mode_name(mode);
    echo["effective_reject_yhat"] = mode_rejects_yhat(mode);
    std::ofstream cj(dir / "config.json", std::ios::binary);
    if (!cj) throw std::runtime_error("run_mode: cannot write config echo in " + run_dir);
    cj << echo.dump(2) << "\n";
  }
  return out;
}

}  // namespace nlsup
