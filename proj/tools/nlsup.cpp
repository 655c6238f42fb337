// Command-line driver for the semantic parsing pipeline: data generation,
// training, evaluation, the experiment grid, and a few inspection tools.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nlsup/eval.hpp"
#include "nlsup/experiment.hpp"
#include "nlsup/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nlsup;

namespace {

struct CommonOpts {
  std::string preset = "desk";
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--preset", c.preset, "base configuration: desk or full_scale")
      ->check(CLI::IsMember({"desk", "full_scale"}))
      ->capture_default_str();
  cmd->add_option("--config", c.config_path,
                  "JSON file overlaid onto the preset (same schema as --print-config)");
  cmd->add_option("--seed", c.seed, "root seed override");
}

ExperimentConfig resolve_config(const CommonOpts& c) {
  ExperimentConfig base =
      c.preset == "full_scale" ? full_scale_experiment_config() : desk_experiment_config();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw CLI::ValidationError("--config", "cannot read " + c.config_path);
    json overlay = json::parse(in);
    json merged = json(base);
    merged.merge_patch(overlay);
    base = merged.get<ExperimentConfig>();
  }
  if (c.seed) base.seed = *c.seed;
  return base;
}

// Standalone pipeline (gen-data .. dump-attention) seed derivation; the
// experiment grid does its own resampling per replication instead.
World pipeline_world(const ExperimentConfig& cfg) {
  return generate_world(cfg.world, derive_seed(cfg.seed, 1));
}

Corpus pipeline_corpus(const ExperimentConfig& cfg, const World& world) {
  Rng rng(derive_seed(cfg.seed, 2));
  return build_corpus(world, cfg.corpus, rng);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

struct DataDir {
  World world;
  Corpus corpus;
};

void write_data_dir(const fs::path& dir, const World& world, const Corpus& corpus,
                    const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  write_json(dir / "world.json", world.to_json());
  save_records((dir / "seed.jsonl").string(), corpus.seed);
  save_records((dir / "unlabeled.jsonl").string(), corpus.unlabeled);
  save_records((dir / "test.jsonl").string(), corpus.test);
  write_json(dir / "stats.json", corpus.stats.to_json());
  write_json(dir / "config.json", json(cfg));
}

DataDir load_data_dir(const fs::path& dir) {
  DataDir d;
  d.world = World::load((dir / "world.json").string());
  d.corpus.seed = load_records((dir / "seed.jsonl").string());
  d.corpus.unlabeled = load_records((dir / "unlabeled.jsonl").string());
  d.corpus.test = load_records((dir / "test.jsonl").string());
  return d;
}

// Checkpoint directory: params.json (+ optimizer state), vin/vout vocabs, and
// a meta file tying the parameters to their architecture and training data.
void write_checkpoint_meta(const fs::path& dir, const ExperimentConfig& cfg, TrainMode mode,
                           std::size_t max_parse_len, std::uint64_t unlabeled_fingerprint,
                           bool pretrain_only) {
  json meta{{"mode", mode_name(mode)},
            {"dims", {{"emb", cfg.dims.emb}, {"hidden", cfg.dims.hidden}}},
            {"max_parse_len", max_parse_len},
            {"pretrain_only", pretrain_only}};
  if (!pretrain_only) meta["unlabeled_fingerprint"] = unlabeled_fingerprint;
  write_json(dir / "meta.json", meta);
}

struct Checkpoint {
  ParamStore params;
  Vocabulary vin, vout;
  ParserDims dims;
  std::size_t max_parse_len = 0;
  TrainMode mode = TrainMode::full;
  bool pretrain_only = false;
  std::uint64_t unlabeled_fingerprint = 0;
};

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint c;
  c.params = ParamStore::load((dir / "params.json").string());
  c.vin = Vocabulary::load((dir / "vin.json").string());
  c.vout = Vocabulary::load((dir / "vout.json").string());
  json meta = read_json(dir / "meta.json");
  c.mode = parse_mode(meta.at("mode").get<std::string>());
  c.dims.emb = meta.at("dims").at("emb").get<std::size_t>();
  c.dims.hidden = meta.at("dims").at("hidden").get<std::size_t>();
  c.max_parse_len = meta.at("max_parse_len").get<std::size_t>();
  c.pretrain_only = meta.value("pretrain_only", false);
  c.unlabeled_fingerprint = meta.value("unlabeled_fingerprint", std::uint64_t{0});
  return c;
}

void write_log_csv(const fs::path& path, const TrainingLog& log) {
  write_training_csv(log, path.string());
}

int cmd_gen_data(const CommonOpts& common, const std::string& out_dir) {
  ExperimentConfig cfg = resolve_config(common);
  World world = pipeline_world(cfg);
  Corpus corpus = pipeline_corpus(cfg, world);
  write_data_dir(out_dir, world, corpus, cfg);
  std::printf("wrote %s: %zu seed, %zu unlabeled (%d questions), %zu test records\n",
              out_dir.c_str(), corpus.seed.size(), corpus.unlabeled.size(),
              corpus.stats.unlabeled_questions, corpus.test.size());
  return 0;
}

int cmd_pretrain(const CommonOpts& common, const std::string& data_dir,
                 const std::string& out_dir) {
  ExperimentConfig cfg = resolve_config(common);
  DataDir data = load_data_dir(data_dir);
  Vocabulary vin = build_input_vocab(data.corpus.seed);
  Vocabulary vout = build_output_vocab(data.corpus.seed);
  TrainingConfig tcfg = cfg.training;
  if (cfg.auto_max_parse_len) tcfg.max_parse_len = default_max_parse_len(data.corpus.seed);

  // pre-train every parser flavor once (same salts as run_mode), so a later
  // train --pretrained run of any mode reproduces a from-scratch run bit for
  // bit while sharing this checkpoint across modes
  ReplicationData rep;
  rep.seed = data.corpus.seed;
  RepPretrain pre = pretrain_replication(data.world, rep, cfg.dims, vin, vout, tcfg);

  fs::create_directories(out_dir);
  pre.task.save((fs::path(out_dir) / "params_task.json").string());
  pre.fb_full.save((fs::path(out_dir) / "params_fb_full.json").string());
  pre.fb_blind.save((fs::path(out_dir) / "params_fb_blind.json").string());
  vin.save((fs::path(out_dir) / "vin.json").string());
  vout.save((fs::path(out_dir) / "vout.json").string());
  write_checkpoint_meta(out_dir, cfg, TrainMode::full, tcfg.max_parse_len, 0, true);
  write_log_csv(fs::path(out_dir) / "pretrain_task_log.csv", pre.task_log);
  write_log_csv(fs::path(out_dir) / "pretrain_fb_full_log.csv", pre.fb_full_log);
  write_log_csv(fs::path(out_dir) / "pretrain_fb_blind_log.csv", pre.fb_blind_log);
  std::printf("pretrained all parser flavors for %d epochs; checkpoint in %s\n",
              tcfg.pretrain_epochs, out_dir.c_str());
  return 0;
}

int cmd_train(const CommonOpts& common, const std::string& data_dir, const std::string& out_dir,
              const std::string& mode_str, const std::string& pretrained_dir) {
  ExperimentConfig cfg = resolve_config(common);
  TrainMode mode = parse_mode(mode_str);
  DataDir data = load_data_dir(data_dir);
  Vocabulary vin = build_input_vocab(data.corpus.seed);
  Vocabulary vout = build_output_vocab(data.corpus.seed);
  TrainingConfig tcfg = cfg.training;
  if (cfg.auto_max_parse_len) tcfg.max_parse_len = default_max_parse_len(data.corpus.seed);

  std::optional<ParamStore> pre;
  if (!pretrained_dir.empty()) {
    fs::path pdir(pretrained_dir);
    json meta = read_json(pdir / "meta.json");
    if (meta.at("dims").at("emb").get<std::size_t>() != cfg.dims.emb ||
        meta.at("dims").at("hidden").get<std::size_t>() != cfg.dims.hidden)
      throw std::runtime_error("pretrained checkpoint dims do not match the configuration");
    RepPretrain rp;
    rp.task = ParamStore::load((pdir / "params_task.json").string());
    rp.fb_full = ParamStore::load((pdir / "params_fb_full.json").string());
    rp.fb_blind = ParamStore::load((pdir / "params_fb_blind.json").string());
    pre = compose_pretrained(rp, mode);
  }

  RunModeResult run = run_mode(mode, data.world, data.corpus, vin, vout, cfg.dims, tcfg, out_dir,
                               pre ? &*pre : nullptr);
  run.params.save((fs::path(out_dir) / "params.json").string());
  vin.save((fs::path(out_dir) / "vin.json").string());
  vout.save((fs::path(out_dir) / "vout.json").string());
  write_checkpoint_meta(out_dir, cfg, mode, tcfg.max_parse_len,
                        records_fingerprint(data.corpus.unlabeled), false);
  std::printf("trained mode %s; checkpoint and training_log.csv in %s\n", mode_name(mode),
              out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_dir, const std::string& split,
             int beam) {
  DataDir data = load_data_dir(data_dir);
  Checkpoint c = load_checkpoint(ckpt_dir);
  Parser task = Parser::task(c.dims, c.vin, c.vout);
  EvalOptions opt;
  opt.beam_width = beam;
  opt.max_parse_len = c.max_parse_len;

  if (split == "test") {
    EvalResult r = exact_match_accuracy(task, c.params, data.corpus.test, opt);
    json out{{"split", "test"},
             {"records", r.records},
             {"accuracy", r.accuracy},
             {"bracket_validity_rate", r.bracket_validity_rate}};
    std::cout << out.dump(2) << "\n";
  } else if (split == "unlabeled") {
    if (c.pretrain_only)
      throw std::runtime_error("recovery is defined for semi-supervised checkpoints only");
    EvalResult r = unlabeled_recovery_accuracy(task, c.params, data.corpus.unlabeled,
                                               c.unlabeled_fingerprint, opt);
    json out{{"split", "unlabeled"},
             {"records", r.records},
             {"recovery_accuracy", r.accuracy},
             {"bracket_validity_rate", r.bracket_validity_rate}};
    std::cout << out.dump(2) << "\n";
  } else {  // breakdown
    Breakdown b = breakdown_by_corrections(task, c.params, data.corpus.unlabeled, opt);
    std::printf("bucket,accuracy,mean_gold_predicates,records\n");
    for (const BucketRow& row : b.rows)
      std::printf("%s,%.17g,%.17g,%zu\n", bucket_label(row.bucket).c_str(), row.accuracy,
                  row.mean_gold_predicates, row.records);
    std::printf("# zero-correction records excluded from buckets: %zu\n",
                b.zero_correction_records);
  }
  return 0;
}

int cmd_experiment(const CommonOpts& common, const std::string& out_dir, bool print_config) {
  ExperimentConfig cfg = resolve_config(common);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (print_config) {
    std::cout << json(cfg).dump(2) << "\n";
    return 0;
  }
  cfg.validate();
  ExperimentOutput out = run_experiment(cfg);
  if (cfg.output_dir.empty()) std::cout << results_csv(out.rows);
  std::size_t failed = 0;
  for (const ResultRow& r : out.rows)
    if (r.status != "ok") ++failed;
  std::fprintf(stderr, "experiment done: %zu rows, %zu failed cells%s%s\n", out.rows.size(),
               failed, cfg.output_dir.empty() ? "" : ", results in ",
               cfg.output_dir.c_str());
  return failed == 0 ? 0 : 1;
}

// Finite-difference audit of both parsers at toy scale; the same check the
// test suite runs, exposed for quick sanity checks after source changes.
int cmd_gradcheck(std::uint64_t seed) {
  World world = generate_world(WorldConfig{}, derive_seed(seed, 1));
  CorpusConfig cc;
  cc.counts = {12, 4, 4};
  Rng crng(derive_seed(seed, 2));
  Corpus corpus = build_corpus(world, cc, crng);
  Vocabulary vin = build_input_vocab(corpus.seed);
  Vocabulary vout = build_output_vocab(corpus.seed);

  double worst = 0.0;
  for (bool feedback_flavor : {false, true}) {
    Parser p = feedback_flavor ? Parser::feedback({8, 4}, vin, vout)
                               : Parser::task({8, 4}, vin, vout);
    ParamStore ps;
    Rng init(derive_seed(seed, 3));
    p.init_params(ps, init);
    const InteractionRecord& rec = corpus.unlabeled.front();
    auto fn = [&](Tape& t, ParamStore& store) {
      return p.loss_on_tape(t, store, rec, *corpus.seed.front().gold_lf, nullptr, nullptr);
    };
    Rng coords(derive_seed(seed, 4));
    double err = grad_check(fn, ps, 1e-5, coords);
    std::printf("%s parser: worst relative gradient error %.3e\n",
                feedback_flavor ? "feedback" : "task", err);
    worst = std::max(worst, err);
  }
  std::printf("gradcheck %s (threshold 1e-4)\n", worst < 1e-4 ? "PASS" : "FAIL");
  return worst < 1e-4 ? 0 : 1;
}

int cmd_mh_debug(const std::string& data_dir, const std::string& ckpt_dir, std::size_t index,
                 int iters, bool reject_yhat, std::uint64_t seed) {
  DataDir data = load_data_dir(data_dir);
  Checkpoint c = load_checkpoint(ckpt_dir);
  if (index >= data.corpus.unlabeled.size())
    throw std::runtime_error("--record out of range; unlabeled has " +
                             std::to_string(data.corpus.unlabeled.size()) + " records");
  if (!mode_has_proposal(c.mode))
    throw std::runtime_error("self-training checkpoints have no proposal parser to debug");
  Parser task = Parser::task(c.dims, c.vin, c.vout);
  Parser proposal = make_proposal_parser(c.mode, c.dims, c.vin, c.vout);

  MHConfig mh;
  mh.num_iterations = iters;
  mh.reject_yhat = reject_yhat;
  Rng rng(seed);
  const InteractionRecord& rec = data.corpus.unlabeled[index];
  MHOutcome out = mh_map_record(task, proposal, c.params, rec, mh, c.max_parse_len, rng);

  json diag{{"record", index},
            {"utterance", join_tokens(rec.utterance.tokens)},
            {"feedback", join_tokens(rec.feedback.tokens)},
            {"original_prediction", join_tokens(rec.predicted_lf.tokens)},
            {"acceptance_rate", out.diagnostics.acceptance_rate},
            {"distinct_parses", out.diagnostics.distinct_parses},
            {"returned_no_sample", out.diagnostics.returned_no_sample},
            {"score_trajectory", out.diagnostics.score_trajectory}};
  if (out.best) {
    diag["map_parse"] = join_tokens(out.best->lf.tokens);
    diag["map_task_logprob"] = out.best->log_pt;
    diag["map_joint_score"] = out.best->joint_score;
    if (out.best->log_pf) diag["map_feedback_logprob"] = *out.best->log_pf;
  }
  std::cout << diag.dump(2) << "\n";
  return 0;
}

int cmd_dump_attention(const std::string& data_dir, const std::string& ckpt_dir,
                       const std::string& split, std::size_t index, bool feedback_flavor) {
  DataDir data = load_data_dir(data_dir);
  Checkpoint c = load_checkpoint(ckpt_dir);
  const std::vector<InteractionRecord>& records =
      split == "test" ? data.corpus.test
                      : (split == "seed" ? data.corpus.seed : data.corpus.unlabeled);
  if (index >= records.size())
    throw std::runtime_error("--record out of range; split has " +
                             std::to_string(records.size()) + " records");
  if (feedback_flavor && !mode_has_proposal(c.mode))
    throw std::runtime_error("self-training checkpoints have no feedback parser");
  Parser p = feedback_flavor ? make_proposal_parser(c.mode, c.dims, c.vin, c.vout)
                             : Parser::task(c.dims, c.vin, c.vout);

  AttentionTrace tr = p.greedy_with_attention(c.params, records[index], c.max_parse_len);
  json out{{"record", index},
           {"parser", feedback_flavor ? "feedback" : "task"},
           {"source_tokens", tr.source_tokens},
           {"feedback_tokens", tr.feedback_tokens},
           {"output_tokens", tr.output_tokens},
           {"alpha", tr.alpha},
           {"beta", tr.beta}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic parsing from natural language feedback"};
  app.require_subcommand(1);

  CommonOpts gen_c, pre_c, train_c, exp_c;
  std::string gen_out = "data";
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic world and corpus");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();

  std::string pre_data = "data", pre_out = "pretrained";
  auto* pre = app.add_subcommand("pretrain", "supervised pre-training on the seed set");
  add_common(pre, pre_c);
  pre->add_option("--data", pre_data, "gen-data directory")->capture_default_str();
  pre->add_option("--out", pre_out, "checkpoint directory")->capture_default_str();

  std::string tr_data = "data", tr_out = "run", tr_mode = "full", tr_pre;
  auto* tr = app.add_subcommand("train", "pre-train (or adopt) and run semi-supervised training");
  add_common(tr, train_c);
  tr->add_option("--data", tr_data, "gen-data directory")->capture_default_str();
  tr->add_option("--out", tr_out, "run directory")->capture_default_str();
  tr->add_option("--mode", tr_mode, "full | no-feedback | no-feedback-reject | self-training")
      ->capture_default_str();
  tr->add_option("--pretrained", tr_pre, "adopt a pretrain checkpoint instead of pre-training");

  std::string ev_data = "data", ev_ckpt = "run", ev_split = "test";
  int ev_beam = 1;
  auto* ev = app.add_subcommand("eval", "evaluate the task parser of a checkpoint");
  ev->add_option("--data", ev_data, "gen-data directory")->capture_default_str();
  ev->add_option("--checkpoint", ev_ckpt, "train checkpoint directory")->capture_default_str();
  ev->add_option("--split", ev_split, "test | unlabeled | breakdown")
      ->check(CLI::IsMember({"test", "unlabeled", "breakdown"}))
      ->capture_default_str();
  ev->add_option("--beam", ev_beam, "beam width (1 = greedy)")->capture_default_str();

  std::string exp_out;
  bool exp_print = false;
  auto* ex = app.add_subcommand("experiment", "mode x unlabeled-size x replication grid");
  add_common(ex, exp_c);
  ex->add_option("--out", exp_out, "output directory (default: CSV to stdout)");
  ex->add_flag("--print-config", exp_print, "print the effective config JSON and exit");

  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of both parsers");
  gc->add_option("--seed", gc_seed, "fixture seed")->capture_default_str();

  std::string mh_data = "data", mh_ckpt = "run";
  std::size_t mh_rec = 0;
  int mh_iters = 20;
  bool mh_reject = false;
  std::uint64_t mh_seed = 1;
  auto* mh = app.add_subcommand("mh-debug", "chain diagnostics on one unlabeled record");
  mh->add_option("--data", mh_data, "gen-data directory")->capture_default_str();
  mh->add_option("--checkpoint", mh_ckpt, "train checkpoint directory")->capture_default_str();
  mh->add_option("--record", mh_rec, "unlabeled record index")->capture_default_str();
  mh->add_option("--iters", mh_iters, "chain length")->capture_default_str();
  mh->add_flag("--reject-yhat", mh_reject, "reject samples equal to the original prediction");
  mh->add_option("--seed", mh_seed, "chain seed")->capture_default_str();

  std::string da_data = "data", da_ckpt = "run", da_split = "test";
  std::size_t da_rec = 0;
  bool da_feedback = false;
  auto* da = app.add_subcommand("dump-attention", "greedy decode with attention weights");
  da->add_option("--data", da_data, "gen-data directory")->capture_default_str();
  da->add_option("--checkpoint", da_ckpt, "train checkpoint directory")->capture_default_str();
  da->add_option("--split", da_split, "seed | unlabeled | test")
      ->check(CLI::IsMember({"seed", "unlabeled", "test"}))
      ->capture_default_str();
  da->add_option("--record", da_rec, "record index within the split")->capture_default_str();
  da->add_flag("--feedback", da_feedback, "dump the feedback parser instead of the task parser");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_c, gen_out);
    if (pre->parsed()) return cmd_pretrain(pre_c, pre_data, pre_out);
    if (tr->parsed()) return cmd_train(train_c, tr_data, tr_out, tr_mode, tr_pre);
    if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_split, ev_beam);
    if (ex->parsed()) return cmd_experiment(exp_c, exp_out, exp_print);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
    if (mh->parsed()) return cmd_mh_debug(mh_data, mh_ckpt, mh_rec, mh_iters, mh_reject, mh_seed);
    if (da->parsed()) return cmd_dump_attention(da_data, da_ckpt, da_split, da_rec, da_feedback);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
