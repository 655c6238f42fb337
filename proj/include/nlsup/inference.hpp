#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nlsup/lf.hpp"
#include "nlsup/parser.hpp"
#include "nlsup/rng.hpp"

namespace nlsup {

// A parse with its per-parser log-likelihoods. joint_score is the recorded
// MAP objective: log_pt + log_pf when the feedback score is present, plain
// log_pt otherwise (beam candidates scored by the task parser alone).
struct ScoredParse {
  LogicalForm lf;
  double log_pt = 0.0;
  std::optional<double> log_pf;
  double joint_score = 0.0;

  static ScoredParse make(LogicalForm y, double log_pt, std::optional<double> log_pf) {
    ScoredParse sp;
    sp.lf = std::move(y);
    sp.log_pt = log_pt;
    sp.log_pf = log_pf;
    sp.joint_score = log_pf ? log_pt + *log_pf : log_pt;
    return sp;
  }
};

struct MHConfig {
  int num_iterations = 20;
  bool reject_yhat = false;
  int max_resample_attempts = 25;
};

struct MHDiagnostics {
  double acceptance_rate = 0.0;
  std::size_t distinct_parses = 0;
  std::vector<double> score_trajectory;  // joint score of the chain state, one per iteration
  bool returned_no_sample = false;
};

// Optional chain instrumentation: the state after every iteration, for
// convergence checks against enumerable targets.
struct MHTrace {
  std::vector<LogicalForm> states;
};

struct MHOutcome {
  std::optional<ScoredParse> best;  // empty = no-sample signal
  MHDiagnostics diagnostics;
};

// Independence-sampler acceptance probability. The proposal comes from the
// feedback parser, but both likelihoods in the ratio are computed under the
// task parser; the feedback-parser terms cancel exactly because the proposal
// does not depend on the current state.
inline double acceptance_ratio(double log_pt_proposed, double log_pt_current) {
  if (!std::isfinite(log_pt_proposed) || !std::isfinite(log_pt_current))
    throw std::invalid_argument("acceptance_ratio: non-finite log-likelihood");
  return std::min(1.0, std::exp(log_pt_proposed - log_pt_current));
}

// MAP estimation of the latent parse by Metropolis-Hastings. The chain is
// initialized with a task-parser sample; each iteration proposes from the
// proposal model (normally the feedback parser), accepts under the task
// parser, and records every accepted proposal with its joint score. Returns
// the best recorded parse, or nothing when no proposal was ever accepted.
// Ties on joint score break toward the lexicographically smaller token
// sequence. With reject_yhat set, proposals equal to yhat are discarded and
// redrawn, at most max_resample_attempts draws per iteration; the initial
// task-parser sample only seeds the chain and is never recorded, so it can
// never be returned.
template <class TaskModel, class ProposalModel>
MHOutcome mh_map(TaskModel& task, ProposalModel& proposal, const LogicalForm& yhat,
                 const MHConfig& cfg, Rng& rng, MHTrace* trace = nullptr) {
  if (cfg.num_iterations < 1)
    throw std::invalid_argument("mh_map: num_iterations must be >= 1");
  if (cfg.max_resample_attempts < 1)
    throw std::invalid_argument("mh_map: max_resample_attempts must be >= 1");

  MHOutcome out;
  std::map<std::vector<Token>, ScoredParse> samples;

  LogicalForm curr = task.sample(rng);
  double curr_log_pt = task.logprob(curr);
  double curr_joint = curr_log_pt + proposal.logprob(curr);

  std::size_t proposed = 0;
  std::size_t accepted = 0;
  for (int i = 0; i < cfg.num_iterations; ++i) {
    std::optional<LogicalForm> cand;
    for (int a = 0; a < cfg.max_resample_attempts; ++a) {
      LogicalForm draw = proposal.sample(rng);
      if (cfg.reject_yhat && draw.tokens == yhat.tokens) continue;
      cand = std::move(draw);
      break;
    }
    if (cand) {
      ++proposed;
      double cand_log_pt = task.logprob(*cand);
      double r = acceptance_ratio(cand_log_pt, curr_log_pt);
      if (rng.bernoulli(r)) {
        ++accepted;
        double cand_log_pf = proposal.logprob(*cand);
        ScoredParse sp = ScoredParse::make(*cand, cand_log_pt, cand_log_pf);
        curr = std::move(*cand);
        curr_log_pt = cand_log_pt;
        curr_joint = sp.joint_score;
        samples[curr.tokens] = std::move(sp);
      }
    }
    out.diagnostics.score_trajectory.push_back(curr_joint);
    if (trace) trace->states.push_back(curr);
  }

  out.diagnostics.acceptance_rate =
      proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  out.diagnostics.distinct_parses = samples.size();
  for (auto& [tokens, sp] : samples)
    if (!out.best || sp.joint_score > out.best->joint_score) out.best = std::move(sp);
  out.diagnostics.returned_no_sample = !out.best.has_value();
  return out;
}

// Exhaustive MAP over an enumerated space: argmax of log_pt + log_pf, ties
// broken toward the lexicographically smaller token sequence.
template <class TaskModel, class ProposalModel>
ScoredParse exact_map(TaskModel& task, ProposalModel& proposal,
                      const std::vector<LogicalForm>& lf_space) {
  if (lf_space.empty()) throw std::invalid_argument("exact_map: empty logical-form space");
  std::optional<ScoredParse> best;
  for (const LogicalForm& y : lf_space) {
    ScoredParse sp = ScoredParse::make(y, task.logprob(y), proposal.logprob(y));
    if (!best || sp.joint_score > best->joint_score ||
        (sp.joint_score == best->joint_score && sp.lf.tokens < best->lf.tokens))
      best = std::move(sp);
  }
  return *best;
}

// Adapter exposing an encoded parser session as a sampling model.
struct SessionModel {
  Parser::Session* session = nullptr;
  std::size_t max_len = 0;

  LogicalForm sample(Rng& rng) { return session->sample(rng, max_len); }
  double logprob(const LogicalForm& y) { return session->logprob(y); }
};

// Record-level entry point: encodes one session per parser and runs the
// chain against the record's predicted parse.
inline MHOutcome mh_map_record(const Parser& task, const Parser& proposal, const ParamStore& ps,
                               const InteractionRecord& rec, const MHConfig& cfg,
                               std::size_t max_len, Rng& rng, MHTrace* trace = nullptr) {
  Parser::Session task_sess(task, ps, rec);
  Parser::Session prop_sess(proposal, ps, rec);
  SessionModel task_model{&task_sess, max_len};
  SessionModel prop_model{&prop_sess, max_len};
  return mh_map(task_model, prop_model, rec.predicted_lf, cfg, rng, trace);
}

inline nlohmann::json diagnostics_json(const std::string& record_id, const MHOutcome& out) {
  nlohmann::json j;
  j["record_id"] = record_id;
  j["acceptance_rate"] = out.diagnostics.acceptance_rate;
  j["distinct_parses"] = out.diagnostics.distinct_parses;
  j["best_score"] = out.best ? nlohmann::json(out.best->joint_score) : nlohmann::json();
  j["returned_no_sample"] = out.diagnostics.returned_no_sample;
  return j;
}

}  // namespace nlsup
