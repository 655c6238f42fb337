#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nlsup/lf.hpp"
#include "nlsup/nn.hpp"
#include "nlsup/params.hpp"
#include "nlsup/rng.hpp"
#include "nlsup/tape.hpp"

namespace nlsup {

// hidden is the per-direction encoder size; the decoder state and every
// context vector are 2*hidden so attention stays a square bilinear form.
struct ParserDims {
  std::size_t emb = 64;
  std::size_t hidden = 32;
};

// One decode step's joint softmax: generate cells over the output vocabulary
// first, then one copy cell per utterance/mention position, then (feedback
// parser only) one per feedback position.
struct StepCells {
  std::vector<double> p;
  std::size_t gen_count = 0;
  std::vector<Token> copy_tokens;
  std::vector<Token> feedback_tokens;

  // Marginal probability of emitting surface token w: its generate cell plus
  // every copy cell carrying w. Tokens with no route at all fall back to the
  // unknown cell, mirroring how targets are scored.
  double surface_prob(const Token& w, const Vocabulary& vout) const {
    double total = 0.0;
    bool routed = false;
    int gid = vout.find(w);
    if (gid >= 0) {
      total += p[static_cast<std::size_t>(gid)];
      routed = true;
    }
    for (std::size_t i = 0; i < copy_tokens.size(); ++i)
      if (copy_tokens[i] == w) {
        total += p[gen_count + i];
        routed = true;
      }
    for (std::size_t k = 0; k < feedback_tokens.size(); ++k)
      if (feedback_tokens[k] == w) {
        total += p[gen_count + copy_tokens.size() + k];
        routed = true;
      }
    return routed ? total : p[Vocabulary::kUnk];
  }
};

struct AttentionTrace {
  std::vector<Token> source_tokens;
  std::vector<Token> feedback_tokens;
  std::vector<Token> output_tokens;  // emitted tokens, ending with <s>
  std::vector<std::vector<double>> alpha;
  std::vector<std::vector<double>> beta;
};

// Encoder-decoder scorer for P(y | u [, f]).  The same machinery serves both
// parsers: the feedback flavor adds a second bidirectional encoder over the
// feedback, a second attention (W_e), copy cells over feedback positions, and
// sums both context vectors into c'.
class Parser {
 public:
  struct Scored {
    LogicalForm lf;
    double logprob = 0.0;
  };

  Parser(std::string prefix, bool uses_feedback, ParserDims dims, Vocabulary input_vocab,
         Vocabulary output_vocab)
      : prefix_(std::move(prefix)),
        feedback_(uses_feedback),
        dims_(dims),
        vin_(std::move(input_vocab)),
        vout_(std::move(output_vocab)) {}

  static Parser task(ParserDims dims, Vocabulary vin, Vocabulary vout) {
    return Parser("task.", false, dims, std::move(vin), std::move(vout));
  }
  static Parser feedback(ParserDims dims, Vocabulary vin, Vocabulary vout) {
    return Parser("feedback.", true, dims, std::move(vin), std::move(vout));
  }

  const std::string& prefix() const { return prefix_; }
  bool uses_feedback() const { return feedback_; }
  const ParserDims& dims() const { return dims_; }
  const Vocabulary& input_vocab() const { return vin_; }
  const Vocabulary& output_vocab() const { return vout_; }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names = {prefix_ + "emb_in", prefix_ + "emb_out", prefix_ + "w_a",
                                      prefix_ + "w_o"};
    std::vector<std::string> cells = {"enc_fwd", "enc_bwd", "dec"};
    if (feedback_) {
      names.push_back(prefix_ + "w_e");
      cells.push_back("fb_enc_fwd");
      cells.push_back("fb_enc_bwd");
    }
    for (const std::string& cell : cells)
      for (const char* gate : {"wi", "wf", "wo", "wg", "bi", "bf", "bo", "bg"})
        names.push_back(prefix_ + cell + "." + gate);
    std::sort(names.begin(), names.end());
    return names;
  }

  void init_params(ParamStore& ps, Rng& rng) const {
    const std::size_t h2 = 2 * dims_.hidden;
    ps.init_uniform(prefix_ + "emb_in", {vin_.size(), dims_.emb}, rng);
    ps.init_uniform(prefix_ + "emb_out", {vout_.size(), dims_.emb}, rng);
    add_lstm_params(ps, prefix_ + "enc_fwd", dims_.emb, dims_.hidden, rng);
    add_lstm_params(ps, prefix_ + "enc_bwd", dims_.emb, dims_.hidden, rng);
    if (feedback_) {
      add_lstm_params(ps, prefix_ + "fb_enc_fwd", dims_.emb, dims_.hidden, rng);
      add_lstm_params(ps, prefix_ + "fb_enc_bwd", dims_.emb, dims_.hidden, rng);
    }
    add_lstm_params(ps, prefix_ + "dec", dims_.emb + h2, h2, rng);
    ps.init_uniform(prefix_ + "w_a", {h2, h2}, rng);
    if (feedback_) ps.init_uniform(prefix_ + "w_e", {h2, h2}, rng);
    ps.init_uniform(prefix_ + "w_o", {vout_.size(), 2 * h2}, rng);
  }

  class Session;
  class Cursor;

 private:
  // Everything a decode references, as nodes on the caller's tape. Sessions
  // keep the tape position right after this as their rewind mark.
  struct Wiring {
    std::vector<Token> copy_src;
    std::vector<Token> fb_src;
    NodeId hs = -1;  // [L, 2H] utterance+mention states
    NodeId bs = -1;  // [K, 2H] feedback states
    NodeId w_a = -1, w_e = -1, w_o = -1, emb_out = -1;
    LstmParamRefs dec{};
  };

  NodeId encode_bidi(Tape& t, const ParamStore& ps, NodeId emb_in,
                     const std::vector<Token>& toks, const std::string& fwd_cell,
                     const std::string& bwd_cell) const {
    std::vector<NodeId> embs;
    embs.reserve(toks.size());
    for (const Token& tok : toks)
      embs.push_back(t.embed(emb_in, static_cast<std::size_t>(vin_.lookup(tok))));
    LstmParamRefs fwd = lstm_params_on_tape(t, ps, prefix_ + fwd_cell);
    LstmParamRefs bwd = lstm_params_on_tape(t, ps, prefix_ + bwd_cell);
    std::vector<NodeId> hf(toks.size()), hb(toks.size());
    LstmState s = lstm_zero_state(t, dims_.hidden);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      s = lstm_step(t, fwd, embs[i], s);
      hf[i] = s.h;
    }
    s = lstm_zero_state(t, dims_.hidden);
    for (std::size_t i = toks.size(); i-- > 0;) {
      s = lstm_step(t, bwd, embs[i], s);
      hb[i] = s.h;
    }
    std::vector<NodeId> rows(toks.size());
    for (std::size_t i = 0; i < toks.size(); ++i) rows[i] = t.concat(hf[i], hb[i]);
    return t.stack_rows(rows);
  }

  Wiring encode_on(Tape& t, const ParamStore& ps, const InteractionRecord& rec) const {
    if (rec.utterance.tokens.empty())
      throw std::invalid_argument(prefix_ + "encode: empty utterance");
    Wiring w;
    w.copy_src = rec.utterance.tokens;
    for (const Token& tok : rec.mentions.serialize()) w.copy_src.push_back(tok);
    NodeId emb_in = t.param(prefix_ + "emb_in", ps.at(prefix_ + "emb_in"));
    w.hs = encode_bidi(t, ps, emb_in, w.copy_src, "enc_fwd", "enc_bwd");
    if (feedback_) {
      if (rec.feedback.tokens.empty())
        throw std::invalid_argument("feedback parser: empty feedback");
      w.fb_src = rec.feedback.tokens;
      w.bs = encode_bidi(t, ps, emb_in, w.fb_src, "fb_enc_fwd", "fb_enc_bwd");
      w.w_e = t.param(prefix_ + "w_e", ps.at(prefix_ + "w_e"));
    }
    w.w_a = t.param(prefix_ + "w_a", ps.at(prefix_ + "w_a"));
    w.w_o = t.param(prefix_ + "w_o", ps.at(prefix_ + "w_o"));
    w.emb_out = t.param(prefix_ + "emb_out", ps.at(prefix_ + "emb_out"));
    w.dec = lstm_params_on_tape(t, ps, prefix_ + "dec");
    return w;
  }

 public:
  // Streaming decoder over a wired tape. distribution() describes the next
  // token; advance() consumes the one actually chosen. Copies of a cursor
  // fork the decode, which is how beam search branches.
  class Cursor {
   public:
    Cursor(Tape& t, const Parser& p, const Wiring& w) : t_(&t), p_(&p), w_(&w) {
      s_ = lstm_zero_state(t, 2 * p.dims_.hidden);
      refresh();
      advance(p.vout_.token(Vocabulary::kSeq));  // start-symbol prologue
    }

    StepCells distribution() const {
      StepCells cells;
      cells.gen_count = p_->vout_.size();
      cells.copy_tokens = w_->copy_src;
      cells.feedback_tokens = w_->fb_src;
      cells.p = t_->value(t_->softmax(logits_)).v;
      return cells;
    }

    void advance(const Token& y) {
      NodeId emb = t_->embed(w_->emb_out, static_cast<std::size_t>(p_->vout_.lookup(y)));
      s_ = lstm_step(*t_, w_->dec, t_->concat(emb, ctx_), s_);
      refresh();
    }

    // log marginal probability node for emitting y at the current step
    NodeId step_term(const Token& y, std::size_t* oov_count) const {
      return t_->sub(t_->logsumexp(t_->gather(logits_, routes(y, oov_count))),
                     t_->logsumexp(logits_));
    }

    NodeId end_term() const {
      return step_term(p_->vout_.token(Vocabulary::kSeq), nullptr);
    }

    std::vector<double> alpha_values() const { return t_->value(alpha_).v; }
    std::vector<double> beta_values() const {
      return beta_ < 0 ? std::vector<double>{} : t_->value(beta_).v;
    }

   private:
    std::vector<std::size_t> routes(const Token& y, std::size_t* oov_count) const {
      std::vector<std::size_t> idx;
      int gid = p_->vout_.find(y);
      if (gid >= 0) idx.push_back(static_cast<std::size_t>(gid));
      std::size_t base = p_->vout_.size();
      for (std::size_t i = 0; i < w_->copy_src.size(); ++i)
        if (w_->copy_src[i] == y) idx.push_back(base + i);
      base += w_->copy_src.size();
      for (std::size_t k = 0; k < w_->fb_src.size(); ++k)
        if (w_->fb_src[k] == y) idx.push_back(base + k);
      if (idx.empty()) {
        idx.push_back(Vocabulary::kUnk);
        if (oov_count) ++*oov_count;
      }
      return idx;
    }

    void refresh() {
      Tape& t = *t_;
      NodeId a = t.matvec(w_->hs, t.matvec_t(w_->w_a, s_.h));
      alpha_ = t.softmax(a);
      NodeId c = t.matvec_t(w_->hs, alpha_);
      NodeId gen_input;
      if (p_->feedback_) {
        NodeId e = t.matvec(w_->bs, t.matvec_t(w_->w_e, s_.h));
        beta_ = t.softmax(e);
        ctx_ = t.add(c, t.matvec_t(w_->bs, beta_));
        gen_input = t.matvec(w_->w_o, t.concat(s_.h, ctx_));
        logits_ = t.concat(t.concat(gen_input, a), e);
      } else {
        ctx_ = c;
        gen_input = t.matvec(w_->w_o, t.concat(s_.h, ctx_));
        logits_ = t.concat(gen_input, a);
      }
    }

    Tape* t_;
    const Parser* p_;
    const Wiring* w_;
    LstmState s_{};
    NodeId ctx_ = -1;
    NodeId logits_ = -1;
    NodeId alpha_ = -1;
    NodeId beta_ = -1;
  };

 private:
  // Sum of per-step log marginals for y (plus the end term when asked);
  // returns the total node so callers can negate it into a loss.
  NodeId logprob_total(Tape& t, const Wiring& w, const LogicalForm& y, bool include_end,
                       std::size_t* oov_count) const {
    Cursor cur(t, *this, w);
    NodeId total = -1;
    auto push = [&](NodeId term) { total = total < 0 ? term : t.add(total, term); };
    for (const Token& tok : y.tokens) {
      push(cur.step_term(tok, oov_count));
      cur.advance(tok);
    }
    if (include_end) push(cur.end_term());
    return total < 0 ? t.input(Array::vec({0.0})) : total;
  }

 public:
  // Builds -log P(y | inputs) on the caller's tape and returns the loss node.
  NodeId loss_on_tape(Tape& t, const ParamStore& ps, const InteractionRecord& rec,
                      const LogicalForm& y, double* logprob_out, std::size_t* oov_count) const {
    Wiring w = encode_on(t, ps, rec);
    NodeId total = logprob_total(t, w, y, true, oov_count);
    if (logprob_out) *logprob_out = t.value(total)[0];
    return t.neg(total);
  }

  double logprob(const ParamStore& ps, const InteractionRecord& rec, const LogicalForm& y,
                 std::size_t* oov_count = nullptr) const {
    Tape t(false);
    double lp = 0.0;
    loss_on_tape(t, ps, rec, y, &lp, oov_count);
    return lp;
  }

  GradMap loss_grad(const ParamStore& ps, const InteractionRecord& rec, const LogicalForm& y,
                    double* logprob_out = nullptr, std::size_t* oov_count = nullptr) const {
    Tape t(true);
    NodeId loss = loss_on_tape(t, ps, rec, y, logprob_out, oov_count);
    return t.backward(loss);
  }

  // Encode once, then score/sample many hypotheses against the same inputs.
  // Every call rewinds the tape to the post-encoding mark, so a session stays
  // cheap across hundreds of inference iterations.
  class Session {
   public:
    Session(const Parser& p, const ParamStore& ps, const InteractionRecord& rec,
            bool with_grad = false)
        : parser_(&p), tape_(with_grad), wiring_(p.encode_on(tape_, ps, rec)),
          mark_(tape_.size()) {}

    const Parser& parser() const { return *parser_; }
    Tape& tape() { return tape_; }
    const std::vector<Token>& copy_sources() const { return wiring_.copy_src; }
    const std::vector<Token>& feedback_sources() const { return wiring_.fb_src; }
    const Array& encoder_states() const { return tape_.value(wiring_.hs); }
    const Array& feedback_states() const {
      if (wiring_.bs < 0) throw std::logic_error("session: parser has no feedback encoder");
      return tape_.value(wiring_.bs);
    }

    std::size_t mark() const { return tape_.size(); }
    void rewind(std::size_t m) { tape_.truncate(m); }

    Cursor start() { return Cursor(tape_, *parser_, wiring_); }

    double logprob(const LogicalForm& y, std::size_t* oov_count = nullptr) {
      return scored(y, true, oov_count);
    }
    double logprob_prefix(const LogicalForm& y, std::size_t* oov_count = nullptr) {
      return scored(y, false, oov_count);
    }

    // Loss node for training sessions; intentionally no rewind, the caller
    // runs backward() next.
    NodeId loss_node(const LogicalForm& y, double* logprob_out = nullptr,
                     std::size_t* oov_count = nullptr) {
      NodeId total = parser_->logprob_total(tape_, wiring_, y, true, oov_count);
      if (logprob_out) *logprob_out = tape_.value(total)[0];
      return tape_.neg(total);
    }

    GradMap backward(NodeId loss) { return tape_.backward(loss); }

    LogicalForm sample(Rng& rng, std::size_t max_len) {
      std::size_t m = tape_.size();
      Cursor cur = start();
      LogicalForm y;
      for (std::size_t j = 0; j < max_len; ++j) {
        StepCells cells = cur.distribution();
        std::size_t cell = rng.categorical(cells.p);
        if (cell == Vocabulary::kSeq) break;
        Token tok;
        if (cell < cells.gen_count)
          tok = parser_->vout_.token(static_cast<int>(cell));
        else if (cell < cells.gen_count + cells.copy_tokens.size())
          tok = cells.copy_tokens[cell - cells.gen_count];
        else
          tok = cells.feedback_tokens[cell - cells.gen_count - cells.copy_tokens.size()];
        y.tokens.push_back(tok);
        cur.advance(tok);
      }
      tape_.truncate(m);
      return y;
    }

   private:
    double scored(const LogicalForm& y, bool include_end, std::size_t* oov_count) {
      std::size_t m = tape_.size();
      NodeId total = parser_->logprob_total(tape_, wiring_, y, include_end, oov_count);
      double lp = tape_.value(total)[0];
      tape_.truncate(m);
      return lp;
    }

    const Parser* parser_;
    Tape tape_;
    Wiring wiring_;
    std::size_t mark_;
  };

  LogicalForm sample(const ParamStore& ps, const InteractionRecord& rec, Rng& rng,
                     std::size_t max_len) const {
    Session sess(*this, ps, rec);
    return sess.sample(rng, max_len);
  }

  LogicalForm greedy(const ParamStore& ps, const InteractionRecord& rec,
                     std::size_t max_len) const {
    return greedy_impl(ps, rec, max_len, nullptr);
  }

  AttentionTrace greedy_with_attention(const ParamStore& ps, const InteractionRecord& rec,
                                       std::size_t max_len) const {
    AttentionTrace trace;
    greedy_impl(ps, rec, max_len, &trace);
    return trace;
  }

  std::vector<Scored> beam_search(const ParamStore& ps, const InteractionRecord& rec,
                                  std::size_t beam_width, std::size_t max_len) const {
    if (beam_width < 1) throw std::invalid_argument("beam_search: width must be >= 1");
    Tape t(false);
    Wiring w = encode_on(t, ps, rec);
    const Token end_tok = vout_.token(Vocabulary::kSeq);

    struct Hyp {
      std::vector<Token> body;
      std::vector<int> ids;  // output-vocab ids, the deterministic tie-break
      double lp = 0.0;
      Cursor cur;
    };
    struct Done {
      std::vector<Token> body;
      std::vector<int> ids;
      double lp = 0.0;
    };
    auto better = [](double lp_a, const std::vector<int>& ids_a, const std::vector<Token>& body_a,
                     double lp_b, const std::vector<int>& ids_b, const std::vector<Token>& body_b) {
      if (lp_a != lp_b) return lp_a > lp_b;
      if (ids_a != ids_b) return ids_a < ids_b;
      return body_a < body_b;
    };

    std::vector<Hyp> live;
    live.push_back({{}, {}, 0.0, Cursor(t, *this, w)});
    std::vector<Done> done;

    for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
      struct Cand {
        std::size_t parent;
        Token tok;
        std::vector<Token> body;  // parent body + tok
        std::vector<int> ids;
        double lp;
      };
      std::vector<Cand> cands;
      for (std::size_t hi = 0; hi < live.size(); ++hi) {
        StepCells cells = live[hi].cur.distribution();
        std::map<Token, double> surfaces;
        for (std::size_t cell = 0; cell < cells.p.size(); ++cell) {
          Token tok = cell < cells.gen_count
                          ? vout_.token(static_cast<int>(cell))
                          : (cell < cells.gen_count + cells.copy_tokens.size()
                                 ? cells.copy_tokens[cell - cells.gen_count]
                                 : cells.feedback_tokens[cell - cells.gen_count -
                                                         cells.copy_tokens.size()]);
          surfaces[tok] += cells.p[cell];
        }
        for (const auto& [tok, prob] : surfaces) {
          double lp = live[hi].lp + std::log(prob);
          std::vector<int> ids = live[hi].ids;
          ids.push_back(vout_.lookup(tok));
          if (tok == end_tok) {
            done.push_back({live[hi].body, std::move(ids), lp});
          } else {
            std::vector<Token> body = live[hi].body;
            body.push_back(tok);
            cands.push_back({hi, tok, std::move(body), std::move(ids), lp});
          }
        }
      }
      std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
        return better(a.lp, a.ids, a.body, b.lp, b.ids, b.body);
      });
      if (cands.size() > beam_width) cands.resize(beam_width);

      // nothing still alive can beat a full beam of finished hypotheses
      if (done.size() >= beam_width) {
        std::sort(done.begin(), done.end(), [&](const Done& a, const Done& b) {
          return better(a.lp, a.ids, a.body, b.lp, b.ids, b.body);
        });
        if (!cands.empty() && done[beam_width - 1].lp >= cands.front().lp) break;
      }

      std::vector<Hyp> next;
      next.reserve(cands.size());
      for (Cand& cand : cands) {
        Hyp h{std::move(cand.body), std::move(cand.ids), cand.lp, live[cand.parent].cur};
        h.cur.advance(cand.tok);
        next.push_back(std::move(h));
      }
      live = std::move(next);
    }

    // length cap reached: terminate what is left
    for (Hyp& h : live) {
      StepCells cells = h.cur.distribution();
      double lp = h.lp + std::log(cells.surface_prob(end_tok, vout_));
      h.ids.push_back(Vocabulary::kSeq);
      done.push_back({std::move(h.body), std::move(h.ids), lp});
    }

    std::sort(done.begin(), done.end(), [&](const Done& a, const Done& b) {
      return better(a.lp, a.ids, a.body, b.lp, b.ids, b.body);
    });
    if (done.size() > beam_width) done.resize(beam_width);
    std::vector<Scored> out;
    out.reserve(done.size());
    for (Done& d : done) out.push_back({LogicalForm{std::move(d.body)}, d.lp});
    return out;
  }

 private:
  // Follows the per-step argmax path and returns the prefix whose
  // end-termination scores best along it, which is exactly what beam search
  // at width one converges to.
  LogicalForm greedy_impl(const ParamStore& ps, const InteractionRecord& rec, std::size_t max_len,
                          AttentionTrace* trace) const {
    Tape t(false);
    Wiring w = encode_on(t, ps, rec);
    if (trace) {
      trace->source_tokens = w.copy_src;
      trace->feedback_tokens = w.fb_src;
    }
    Cursor cur(t, *this, w);
    const Token end_tok = vout_.token(Vocabulary::kSeq);
    std::vector<Token> path;
    std::vector<std::vector<double>> alpha_rows, beta_rows;
    double prefix_lp = 0.0;
    double best_lp = 0.0;
    std::size_t best_len = 0;
    for (std::size_t j = 0;; ++j) {
      StepCells cells = cur.distribution();
      if (trace) {
        alpha_rows.push_back(cur.alpha_values());
        if (feedback_) beta_rows.push_back(cur.beta_values());
      }
      double term_lp = prefix_lp + std::log(cells.surface_prob(end_tok, vout_));
      if (j == 0 || term_lp > best_lp) {
        best_lp = term_lp;
        best_len = j;
      }
      if (j == max_len) break;

      std::map<Token, double> surfaces;
      for (std::size_t cell = 0; cell < cells.p.size(); ++cell) {
        Token tok = cell < cells.gen_count
                        ? vout_.token(static_cast<int>(cell))
                        : (cell < cells.gen_count + cells.copy_tokens.size()
                               ? cells.copy_tokens[cell - cells.gen_count]
                               : cells.feedback_tokens[cell - cells.gen_count -
                                                       cells.copy_tokens.size()]);
        surfaces[tok] += cells.p[cell];
      }
      Token best;
      double best_p = -1.0;
      int best_id = 0;
      for (const auto& [tok, prob] : surfaces) {
        int id = vout_.lookup(tok);
        if (prob > best_p || (prob == best_p && (id < best_id || (id == best_id && tok < best)))) {
          best = tok;
          best_p = prob;
          best_id = id;
        }
      }
      if (best == end_tok) break;
      path.push_back(best);
      prefix_lp += std::log(best_p);
      cur.advance(best);
    }

    LogicalForm y;
    y.tokens.assign(path.begin(), path.begin() + static_cast<std::ptrdiff_t>(best_len));
    if (trace) {
      trace->output_tokens = y.tokens;
      trace->output_tokens.push_back(end_tok);
      trace->alpha.assign(alpha_rows.begin(),
                          alpha_rows.begin() + static_cast<std::ptrdiff_t>(best_len + 1));
      if (feedback_)
        trace->beta.assign(beta_rows.begin(),
                           beta_rows.begin() + static_cast<std::ptrdiff_t>(best_len + 1));
    }
    return y;
  }

  std::string prefix_;
  bool feedback_;
  ParserDims dims_;
  Vocabulary vin_;
  Vocabulary vout_;
};

}  // namespace nlsup
