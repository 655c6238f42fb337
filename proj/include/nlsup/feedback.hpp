#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "nlsup/edits.hpp"
#include "nlsup/lf.hpp"
#include "nlsup/rng.hpp"
#include "nlsup/world.hpp"

namespace nlsup {

struct NoiseConfig {
  // chance that corrective feedback is replaced by an affirmation (grows
  // with gold complexity via complexity_scaling)
  double miss_error_rate = 0.01;
  // chance that an affirmation is replaced by one bogus correction
  double spurious_correction_rate = 0.04;
  double complexity_scaling = 0.5;

  void validate() const {
    if (miss_error_rate < 0 || miss_error_rate > 1 ||
        spurious_correction_rate < 0 || spurious_correction_rate > 1)
      throw std::invalid_argument("noise rates must be in [0,1]");
    if (complexity_scaling < 0)
      throw std::invalid_argument("complexity_scaling must be >= 0");
  }

  double miss_rate_for(int gold_predicates) const {
    double r = miss_error_rate *
               (1.0 + complexity_scaling * (gold_predicates - 1));
    return std::clamp(r, 0.0, 1.0);
  }
};

namespace fbtpl {

// clause phrases shared by correction templates; "{e}" is the entity slot.
// Prefixes are unique per predicate given longest-first matching, which is
// what keeps templated feedback mechanically invertible in tests.
inline const std::vector<std::string>& clause_phrases(const Token& pred) {
  static const std::map<Token, std::vector<std::string>> table = {
      {"sender", {"from {e}", "sent by {e}"}},
      {"recipient", {"to {e}", "sent to {e}"}},
      {"sender_org", {"from someone at {e}", "from people at {e}"}},
      {"recipient_org", {"to someone at {e}", "to people at {e}"}},
      {"about", {"about {e}", "regarding {e}"}},
      {"before", {"before {e}", "from before {e}"}},
      {"after", {"after {e}", "from after {e}"}},
      {"employer", {"working at {e}", "employed by {e}"}},
      {"emailed", {"emailing {e}", "writing to {e}"}},
      {"wrote_about", {"writing about {e}", "discussing {e}"}},
  };
  return table.at(pred);
}

// short noun naming the slot a predicate fills, for entity corrections
inline const std::string& role_word(const Token& pred) {
  static const std::map<Token, std::string> table = {
      {"sender", "sender"},
      {"recipient", "recipient"},
      {"sender_org", "sender company"},
      {"recipient_org", "recipient company"},
      {"about", "topic"},
      {"before", "before date"},
      {"after", "after date"},
      {"employer", "employer"},
      {"emailed", "contact"},
      {"wrote_about", "subject"},
  };
  return table.at(pred);
}

inline const std::string& root_word(const Token& root) {
  static const std::string emails = "emails", people = "people";
  return root == "find_email" ? emails : people;
}

// slots: {role} {right} {wrong}; the last two templates omit {role} and are
// only used when the wrong entity pins down a unique clause
inline const std::vector<std::string>& entity_sub_templates() {
  static const std::vector<std::string> t = {
      "the {role} should be {right} not {wrong}",
      "you got the {role} wrong it should be {right}",
      "the {role} is wrong i wanted {right}",
      "change the {role} from {wrong} to {right}",
      "wrong {role} i meant {right}",
      "the {role} was supposed to be {right} not {wrong}",
      "not {wrong} the {role} should say {right}",
      "i said {right} for the {role} not {wrong}",
      "no i meant {right} not {wrong}",
      "i asked for {right} not {wrong}",
  };
  return t;
}
constexpr size_t kEntitySubRoleful = 8;

// slots: {rightphrase} {wrongphrase}
inline const std::vector<std::string>& pred_sub_templates() {
  static const std::vector<std::string> t = {
      "i wanted the ones {rightphrase} not {wrongphrase}",
      "it should be {rightphrase} not {wrongphrase}",
      "not {wrongphrase} i meant {rightphrase}",
      "you mixed it up i asked for {rightphrase} not {wrongphrase}",
      "i said {rightphrase} not {wrongphrase}",
      "that should have been {rightphrase} instead of {wrongphrase}",
      "swap {wrongphrase} for {rightphrase}",
      "i meant {rightphrase} rather than {wrongphrase}",
  };
  return t;
}

// slots: {phrase}
inline const std::vector<std::string>& insertion_templates() {
  static const std::vector<std::string> t = {
      "you forgot the ones {phrase}",
      "i also wanted them {phrase}",
      "you missed that they should be {phrase}",
      "add the ones {phrase}",
      "it also needs to be {phrase}",
      "you left out the ones {phrase}",
      "i asked for them {phrase} too",
      "do not forget the ones {phrase}",
  };
  return t;
}

// slots: {phrase}
inline const std::vector<std::string>& deletion_templates() {
  static const std::vector<std::string> t = {
      "i never asked for the ones {phrase}",
      "drop the part {phrase}",
      "i did not want them {phrase}",
      "remove the ones {phrase}",
      "forget the ones {phrase}",
      "i did not say anything {phrase}",
      "nobody asked for the ones {phrase}",
      "take out the ones {phrase}",
  };
  return t;
}

// slots: {right} {wrong} filled with root words
inline const std::vector<std::string>& root_sub_templates() {
  static const std::vector<std::string> t = {
      "i was asking for {right} not {wrong}",
      "search for {right} instead of {wrong}",
      "i wanted a {right} search not {wrong}",
  };
  return t;
}

inline const std::vector<std::string>& affirmation_templates() {
  static const std::vector<std::string> t = {
      "that is right",
      "yes that is correct",
      "correct",
      "yes exactly",
      "that is what i wanted",
      "looks right to me",
      "yes that works",
      "perfect that is it",
  };
  return t;
}

inline void expand(std::vector<Token>& out, const std::string& tpl,
                   const std::map<std::string, std::string>& slots) {
  for (const Token& t : split_tokens(tpl)) {
    if (t.size() >= 2 && t.front() == '{' && t.back() == '}') {
      auto it = slots.find(t.substr(1, t.size() - 2));
      if (it == slots.end())
        throw std::logic_error("unbound template slot " + t);
      for (const Token& w : split_tokens(it->second)) out.push_back(w);
    } else {
      out.push_back(t);
    }
  }
}

inline std::string phrase_for(const Token& pred, const Token& entity,
                              size_t variant) {
  const auto& phrases = clause_phrases(pred);
  std::string out = phrases[variant % phrases.size()];
  size_t at = out.find("{e}");
  out.replace(at, 3, entity);
  return out;
}

}  // namespace fbtpl

// every surface word the feedback templates can produce
inline std::vector<Token> feedback_template_lexicon() {
  std::vector<Token> out;
  auto add = [&](const std::string& s) {
    for (const Token& t : split_tokens(s))
      if (t.front() != '{') out.push_back(t);
  };
  for (const PredicateInfo& p : predicate_table()) {
    for (const auto& ph : fbtpl::clause_phrases(p.name)) add(ph);
    add(fbtpl::role_word(p.name));
  }
  for (const Token& r : lf_roots()) add(fbtpl::root_word(r));
  for (const auto& t : fbtpl::entity_sub_templates()) add(t);
  for (const auto& t : fbtpl::pred_sub_templates()) add(t);
  for (const auto& t : fbtpl::insertion_templates()) add(t);
  for (const auto& t : fbtpl::deletion_templates()) add(t);
  for (const auto& t : fbtpl::root_sub_templates()) add(t);
  for (const auto& t : fbtpl::affirmation_templates()) add(t);
  out.push_back("and");
  return out;
}

// Deterministic inverse rendering of a parse, as shown to the user ("did you
// mean ..."). Uses the first phrase variant everywhere, so distinct LFs give
// distinct confirmations.
inline Utterance render_confirmation(const LogicalForm& lf) {
  ParsedLf p = parse_lf(lf);
  Utterance out;
  out.tokens = {"did", "you", "mean"};
  out.tokens.push_back(fbtpl::root_word(p.root));
  for (const Clause& c : p.clauses)
    for (const Token& t : split_tokens(fbtpl::phrase_for(c.pred, c.entity, 0)))
      out.tokens.push_back(t);
  return out;
}

struct FeedbackResult {
  Utterance feedback;
  int num_corrections = 0;
  bool miss_error = false;
  bool spurious = false;
};

inline Utterance render_affirmation(Rng& rng) {
  return Utterance{split_tokens(rng.pick(fbtpl::affirmation_templates()))};
}

inline Utterance canonical_affirmation() {
  return Utterance{split_tokens(fbtpl::affirmation_templates().front())};
}

namespace detail {

// Realizes one correction as words and applies it to `state`, the parse as
// repaired so far. Corrections are worded against that running state (a
// role-free phrasing is only safe while the wrong entity is unique in it),
// which is exactly how a reader consuming the feedback left to right would
// resolve them.
inline std::vector<Token> realize_correction(const Correction& c,
                                             const LogicalForm& predicted,
                                             ParsedLf& state, Rng& rng) {
  using namespace fbtpl;
  std::vector<Token> out;
  switch (c.kind) {
    case EditKind::entity_substitution: {
      const Token& pred = predicted.tokens.at(c.position - 1);
      const Token& wrong = c.wrong.at(0);
      const Token& right = c.right.at(0);
      // role-free phrasings need the wrong entity to identify its clause
      int occurrences = 0;
      for (const Clause& cl : state.clauses)
        if (cl.entity == wrong) ++occurrences;
      const auto& tpls = entity_sub_templates();
      size_t n = occurrences == 1 ? tpls.size() : kEntitySubRoleful;
      expand(out, tpls[rng.uniform_int(n)],
             {{"role", role_word(pred)}, {"right", right}, {"wrong", wrong}});
      for (Clause& cl : state.clauses)
        if (cl.pred == pred && cl.entity == wrong) {
          cl.entity = right;
          break;
        }
      break;
    }
    case EditKind::predicate_substitution: {
      if (c.position == 1) {  // root swap
        expand(out, rng.pick(root_sub_templates()),
               {{"right", root_word(c.right.at(0))},
                {"wrong", root_word(c.wrong.at(0))}});
        state.root = c.right.at(0);
        break;
      }
      const Token& entity = predicted.tokens.at(c.position + 1);
      size_t v = rng.uniform_int(4);
      expand(out, rng.pick(pred_sub_templates()),
             {{"rightphrase", phrase_for(c.right.at(0), entity, v)},
              {"wrongphrase", phrase_for(c.wrong.at(0), entity, v)}});
      for (Clause& cl : state.clauses)
        if (cl.pred == c.wrong.at(0) && cl.entity == entity) {
          cl.pred = c.right.at(0);
          break;
        }
      break;
    }
    case EditKind::insertion: {
      expand(out, rng.pick(insertion_templates()),
             {{"phrase", phrase_for(c.right.at(1), c.right.at(2),
                                    rng.uniform_int(4))}});
      state.clauses.push_back(Clause{c.right.at(1), c.right.at(2)});
      break;
    }
    case EditKind::deletion: {
      expand(out, rng.pick(deletion_templates()),
             {{"phrase", phrase_for(c.wrong.at(1), c.wrong.at(2),
                                    rng.uniform_int(4))}});
      for (size_t i = 0; i < state.clauses.size(); ++i)
        if (state.clauses[i].pred == c.wrong.at(1) &&
            state.clauses[i].entity == c.wrong.at(2)) {
          state.clauses.erase(state.clauses.begin() + i);
          break;
        }
      break;
    }
  }
  return out;
}

inline Correction random_spurious_correction(const LogicalForm& predicted,
                                             const World& world, Rng& rng) {
  // a correction that claims something is wrong with a correct parse; built
  // from the same move inventory as corrupt() but never applied
  ParsedLf p = parse_lf(predicted);
  for (int attempt = 0; attempt < 50; ++attempt) {
    int kind = static_cast<int>(rng.uniform_int(4));
    if (kind == 0) {  // entity substitution
      size_t i = rng.uniform_int(p.clauses.size());
      const Clause& c = p.clauses[i];
      const auto& pool = world.of_kind(predicate_info(c.pred).arg);
      if (pool.size() < 2) continue;
      Token alt = rng.pick(pool);
      if (alt == c.entity) continue;
      return Correction{EditKind::entity_substitution,
                        detail::clause_token_pos(i) + 2,
                        {c.entity},
                        {alt}};
    } else if (kind == 1) {  // predicate substitution
      size_t i = rng.uniform_int(p.clauses.size());
      const Clause& c = p.clauses[i];
      const PredicateInfo& info = predicate_info(c.pred);
      std::vector<Token> alts;
      for (const PredicateInfo& alt : predicates_for_root(info.root))
        if (alt.arg == info.arg && alt.name != c.pred) alts.push_back(alt.name);
      if (alts.empty()) continue;
      return Correction{EditKind::predicate_substitution,
                        detail::clause_token_pos(i) + 1,
                        {c.pred},
                        {rng.pick(alts)}};
    } else if (kind == 2) {  // insertion
      std::vector<Token> unused;
      for (const PredicateInfo& alt : predicates_for_root(p.root)) {
        bool used = false;
        for (const Clause& c : p.clauses)
          if (c.pred == alt.name) used = true;
        if (!used) unused.push_back(alt.name);
      }
      if (unused.empty()) continue;
      Token pred = rng.pick(unused);
      Token entity = rng.pick(world.of_kind(predicate_info(pred).arg));
      return Correction{EditKind::insertion,
                        predicted.tokens.size() - 1,
                        {},
                        {"(", pred, entity, ")"}};
    } else {  // deletion
      if (p.clauses.size() < 2) continue;
      size_t i = rng.uniform_int(p.clauses.size());
      return Correction{EditKind::deletion, detail::clause_token_pos(i),
                        clause_tokens(p.clauses[i]),
                        {}};
    }
  }
  throw std::runtime_error("could not synthesize a spurious correction for " +
                           join_tokens(predicted.tokens));
}

}  // namespace detail

inline FeedbackResult generate_feedback(const LogicalForm& gold,
                                        const LogicalForm& predicted,
                                        const NoiseConfig& noise,
                                        const World& world, Rng& rng) {
  noise.validate();
  FeedbackResult out;
  std::vector<Correction> script = diff_lf(gold, predicted);
  if (script.empty()) {
    if (rng.bernoulli(noise.spurious_correction_rate)) {
      Correction c = detail::random_spurious_correction(predicted, world, rng);
      ParsedLf scratch = parse_lf(predicted);
      out.feedback.tokens =
          detail::realize_correction(c, predicted, scratch, rng);
      out.num_corrections = 1;
      out.spurious = true;
    } else {
      out.feedback = render_affirmation(rng);
      out.num_corrections = 0;
    }
    return out;
  }
  int gold_preds = predicate_count(gold);
  if (rng.bernoulli(noise.miss_rate_for(gold_preds))) {
    out.feedback = render_affirmation(rng);
    out.num_corrections = 0;
    out.miss_error = true;
    return out;
  }
  ParsedLf repaired = parse_lf(predicted);
  for (size_t i = 0; i < script.size(); ++i) {
    if (i) out.feedback.tokens.push_back("and");
    std::vector<Token> chunk =
        detail::realize_correction(script[i], predicted, repaired, rng);
    out.feedback.tokens.insert(out.feedback.tokens.end(), chunk.begin(),
                               chunk.end());
  }
  out.num_corrections = static_cast<int>(script.size());
  return out;
}

}  // namespace nlsup
