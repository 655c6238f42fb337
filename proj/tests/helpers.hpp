#pragma once

// Test-only utilities: an independent inverter for templated feedback and a
// brute-force minimal-edit search. Both deliberately avoid the library's own
// diff/realization code paths so they can serve as oracles.

#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <nlsup/corpus.hpp>
#include <nlsup/edits.hpp>
#include <nlsup/feedback.hpp>
#include <nlsup/lf.hpp>
#include <nlsup/world.hpp>

namespace nlsup_test {

using namespace nlsup;

// ---------------------------------------------------------------------------
// Feedback inverter.

struct Interp {
  enum Kind {
    entity_sub_role,
    entity_sub_free,
    pred_sub,
    root_sub,
    insertion,
    deletion
  } kind;
  Token pred;    // role pred, phrase pred, or right pred for pred_sub
  Token entity;  // phrase entity
  Token wrong;   // wrong entity / wrong pred / wrong root word
  Token right;   // right entity / right root word
};

namespace inv {

inline std::optional<Token> pred_for_role(const std::vector<Token>& toks,
                                          size_t pos, size_t* consumed) {
  for (const PredicateInfo& p : predicate_table()) {
    std::vector<Token> role = split_tokens(fbtpl::role_word(p.name));
    if (pos + role.size() > toks.size()) continue;
    bool ok = true;
    for (size_t i = 0; i < role.size(); ++i)
      if (toks[pos + i] != role[i]) ok = false;
    if (ok) {
      *consumed = role.size();
      return p.name;
    }
  }
  return std::nullopt;
}

struct PhraseMatch {
  size_t consumed;
  Token pred;
  Token entity;
};

inline std::vector<PhraseMatch> match_phrases(const std::vector<Token>& toks,
                                              size_t pos) {
  std::vector<PhraseMatch> out;
  for (const PredicateInfo& p : predicate_table()) {
    for (const std::string& tpl : fbtpl::clause_phrases(p.name)) {
      std::vector<Token> pat = split_tokens(tpl);
      if (pos + pat.size() > toks.size()) continue;
      Token entity;
      bool ok = true;
      for (size_t i = 0; i < pat.size(); ++i) {
        if (pat[i] == "{e}")
          entity = toks[pos + i];
        else if (pat[i] != toks[pos + i])
          ok = false;
      }
      if (ok && !entity.empty())
        out.push_back(PhraseMatch{pat.size(), p.name, entity});
    }
  }
  return out;
}

// generic matcher over a template's literal/slot parts; slots are filled via
// the callbacks above
inline void match_template(const std::vector<Token>& chunk, size_t pos,
                           const std::vector<Token>& parts, size_t pi,
                           std::map<std::string, PhraseMatch>& phrase_slots,
                           std::map<std::string, Token>& token_slots,
                           std::vector<Interp>& out,
                           const std::function<void()>& emit) {
  if (pi == parts.size()) {
    if (pos == chunk.size()) emit();
    return;
  }
  const Token& part = parts[pi];
  if (part.front() != '{') {
    if (pos < chunk.size() && chunk[pos] == part)
      match_template(chunk, pos + 1, parts, pi + 1, phrase_slots, token_slots,
                     out, emit);
    return;
  }
  std::string slot = part.substr(1, part.size() - 2);
  if (slot == "role") {
    size_t consumed = 0;
    // roles can collide on prefixes ("sender" / "sender company"): try every
    // role whose words match here
    for (const PredicateInfo& p : predicate_table()) {
      std::vector<Token> role = split_tokens(fbtpl::role_word(p.name));
      if (pos + role.size() > chunk.size()) continue;
      bool ok = true;
      for (size_t i = 0; i < role.size(); ++i)
        if (chunk[pos + i] != role[i]) ok = false;
      if (!ok) continue;
      token_slots["role_pred"] = p.name;
      match_template(chunk, pos + role.size(), parts, pi + 1, phrase_slots,
                     token_slots, out, emit);
      token_slots.erase("role_pred");
    }
    (void)consumed;
  } else if (slot == "phrase" || slot == "rightphrase" ||
             slot == "wrongphrase") {
    for (const PhraseMatch& m : match_phrases(chunk, pos)) {
      phrase_slots[slot] = m;
      match_template(chunk, pos + m.consumed, parts, pi + 1, phrase_slots,
                     token_slots, out, emit);
      phrase_slots.erase(slot);
    }
  } else {  // single-token slot
    if (pos < chunk.size()) {
      token_slots[slot] = chunk[pos];
      match_template(chunk, pos + 1, parts, pi + 1, phrase_slots, token_slots,
                     out, emit);
      token_slots.erase(slot);
    }
  }
}

inline void collect(const std::vector<Token>& chunk, const std::string& tpl,
                    Interp::Kind kind, bool roleful,
                    std::vector<Interp>& out) {
  std::vector<Token> parts = split_tokens(tpl);
  std::map<std::string, PhraseMatch> phrase_slots;
  std::map<std::string, Token> token_slots;
  auto emit = [&]() {
    Interp in{};
    in.kind = kind;
    switch (kind) {
      case Interp::entity_sub_role:
      case Interp::entity_sub_free:
        if (roleful) {
          in.kind = Interp::entity_sub_role;
          in.pred = token_slots.at("role_pred");
        } else {
          in.kind = Interp::entity_sub_free;
        }
        if (token_slots.count("right")) in.right = token_slots.at("right");
        if (token_slots.count("wrong")) in.wrong = token_slots.at("wrong");
        break;
      case Interp::pred_sub: {
        const PhraseMatch& r = phrase_slots.at("rightphrase");
        const PhraseMatch& w = phrase_slots.at("wrongphrase");
        if (r.entity != w.entity) return;  // substitution keeps the argument
        in.pred = r.pred;
        in.wrong = w.pred;
        in.entity = r.entity;
        break;
      }
      case Interp::root_sub:
        in.right = token_slots.at("right");
        in.wrong = token_slots.at("wrong");
        if ((in.right != "emails" && in.right != "people") ||
            (in.wrong != "emails" && in.wrong != "people"))
          return;
        break;
      case Interp::insertion:
      case Interp::deletion: {
        const PhraseMatch& m = phrase_slots.at("phrase");
        in.pred = m.pred;
        in.entity = m.entity;
        break;
      }
    }
    out.push_back(in);
  };
  match_template(chunk, 0, parts, 0, phrase_slots, token_slots, out, emit);
}

inline std::vector<Interp> parse_chunk(const std::vector<Token>& chunk) {
  std::vector<Interp> out;
  const auto& es = fbtpl::entity_sub_templates();
  for (size_t i = 0; i < es.size(); ++i)
    collect(chunk, es[i], Interp::entity_sub_role,
            i < fbtpl::kEntitySubRoleful, out);
  for (const auto& t : fbtpl::pred_sub_templates())
    collect(chunk, t, Interp::pred_sub, false, out);
  for (const auto& t : fbtpl::insertion_templates())
    collect(chunk, t, Interp::insertion, false, out);
  for (const auto& t : fbtpl::deletion_templates())
    collect(chunk, t, Interp::deletion, false, out);
  for (const auto& t : fbtpl::root_sub_templates())
    collect(chunk, t, Interp::root_sub, false, out);
  return out;
}

inline bool apply_interp(ParsedLf& lf, const Interp& in) {
  switch (in.kind) {
    case Interp::entity_sub_role:
      for (Clause& c : lf.clauses)
        if (c.pred == in.pred) {
          if (!in.wrong.empty() && c.entity != in.wrong) return false;
          c.entity = in.right;
          return true;
        }
      return false;
    case Interp::entity_sub_free: {
      int hits = 0;
      Clause* target = nullptr;
      for (Clause& c : lf.clauses)
        if (c.entity == in.wrong) {
          ++hits;
          target = &c;
        }
      if (hits != 1) return false;
      target->entity = in.right;
      return true;
    }
    case Interp::pred_sub:
      for (Clause& c : lf.clauses)
        if (c.pred == in.wrong && c.entity == in.entity) {
          for (const Clause& other : lf.clauses)
            if (other.pred == in.pred) return false;
          c.pred = in.pred;
          return true;
        }
      return false;
    case Interp::root_sub:
      lf.root = in.right == "emails" ? "find_email" : "find_person";
      return true;
    case Interp::insertion:
      for (const Clause& c : lf.clauses)
        if (c.pred == in.pred) return false;
      lf.clauses.push_back(Clause{in.pred, in.entity});
      return true;
    case Interp::deletion:
      for (size_t i = 0; i < lf.clauses.size(); ++i)
        if (lf.clauses[i].pred == in.pred && lf.clauses[i].entity == in.entity) {
          lf.clauses.erase(lf.clauses.begin() + i);
          return true;
        }
      return false;
  }
  return false;
}

}  // namespace inv

inline bool is_affirmation(const Utterance& f) {
  for (const std::string& t : fbtpl::affirmation_templates())
    if (f.tokens == split_tokens(t)) return true;
  return false;
}

// All LFs reachable by interpreting the feedback against predicted; the
// faithfulness tests assert this is exactly { gold }.
inline std::set<std::string> invert_feedback(const LogicalForm& predicted,
                                             const Utterance& feedback) {
  std::vector<std::vector<Token>> chunks(1);
  for (const Token& t : feedback.tokens) {
    if (t == "and")
      chunks.emplace_back();
    else
      chunks.back().push_back(t);
  }
  std::vector<std::vector<Interp>> options;
  for (const auto& chunk : chunks) {
    options.push_back(inv::parse_chunk(chunk));
    if (options.back().empty()) return {};
  }
  std::set<std::string> results;
  std::vector<size_t> choice(options.size(), 0);
  std::function<void(size_t, ParsedLf)> walk = [&](size_t i, ParsedLf state) {
    if (i == options.size()) {
      try {
        results.insert(join_tokens(render_lf(state).tokens));
      } catch (const std::exception&) {
      }
      return;
    }
    for (const Interp& in : options[i]) {
      ParsedLf next = state;
      if (inv::apply_interp(next, in)) walk(i + 1, next);
    }
  };
  walk(0, parse_lf(predicted));
  return results;
}

// ---------------------------------------------------------------------------
// Brute-force minimal edit distance between two LFs, used as the oracle for
// diff_lf lengths. Pure breadth-first search over the four edit moves.

inline int bfs_edit_distance(const LogicalForm& from, const LogicalForm& to,
                             const World& world, int cap = 4) {
  std::string target = join_tokens(to.tokens);
  std::set<std::string> seen;
  std::queue<std::pair<std::string, int>> frontier;
  std::string start = join_tokens(from.tokens);
  frontier.push({start, 0});
  seen.insert(start);
  while (!frontier.empty()) {
    auto [cur_s, d] = frontier.front();
    frontier.pop();
    if (cur_s == target) return d;
    if (d == cap) continue;
    ParsedLf cur = parse_lf(LogicalForm{split_tokens(cur_s)});
    std::vector<ParsedLf> nexts;
    for (size_t i = 0; i < cur.clauses.size(); ++i) {
      const Clause& c = cur.clauses[i];
      const PredicateInfo& info = predicate_info(c.pred);
      for (const Token& e : world.of_kind(info.arg))
        if (e != c.entity) {
          ParsedLf n = cur;
          n.clauses[i].entity = e;
          nexts.push_back(n);
        }
      for (const PredicateInfo& alt : predicates_for_root(info.root)) {
        if (alt.arg != info.arg || alt.name == c.pred) continue;
        bool used = false;
        for (const Clause& o : cur.clauses)
          if (o.pred == alt.name) used = true;
        if (used) continue;
        ParsedLf n = cur;
        n.clauses[i].pred = alt.name;
        nexts.push_back(n);
      }
      if (cur.clauses.size() > 1) {
        ParsedLf n = cur;
        n.clauses.erase(n.clauses.begin() + i);
        nexts.push_back(n);
      }
    }
    for (const PredicateInfo& alt : predicates_for_root(cur.root)) {
      bool used = false;
      for (const Clause& o : cur.clauses)
        if (o.pred == alt.name) used = true;
      if (used) continue;
      for (const Token& e : world.of_kind(alt.arg)) {
        ParsedLf n = cur;
        n.clauses.push_back(Clause{alt.name, e});
        nexts.push_back(n);
      }
    }
    for (const ParsedLf& n : nexts) {
      std::string key = join_tokens(render_lf(n).tokens);
      if (seen.insert(key).second) frontier.push({key, d + 1});
    }
  }
  return -1;  // not reachable within cap
}

}  // namespace nlsup_test
