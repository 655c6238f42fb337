#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "nlsup/lf.hpp"
#include "nlsup/rng.hpp"
#include "nlsup/world.hpp"

namespace nlsup {

enum class EditKind {
  entity_substitution,
  predicate_substitution,
  insertion,
  deletion
};

inline const char* edit_kind_name(EditKind k) {
  switch (k) {
    case EditKind::entity_substitution: return "entity_substitution";
    case EditKind::predicate_substitution: return "predicate_substitution";
    case EditKind::insertion: return "insertion";
    case EditKind::deletion: return "deletion";
  }
  return "?";
}

// One atomic repair of a predicted LF. position indexes into the predicted
// LF's token vector; splicing `right` over `wrong` there performs the edit.
// For insertions position is where the missing clause belongs under canonical
// clause order and wrong is empty; for deletions right is empty.
struct Correction {
  EditKind kind;
  size_t position = 0;
  std::vector<Token> wrong;
  std::vector<Token> right;
  bool operator==(const Correction&) const = default;
};

namespace detail {

inline std::vector<Token> clause_tokens(const Clause& c) {
  return {"(", c.pred, c.entity, ")"};
}

// token index of clause i's opening bracket in a rendered LF
inline size_t clause_token_pos(size_t clause_idx) {
  return 2 + 4 * clause_idx;
}

struct MatchResult {
  int cost = std::numeric_limits<int>::max();
  // for each predicted clause, matched gold clause index or -1 for deletion
  std::vector<int> assign;
};

// exhaustive minimal matching between predicted and gold clauses; pairs are
// only allowed when they agree on predicate or entity (a clause wrong in both
// is treated as deletion + insertion, which costs the same and reads better
// as feedback)
inline void match_clauses(const std::vector<Clause>& pred,
                          const std::vector<Clause>& gold, size_t i,
                          std::vector<bool>& used, std::vector<int>& assign,
                          int cost_so_far, MatchResult& best) {
  if (cost_so_far >= best.cost) return;
  if (i == pred.size()) {
    int cost = cost_so_far;
    for (size_t g = 0; g < gold.size(); ++g)
      if (!used[g]) ++cost;  // insertion
    if (cost < best.cost) {
      best.cost = cost;
      best.assign = assign;
    }
    return;
  }
  for (size_t g = 0; g < gold.size(); ++g) {
    if (used[g]) continue;
    int pair_cost = (pred[i].pred != gold[g].pred ? 1 : 0) +
                    (pred[i].entity != gold[g].entity ? 1 : 0);
    if (pair_cost > 1) continue;
    used[g] = true;
    assign[i] = static_cast<int>(g);
    match_clauses(pred, gold, i + 1, used, assign, cost_so_far + pair_cost,
                  best);
    used[g] = false;
  }
  assign[i] = -1;
  match_clauses(pred, gold, i + 1, used, assign, cost_so_far + 1, best);
}

}  // namespace detail

// Minimal correction script turning predicted into gold under the four edit
// kinds. Corrections are ordered: root fix first, then deletions, then
// substitutions by predicted-clause position, then insertions in gold order;
// deletions lead so that applying the script in order never substitutes a
// predicate that a doomed clause still holds. All positions refer to the
// unmodified predicted LF.
inline std::vector<Correction> diff_lf(const LogicalForm& gold,
                                       const LogicalForm& predicted) {
  ParsedLf g = parse_lf(gold);
  ParsedLf p = parse_lf(predicted);
  std::vector<Correction> script;
  if (lf_equal(gold, predicted)) return script;

  if (g.root != p.root)
    script.push_back(Correction{
        EditKind::predicate_substitution, 1, {p.root}, {g.root}});

  detail::MatchResult best;
  std::vector<bool> used(g.clauses.size(), false);
  std::vector<int> assign(p.clauses.size(), -1);
  detail::match_clauses(p.clauses, g.clauses, 0, used, assign, 0, best);

  std::vector<Correction> subs, dels, ins;
  std::vector<bool> matched(g.clauses.size(), false);
  for (size_t i = 0; i < p.clauses.size(); ++i) {
    size_t pos = detail::clause_token_pos(i);
    if (best.assign[i] < 0) {
      dels.push_back(Correction{EditKind::deletion, pos,
                                detail::clause_tokens(p.clauses[i]),
                                {}});
      continue;
    }
    const Clause& gc = g.clauses[best.assign[i]];
    matched[best.assign[i]] = true;
    if (p.clauses[i].pred != gc.pred)
      subs.push_back(Correction{EditKind::predicate_substitution, pos + 1,
                                {p.clauses[i].pred},
                                {gc.pred}});
    if (p.clauses[i].entity != gc.entity)
      subs.push_back(Correction{EditKind::entity_substitution, pos + 2,
                                {p.clauses[i].entity},
                                {gc.entity}});
  }
  for (size_t gi = 0; gi < g.clauses.size(); ++gi) {
    if (matched[gi]) continue;
    // canonical slot: before the first predicted clause whose predicate
    // sorts later, else before the closing bracket
    size_t pos = predicted.tokens.size() - 1;
    for (size_t i = 0; i < p.clauses.size(); ++i)
      if (predicate_index(p.clauses[i].pred) >
          predicate_index(g.clauses[gi].pred)) {
        pos = detail::clause_token_pos(i);
        break;
      }
    ins.push_back(Correction{EditKind::insertion, pos,
                             {},
                             detail::clause_tokens(g.clauses[gi])});
  }
  script.insert(script.end(), dels.begin(), dels.end());
  script.insert(script.end(), subs.begin(), subs.end());
  script.insert(script.end(), ins.begin(), ins.end());
  return script;
}

// Draws a well-formed LF exactly k edits away from y. Each original clause is
// touched at most once and inserted clauses use predicates y does not, so the
// minimal edit distance back to y is exactly k.
inline LogicalForm corrupt(const LogicalForm& y, int k, const World& world,
                           Rng& rng) {
  if (k < 0) throw std::invalid_argument("corrupt: k must be >= 0");
  if (k == 0) return y;
  ParsedLf cur = parse_lf(y);

  struct Move {
    EditKind kind;
    size_t clause;     // for subs/deletion
    Token pred;        // insertion: new pred; pred-sub: replacement
    Token entity;      // insertion / entity-sub replacement
  };

  // Guards below keep the edits independent: a deleted clause must not be
  // recreatable by a later insertion or substitution (and vice versa), or the
  // minimal script back to y would be shorter than k.
  std::vector<bool> touched(cur.clauses.size(), false);
  std::vector<Clause> deleted;
  std::vector<Token> inserted_entities;
  auto pred_used = [&](const Token& name) {
    for (const Clause& c : cur.clauses)
      if (c.pred == name) return true;
    return false;
  };
  auto pred_deleted = [&](const Token& name) {
    for (const Clause& c : deleted)
      if (c.pred == name) return true;
    return false;
  };
  auto entity_deleted = [&](const Token& e) {
    for (const Clause& c : deleted)
      if (c.entity == e) return true;
    return false;
  };

  for (int step = 0; step < k; ++step) {
    std::vector<Move> moves;
    size_t alive = cur.clauses.size();
    for (size_t i = 0; i < cur.clauses.size(); ++i) {
      if (touched[i]) continue;
      const Clause& c = cur.clauses[i];
      const PredicateInfo& info = predicate_info(c.pred);
      for (const Token& e : world.of_kind(info.arg))
        if (e != c.entity)
          moves.push_back(Move{EditKind::entity_substitution, i, "", e});
      for (const PredicateInfo& alt : predicates_for_root(info.root)) {
        if (alt.arg != info.arg || alt.name == c.pred || pred_used(alt.name))
          continue;
        bool recreates = false;
        for (const Clause& d : deleted)
          if (d.pred == alt.name && d.entity == c.entity) recreates = true;
        if (!recreates)
          moves.push_back(
              Move{EditKind::predicate_substitution, i, alt.name, ""});
      }
      bool entity_inserted = false;
      for (const Token& e : inserted_entities)
        if (e == c.entity) entity_inserted = true;
      if (alive > 1 && !entity_inserted)
        moves.push_back(Move{EditKind::deletion, i, "", ""});
    }
    for (const PredicateInfo& alt : predicates_for_root(cur.root))
      if (!pred_used(alt.name) && !pred_deleted(alt.name))
        for (const Token& e : world.of_kind(alt.arg))
          if (!entity_deleted(e))
            moves.push_back(Move{EditKind::insertion, 0, alt.name, e});
    if (moves.empty())
      throw std::runtime_error("corrupt: k = " + std::to_string(k) +
                               " exceeds feasible edits for " +
                               join_tokens(y.tokens));

    const Move& m = moves[rng.uniform_int(moves.size())];
    switch (m.kind) {
      case EditKind::entity_substitution:
        cur.clauses[m.clause].entity = m.entity;
        touched[m.clause] = true;
        break;
      case EditKind::predicate_substitution:
        cur.clauses[m.clause].pred = m.pred;
        touched[m.clause] = true;
        break;
      case EditKind::deletion:
        deleted.push_back(cur.clauses[m.clause]);
        cur.clauses.erase(cur.clauses.begin() + m.clause);
        touched.erase(touched.begin() + m.clause);
        break;
      case EditKind::insertion:
        inserted_entities.push_back(m.entity);
        cur.clauses.push_back(Clause{m.pred, m.entity});
        touched.push_back(true);
        break;
    }
  }
  return render_lf(cur);
}

}  // namespace nlsup
