#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlsup/lf.hpp"
#include "nlsup/rng.hpp"

namespace nlsup {

// The query language: a root selects what is retrieved, clauses filter it.
// Each predicate takes one entity argument of a fixed kind. Clause order in a
// well-formed LF follows this table, which makes the rendered form canonical.
struct PredicateInfo {
  Token name;
  Token root;
  MentionKind arg;
};

inline const std::vector<PredicateInfo>& predicate_table() {
  static const std::vector<PredicateInfo> table = {
      {"sender", "find_email", MentionKind::person},
      {"recipient", "find_email", MentionKind::person},
      {"sender_org", "find_email", MentionKind::organization},
      {"recipient_org", "find_email", MentionKind::organization},
      {"about", "find_email", MentionKind::topic},
      {"before", "find_email", MentionKind::time},
      {"after", "find_email", MentionKind::time},
      {"employer", "find_person", MentionKind::organization},
      {"emailed", "find_person", MentionKind::person},
      {"wrote_about", "find_person", MentionKind::topic},
  };
  return table;
}

inline const std::vector<Token>& lf_roots() {
  static const std::vector<Token> roots = {"find_email", "find_person"};
  return roots;
}

inline int predicate_index(const Token& pred) {
  const auto& table = predicate_table();
  for (size_t i = 0; i < table.size(); ++i)
    if (table[i].name == pred) return static_cast<int>(i);
  return -1;
}

inline const PredicateInfo& predicate_info(const Token& pred) {
  int i = predicate_index(pred);
  if (i < 0) throw std::invalid_argument("unknown predicate: " + pred);
  return predicate_table()[i];
}

inline std::vector<PredicateInfo> predicates_for_root(const Token& root) {
  std::vector<PredicateInfo> out;
  for (const PredicateInfo& p : predicate_table())
    if (p.root == root) out.push_back(p);
  if (out.empty()) throw std::invalid_argument("unknown root: " + root);
  return out;
}

// ---------------------------------------------------------------------------
// Structured view of a logical form.

struct Clause {
  Token pred;
  Token entity;
  bool operator==(const Clause&) const = default;
};

struct ParsedLf {
  Token root;
  std::vector<Clause> clauses;
};

inline ParsedLf parse_lf(const LogicalForm& lf) {
  const auto& t = lf.tokens;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("malformed LF '" + join_tokens(t) + "': " + what);
  };
  if (t.size() < 3) fail("too short");
  if (t.front() != "(" || t.back() != ")") fail("must be ( root ... )");
  ParsedLf out;
  out.root = t[1];
  if (predicates_for_root(out.root).empty()) fail("unknown root");
  size_t i = 2;
  while (i + 1 < t.size()) {
    if (t[i] != "(" || i + 3 >= t.size() || t[i + 3] != ")" ||
        t[i + 2] == "(" || t[i + 2] == ")")
      fail("clause must be ( pred entity )");
    Clause c{t[i + 1], t[i + 2]};
    if (predicate_index(c.pred) < 0) fail("unknown predicate " + c.pred);
    if (predicate_info(c.pred).root != out.root)
      fail("predicate " + c.pred + " does not belong to root " + out.root);
    out.clauses.push_back(c);
    i += 4;
  }
  if (i != t.size() - 1) fail("trailing tokens");
  for (size_t a = 0; a < out.clauses.size(); ++a)
    for (size_t b = a + 1; b < out.clauses.size(); ++b)
      if (out.clauses[a].pred == out.clauses[b].pred)
        fail("duplicate predicate " + out.clauses[a].pred);
  return out;
}

inline LogicalForm render_lf(ParsedLf parsed) {
  std::sort(parsed.clauses.begin(), parsed.clauses.end(),
            [](const Clause& a, const Clause& b) {
              return predicate_index(a.pred) < predicate_index(b.pred);
            });
  LogicalForm lf;
  lf.tokens.push_back("(");
  lf.tokens.push_back(parsed.root);
  for (const Clause& c : parsed.clauses) {
    lf.tokens.push_back("(");
    lf.tokens.push_back(c.pred);
    lf.tokens.push_back(c.entity);
    lf.tokens.push_back(")");
  }
  lf.tokens.push_back(")");
  return lf;
}

inline bool well_formed_lf(const LogicalForm& lf) {
  try {
    parse_lf(lf);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

inline int predicate_count(const LogicalForm& lf) {
  return static_cast<int>(parse_lf(lf).clauses.size());
}

// ---------------------------------------------------------------------------
// World: entity inventories plus an employment fact per person, used to keep
// generated questions coherent (an email from alice comes from her employer).

struct WorldConfig {
  // person, organization, time, topic
  std::array<int, 4> entity_counts = {14, 8, 12, 12};
};

struct World {
  std::array<std::vector<Token>, 4> entities;
  std::map<Token, Token> employer;

  const std::vector<Token>& of_kind(MentionKind k) const {
    return entities[static_cast<int>(k)];
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (int k = 0; k < kNumMentionKinds; ++k)
      j["entities"][mention_kind_name(static_cast<MentionKind>(k))] =
          entities[k];
    j["employer"] = employer;
    return j;
  }

  static World from_json(const nlohmann::json& j) {
    World w;
    for (int k = 0; k < kNumMentionKinds; ++k)
      w.entities[k] = j.at("entities")
                          .at(mention_kind_name(static_cast<MentionKind>(k)))
                          .get<std::vector<Token>>();
    w.employer = j.at("employer").get<std::map<Token, Token>>();
    return w;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write world: " + path);
    out << to_json().dump(2) << "\n";
  }

  static World load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read world: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

namespace detail {

inline const std::vector<Token>& name_pool(MentionKind k) {
  static const std::vector<Token> persons = {
      "alice", "bob",  "carol", "dave", "erin",   "frank", "grace", "henry",
      "iris",  "jack", "kate",  "liam", "mona",   "nate",  "olga",  "pete",
      "quinn", "rosa", "sam",   "tina", "victor", "wendy", "yusuf", "zoe"};
  static const std::vector<Token> orgs = {
      "acme",     "globex",   "initech", "vantage",    "umbrella", "hooli",
      "cyberdyne", "aperture", "tyrell",  "wintermute", "oscorp",   "monarch"};
  static const std::vector<Token> times = {
      "january", "february", "march",   "april",   "may",      "june",
      "july",    "august",   "september", "october", "november", "december",
      "q1",      "q2",       "q3",      "q4"};
  static const std::vector<Token> topics = {
      "budget",    "merger",  "hiring",     "roadmap",  "security",
      "marketing", "lawsuit", "offsite",    "payroll",  "launch",
      "audit",     "pricing", "logistics",  "onboarding", "outage",
      "compliance"};
  switch (k) {
    case MentionKind::person: return persons;
    case MentionKind::organization: return orgs;
    case MentionKind::time: return times;
    case MentionKind::topic: return topics;
  }
  throw std::logic_error("bad kind");
}

}  // namespace detail

inline World generate_world(const WorldConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  World w;
  for (int k = 0; k < kNumMentionKinds; ++k) {
    int n = cfg.entity_counts[k];
    if (n < 1)
      throw std::invalid_argument("world needs at least 1 entity per kind");
    const auto& pool = detail::name_pool(static_cast<MentionKind>(k));
    std::vector<Token> names = pool;
    rng.shuffle(names);
    for (int i = 0; i < n; ++i) {
      if (i < static_cast<int>(names.size()))
        w.entities[k].push_back(names[i]);
      else
        w.entities[k].push_back(
            std::string(mention_kind_name(static_cast<MentionKind>(k))) +
            "_" + std::to_string(i));
    }
  }
  for (const Token& p : w.of_kind(MentionKind::person))
    w.employer[p] = rng.pick(w.of_kind(MentionKind::organization));
  return w;
}

// ---------------------------------------------------------------------------
// Question generation. Surface text comes from per-predicate phrase variants;
// with some probability an entity is realized as a kind-cued reference phrase
// ("him", "that company") whose referent is the first mention of that kind in
// the context list.

struct QuestionConfig {
  double p_email = 0.8;
  // weight of clause count 1, 2, 3, ...
  std::vector<double> clause_weights = {0.28, 0.26, 0.20, 0.12, 0.08, 0.06};
  double p_reference = 0.35;
};

namespace detail {

struct PhraseSet {
  std::vector<std::string> before;  // words preceding the entity slot
};

// question phrase variants; "{e}" marks the entity slot
inline const std::vector<std::string>& question_phrases(const Token& pred) {
  static const std::map<Token, std::vector<std::string>> table = {
      {"sender", {"from {e}", "sent by {e}", "written by {e}"}},
      {"recipient", {"to {e}", "sent to {e}", "addressed to {e}"}},
      {"sender_org",
       {"from someone at {e}", "from anybody at {e}", "from people at {e}"}},
      {"recipient_org",
       {"to someone at {e}", "to anybody at {e}", "to people at {e}"}},
      {"about", {"about {e}", "regarding {e}", "concerning {e}", "on {e}"}},
      {"before", {"before {e}", "prior to {e}", "from before {e}"}},
      {"after", {"after {e}", "since {e}", "from after {e}"}},
      {"employer", {"working at {e}", "employed by {e}", "based at {e}"}},
      {"emailed", {"emailing {e}", "writing to {e}", "in contact with {e}"}},
      {"wrote_about",
       {"writing about {e}", "discussing {e}", "posting about {e}"}},
  };
  return table.at(pred);
}

inline const std::vector<std::string>& root_phrases(const Token& root) {
  static const std::vector<std::string> email = {
      "show me emails", "find emails",   "list emails",
      "search for emails", "get me emails", "any emails"};
  static const std::vector<std::string> person = {
      "who is", "who was", "find people", "show me people", "list people"};
  return root == "find_email" ? email : person;
}

inline const std::vector<std::string>& reference_phrases(MentionKind k) {
  static const std::vector<std::string> person = {"him", "her", "them"};
  static const std::vector<std::string> org = {"that company",
                                               "that organization"};
  static const std::vector<std::string> time = {"then", "that time"};
  static const std::vector<std::string> topic = {"that topic",
                                                 "that subject"};
  switch (k) {
    case MentionKind::person: return person;
    case MentionKind::organization: return org;
    case MentionKind::time: return time;
    case MentionKind::topic: return topic;
  }
  throw std::logic_error("bad kind");
}

inline void append_phrase(std::vector<Token>& out, const std::string& phrase,
                          const std::vector<Token>& entity_tokens) {
  for (const Token& t : split_tokens(phrase)) {
    if (t == "{e}")
      out.insert(out.end(), entity_tokens.begin(), entity_tokens.end());
    else
      out.push_back(t);
  }
}

}  // namespace detail

// every surface word any template can produce, used when building the input
// vocabulary so that template words are never OOV
inline std::vector<Token> question_template_lexicon() {
  std::vector<Token> out;
  auto add_phrase = [&](const std::string& p) {
    for (const Token& t : split_tokens(p))
      if (t != "{e}") out.push_back(t);
  };
  for (const PredicateInfo& p : predicate_table())
    for (const auto& ph : detail::question_phrases(p.name)) add_phrase(ph);
  for (const Token& r : lf_roots())
    for (const auto& ph : detail::root_phrases(r)) add_phrase(ph);
  for (int k = 0; k < kNumMentionKinds; ++k)
    for (const auto& ph :
         detail::reference_phrases(static_cast<MentionKind>(k)))
      add_phrase(ph);
  return out;
}

struct GeneratedExample {
  Utterance utterance;
  MentionList mentions;
  LogicalForm gold;
};

inline GeneratedExample generate_example(const World& world,
                                         const QuestionConfig& cfg,
                                         size_t context_size, Rng& rng) {
  Token root = rng.bernoulli(cfg.p_email) ? "find_email" : "find_person";
  std::vector<PredicateInfo> preds = predicates_for_root(root);

  std::vector<double> weights = cfg.clause_weights;
  if (weights.size() > preds.size()) weights.resize(preds.size());
  size_t n_clauses = rng.categorical(weights) + 1;

  rng.shuffle(preds);
  preds.resize(n_clauses);
  std::sort(preds.begin(), preds.end(),
            [](const PredicateInfo& a, const PredicateInfo& b) {
              return predicate_index(a.name) < predicate_index(b.name);
            });

  std::vector<Clause> clauses;
  for (const PredicateInfo& p : preds)
    clauses.push_back({p.name, rng.pick(world.of_kind(p.arg))});

  // keep org filters consistent with the employment facts
  auto find_clause = [&](const Token& pred) -> Clause* {
    for (Clause& c : clauses)
      if (c.pred == pred) return &c;
    return nullptr;
  };
  if (Clause* org = find_clause("sender_org"))
    if (const Clause* s = find_clause("sender"))
      org->entity = world.employer.at(s->entity);
  if (Clause* org = find_clause("recipient_org"))
    if (const Clause* r = find_clause("recipient"))
      org->entity = world.employer.at(r->entity);

  // decide which clause entities are realized as reference phrases; at most
  // one per kind so the referent (first mention of that kind) is unambiguous
  size_t mention_budget = context_size;
  std::array<int, 4> referenced = {-1, -1, -1, -1};
  size_t n_refs = 0;
  for (size_t i = 0; i < clauses.size(); ++i) {
    int kind = static_cast<int>(predicate_info(clauses[i].pred).arg);
    if (referenced[kind] >= 0 || n_refs >= mention_budget) continue;
    if (rng.bernoulli(cfg.p_reference)) {
      referenced[kind] = static_cast<int>(i);
      ++n_refs;
    }
  }

  // mention list: each referent first within its kind, then distractors
  std::array<std::vector<Token>, 4> per_kind;
  size_t n_mentions = std::max(n_refs, mention_budget);
  for (int k = 0; k < kNumMentionKinds; ++k)
    if (referenced[k] >= 0)
      per_kind[k].push_back(clauses[referenced[k]].entity);
  size_t placed = n_refs;
  size_t guard = 0;
  while (placed < n_mentions && guard++ < 200) {
    int k = static_cast<int>(rng.uniform_int(kNumMentionKinds));
    const Token& e = rng.pick(world.of_kind(static_cast<MentionKind>(k)));
    bool dup = false;
    for (const Token& t : per_kind[k])
      if (t == e) dup = true;
    if (dup) continue;
    per_kind[k].push_back(e);
    ++placed;
  }

  GeneratedExample out;
  for (int k = 0; k < kNumMentionKinds; ++k)
    for (const Token& e : per_kind[k])
      out.mentions.mentions.push_back(
          Mention{static_cast<MentionKind>(k), {e}});

  detail::append_phrase(out.utterance.tokens,
                        rng.pick(detail::root_phrases(root)), {});
  for (size_t i = 0; i < clauses.size(); ++i) {
    const Clause& c = clauses[i];
    int kind = static_cast<int>(predicate_info(c.pred).arg);
    std::vector<Token> entity_tokens;
    if (referenced[kind] == static_cast<int>(i))
      entity_tokens = split_tokens(rng.pick(detail::reference_phrases(
          static_cast<MentionKind>(kind))));
    else
      entity_tokens = {c.entity};
    detail::append_phrase(out.utterance.tokens,
                          rng.pick(detail::question_phrases(c.pred)),
                          entity_tokens);
  }

  out.gold = render_lf(ParsedLf{root, clauses});
  return out;
}

}  // namespace nlsup
