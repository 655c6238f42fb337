#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace nlsup {

// Tokens are whitespace-free strings; every sequence type below is a flat
// token vector so parsers can treat them uniformly.
using Token = std::string;

inline bool valid_token(const Token& t) {
  if (t.empty()) return false;
  for (char c : t)
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return false;
  return true;
}

struct Utterance {
  std::vector<Token> tokens;
  bool operator==(const Utterance&) const = default;
};

// A logical form is kept in linearized prefix form, e.g.
//   ( find_email ( sender alice ) ( about budget ) )
// with clauses in a fixed canonical order, so structural equality is just
// token equality.
struct LogicalForm {
  std::vector<Token> tokens;
  bool operator==(const LogicalForm&) const = default;
};

inline bool lf_equal(const LogicalForm& a, const LogicalForm& b) {
  return a.tokens == b.tokens;
}

inline bool brackets_balanced(const std::vector<Token>& toks) {
  long depth = 0;
  for (const Token& t : toks) {
    if (t == "(") ++depth;
    if (t == ")") --depth;
    if (depth < 0) return false;
  }
  return depth == 0;
}

enum class MentionKind { person, organization, time, topic };
constexpr int kNumMentionKinds = 4;

inline const char* mention_kind_name(MentionKind k) {
  switch (k) {
    case MentionKind::person: return "person";
    case MentionKind::organization: return "organization";
    case MentionKind::time: return "time";
    case MentionKind::topic: return "topic";
  }
  return "?";
}

inline MentionKind mention_kind_from_name(const std::string& s) {
  for (int i = 0; i < kNumMentionKinds; ++i) {
    MentionKind k = static_cast<MentionKind>(i);
    if (s == mention_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown mention kind: " + s);
}

struct Mention {
  MentionKind kind;
  std::vector<Token> tokens;
  bool operator==(const Mention&) const = default;
};

// Conversational context entities. serialize() flattens them kind by kind in
// the fixed kind order, wrapping each mention in the boundary symbols [ ].
struct MentionList {
  std::vector<Mention> mentions;
  bool operator==(const MentionList&) const = default;

  bool kind_ordered() const {
    for (size_t i = 1; i < mentions.size(); ++i)
      if (static_cast<int>(mentions[i].kind) <
          static_cast<int>(mentions[i - 1].kind))
        return false;
    return true;
  }

  void sort_by_kind() {
    std::stable_sort(mentions.begin(), mentions.end(),
                     [](const Mention& a, const Mention& b) {
                       return static_cast<int>(a.kind) <
                              static_cast<int>(b.kind);
                     });
  }

  std::vector<Token> serialize() const {
    std::vector<Token> out;
    for (int k = 0; k < kNumMentionKinds; ++k)
      for (const Mention& m : mentions)
        if (static_cast<int>(m.kind) == k) {
          out.push_back("[");
          out.insert(out.end(), m.tokens.begin(), m.tokens.end());
          out.push_back("]");
        }
    return out;
  }
};

// One logged interaction: what the user asked, what the system proposed, what
// the user said about it. gold_lf is present only on splits that carry labels
// for evaluation or seeding.
struct InteractionRecord {
  Utterance utterance;
  MentionList mentions;
  LogicalForm predicted_lf;
  Utterance feedback;
  int num_corrections = 0;
  std::optional<LogicalForm> gold_lf;
};

// Token ids 0..3 are reserved: <s> doubles as the decoder start symbol and
// the end-of-sequence event, <unk> covers out-of-vocabulary generation, and
// [ ] are the mention boundary symbols.
class Vocabulary {
 public:
  static constexpr int kSeq = 0;
  static constexpr int kUnk = 1;
  static constexpr int kOpen = 2;
  static constexpr int kClose = 3;

  static Vocabulary with_reserved() {
    Vocabulary v;
    v.add("<s>");
    v.add("<unk>");
    v.add("[");
    v.add("]");
    return v;
  }

  int add(const Token& t) {
    auto it = index_.find(t);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back(t);
    index_.emplace(t, id);
    return id;
  }

  // -1 when absent
  int find(const Token& t) const {
    auto it = index_.find(t);
    return it == index_.end() ? -1 : it->second;
  }

  // id for t, falling back to <unk>
  int lookup(const Token& t) const {
    int id = find(t);
    return id < 0 ? kUnk : id;
  }

  bool contains(const Token& t) const { return find(t) >= 0; }

  const Token& token(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size()))
      throw std::out_of_range("vocabulary id out of range: " +
                              std::to_string(id));
    return tokens_[id];
  }

  size_t size() const { return tokens_.size(); }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
    for (const Token& t : tokens_) out << t << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (v.contains(line))
        throw std::runtime_error("duplicate vocabulary token '" + line +
                                 "' in " + path);
      v.add(line);
    }
    if (v.size() < 4 || v.token(kSeq) != "<s>" || v.token(kUnk) != "<unk>" ||
        v.token(kOpen) != "[" || v.token(kClose) != "]")
      throw std::runtime_error(
          "vocabulary " + path +
          " must reserve lines 0-3 for <s> <unk> [ ] in that order");
    return v;
  }

 private:
  std::vector<Token> tokens_;
  std::unordered_map<Token, int> index_;
};

namespace detail {

inline std::vector<Token> tokens_from_json(const nlohmann::json& j,
                                           const std::string& field,
                                           size_t line_no) {
  if (!j.is_array())
    throw std::runtime_error("line " + std::to_string(line_no) + ": field '" +
                             field + "' must be an array of tokens");
  std::vector<Token> out;
  for (const auto& e : j) {
    if (!e.is_string() || !valid_token(e.get<std::string>()))
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": field '" + field +
                               "' contains an empty or whitespace token");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline void validate_record(const InteractionRecord& r, size_t line_no = 0) {
  auto fail = [&](const std::string& what) {
    std::string where =
        line_no ? "line " + std::to_string(line_no) + ": " : "";
    throw std::runtime_error(where + "invalid record: " + what);
  };
  if (r.utterance.tokens.empty()) fail("utterance must have at least 1 token");
  if (!brackets_balanced(r.predicted_lf.tokens))
    fail("predicted_lf has unbalanced brackets");
  if (r.gold_lf && !brackets_balanced(r.gold_lf->tokens))
    fail("gold_lf has unbalanced brackets");
  if (r.num_corrections < 0) fail("num_corrections must be >= 0");
  if (!r.mentions.kind_ordered())
    fail("mentions must be ordered person < organization < time < topic");
}

inline std::string serialize_record(const InteractionRecord& r) {
  nlohmann::json j;
  j["utterance"] = r.utterance.tokens;
  nlohmann::json ms = nlohmann::json::array();
  for (const Mention& m : r.mentions.mentions)
    ms.push_back({{"kind", mention_kind_name(m.kind)}, {"tokens", m.tokens}});
  j["mentions"] = ms;
  j["predicted_lf"] = r.predicted_lf.tokens;
  j["feedback"] = r.feedback.tokens;
  j["num_corrections"] = r.num_corrections;
  if (r.gold_lf) j["gold_lf"] = r.gold_lf->tokens;
  return j.dump();
}

inline InteractionRecord parse_record(const std::string& line,
                                      size_t line_no = 0) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("line " + std::to_string(line_no) +
                             ": malformed JSON: " + e.what());
  }
  for (const char* field :
       {"utterance", "mentions", "predicted_lf", "feedback",
        "num_corrections"})
    if (!j.contains(field))
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": missing field '" + field + "'");
  InteractionRecord r;
  r.utterance.tokens = detail::tokens_from_json(j["utterance"], "utterance",
                                                line_no);
  if (!j["mentions"].is_array())
    throw std::runtime_error("line " + std::to_string(line_no) +
                             ": field 'mentions' must be an array");
  for (const auto& m : j["mentions"]) {
    if (!m.is_object() || !m.contains("kind") || !m.contains("tokens"))
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": each mention needs 'kind' and 'tokens'");
    Mention out;
    out.kind = mention_kind_from_name(m["kind"].get<std::string>());
    out.tokens = detail::tokens_from_json(m["tokens"], "mentions", line_no);
    if (out.tokens.empty())
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": mention must have at least 1 token");
    r.mentions.mentions.push_back(out);
  }
  r.predicted_lf.tokens =
      detail::tokens_from_json(j["predicted_lf"], "predicted_lf", line_no);
  r.feedback.tokens = detail::tokens_from_json(j["feedback"], "feedback",
                                               line_no);
  if (!j["num_corrections"].is_number_integer())
    throw std::runtime_error("line " + std::to_string(line_no) +
                             ": num_corrections must be an integer");
  r.num_corrections = j["num_corrections"].get<int>();
  if (j.contains("gold_lf"))
    r.gold_lf = LogicalForm{
        detail::tokens_from_json(j["gold_lf"], "gold_lf", line_no)};
  validate_record(r, line_no);
  return r;
}

inline std::vector<InteractionRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  std::vector<InteractionRecord> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(parse_record(line, line_no));
  }
  return out;
}

inline void save_records(const std::string& path,
                         const std::vector<InteractionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const InteractionRecord& r : records) out << serialize_record(r)
                                                 << "\n";
}

inline std::string join_tokens(const std::vector<Token>& toks) {
  std::string s;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

inline std::vector<Token> split_tokens(const std::string& s) {
  std::vector<Token> out;
  std::istringstream in(s);
  Token t;
  while (in >> t) out.push_back(t);
  return out;
}

}  // namespace nlsup
