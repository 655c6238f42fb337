#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlsup/lf.hpp"
#include "nlsup/params.hpp"
#include "nlsup/parser.hpp"
#include "nlsup/rng.hpp"
#include "nlsup/world.hpp"

namespace nlsup {

struct EvalOptions {
  std::size_t beam_width = 1;
  std::size_t max_parse_len = 24;
};

inline LogicalForm decode_parse(const Parser& parser, const ParamStore& ps,
                                const InteractionRecord& rec, const EvalOptions& opt) {
  if (opt.beam_width < 1) throw std::invalid_argument("decode_parse: beam_width must be >= 1");
  if (opt.beam_width == 1) return parser.greedy(ps, rec, opt.max_parse_len);
  return parser.beam_search(ps, rec, opt.beam_width, opt.max_parse_len).front().lf;
}

inline std::vector<LogicalForm> decode_all(const Parser& parser, const ParamStore& ps,
                                           const std::vector<InteractionRecord>& records,
                                           const EvalOptions& opt) {
  std::vector<LogicalForm> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(decode_parse(parser, ps, rec, opt));
  return out;
}

struct EvalResult {
  double accuracy = 0.0;
  double bracket_validity_rate = 0.0;
  std::size_t records = 0;
};

namespace detail {

inline EvalResult score_decodes(const std::vector<InteractionRecord>& records,
                                const std::vector<LogicalForm>& decoded, const char* where) {
  if (records.empty()) throw std::invalid_argument(std::string(where) + ": empty record set");
  EvalResult out;
  out.records = records.size();
  std::size_t hits = 0, valid = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].gold_lf)
      throw std::invalid_argument(std::string(where) + ": record lacks a gold logical form");
    if (lf_equal(decoded[i], *records[i].gold_lf)) ++hits;
    if (brackets_balanced(decoded[i].tokens)) ++valid;
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(records.size());
  out.bracket_validity_rate = static_cast<double>(valid) / static_cast<double>(records.size());
  return out;
}

}  // namespace detail

// Fraction of records whose decoded parse equals the gold one exactly.
inline EvalResult exact_match_accuracy(const Parser& parser, const ParamStore& ps,
                                       const std::vector<InteractionRecord>& records,
                                       const EvalOptions& opt) {
  std::vector<LogicalForm> decoded = decode_all(parser, ps, records, opt);
  return detail::score_decodes(records, decoded, "exact_match_accuracy");
}

// Order-sensitive digest of a record set, used to assert that a recovery
// evaluation runs on the very records the model trained on.
inline std::uint64_t records_fingerprint(const std::vector<InteractionRecord>& records) {
  std::uint64_t h = hash_string_seed("records");
  for (const auto& r : records) h = derive_seed(h, hash_string_seed(serialize_record(r)));
  return h;
}

// Accuracy of the task parser on the unlabeled records it trained on, the
// "recovered the intended parse" measurement.  The fingerprint must match the
// one taken at training time.
inline EvalResult unlabeled_recovery_accuracy(const Parser& parser, const ParamStore& ps,
                                              const std::vector<InteractionRecord>& used,
                                              std::uint64_t training_fingerprint,
                                              const EvalOptions& opt) {
  if (records_fingerprint(used) != training_fingerprint)
    throw std::invalid_argument(
        "unlabeled_recovery_accuracy: record set does not match the one used in training");
  std::vector<LogicalForm> decoded = decode_all(parser, ps, used, opt);
  return detail::score_decodes(used, decoded, "unlabeled_recovery_accuracy");
}

// Buckets 1, 2, 3 hold one-, two-, and three-or-more-correction records.
inline int correction_bucket(int num_corrections) {
  if (num_corrections < 1) return 0;
  return num_corrections >= 3 ? 3 : num_corrections;
}

struct BucketRow {
  int bucket = 0;
  double accuracy = 0.0;
  double mean_gold_predicates = 0.0;
  std::size_t records = 0;
};

struct Breakdown {
  std::vector<BucketRow> rows;  // ascending bucket, empty buckets omitted
  // affirmation-noise records carry no corrections and sit outside the
  // buckets; they are counted here for the stats sidecar
  std::size_t zero_correction_records = 0;
};

inline Breakdown breakdown_from_decodes(const std::vector<InteractionRecord>& records,
                                        const std::vector<LogicalForm>& decoded) {
  Breakdown out;
  std::map<int, BucketRow> rows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].gold_lf)
      throw std::invalid_argument("breakdown_by_corrections: record lacks a gold logical form");
    int b = correction_bucket(records[i].num_corrections);
    if (b == 0) {
      ++out.zero_correction_records;
      continue;
    }
    BucketRow& row = rows[b];
    row.bucket = b;
    row.records += 1;
    if (lf_equal(decoded[i], *records[i].gold_lf)) row.accuracy += 1.0;
    row.mean_gold_predicates += predicate_count(*records[i].gold_lf);
  }
  for (auto& [b, row] : rows) {
    row.accuracy /= static_cast<double>(row.records);
    row.mean_gold_predicates /= static_cast<double>(row.records);
    out.rows.push_back(row);
  }
  return out;
}

inline Breakdown breakdown_by_corrections(const Parser& parser, const ParamStore& ps,
                                          const std::vector<InteractionRecord>& records,
                                          const EvalOptions& opt) {
  if (records.empty())
    throw std::invalid_argument("breakdown_by_corrections: empty record set");
  return breakdown_from_decodes(records, decode_all(parser, ps, records, opt));
}

}  // namespace nlsup
