#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "critic/corpus.hpp"

namespace critic {

enum class DiscountMode {
  // Paper-style discount per order k: U_{k-1} / (U_{k-1} + 2 U_k) with U the
  // number of unique raw grams.
  UniqueGrams,
  // Textbook count-of-counts n1 / (n1 + 2 n2).
  CountOfCounts,
};

struct KnOptions {
  int order = 5;
  DiscountMode discount = DiscountMode::UniqueGrams;
};

// Interpolated Kneser-Ney model over an arbitrary finite symbol alphabet.
// Grams are packed into 64-bit codes (newest symbol in the low bits) and kept
// in sorted arrays; lower orders use continuation counts derived from the raw
// tables one order up. The unigram base is an undiscounted continuation
// distribution (plain MLE for order-1 models).
class NgramModel {
 public:
  static NgramModel fit(const std::vector<std::vector<std::string>>& sequences,
                        const KnOptions& options);
  // Fit from pre-built top-order windows (each exactly `order` symbols).
  // Lower-order statistics come from window suffixes, which matches the
  // sliding-window view of a padded sequence.
  static NgramModel fit_windows(const std::vector<std::vector<std::string>>& windows,
                                const KnOptions& options);

  int order() const { return order_; }
  DiscountMode discount_mode() const { return options_.discount; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }
  int pad_id() const { return pad_id_; }
  int symbol_id(const std::string& symbol) const;  // raises on unknown symbols
  int find_symbol(const std::string& symbol) const;  // -1 on unknown

  // context must hold exactly order-1 ids (left-padded by the caller).
  double log_prob_ids(std::span<const int> context, int target) const;
  double log_prob(std::span<const std::string> context, const std::string& target) const;
  // Conditional starting at a lower order, as if every level above had backed
  // off; uses the last `at_order - 1` context symbols.
  double log_prob_at_order(int at_order, std::span<const int> context, int target) const;
  bool context_seen(std::span<const int> context) const;
  // Full conditional over the alphabet.
  std::vector<double> conditional(std::span<const int> context) const;
  double discount(int at_order) const;

  std::vector<std::string> sample(int max_len, std::uint64_t seed,
                                  const std::string& stop_symbol = std::string()) const;

  std::string fingerprint() const;

  // Serialization surface: the top-order table determines everything else.
  const std::vector<std::uint64_t>& top_codes() const { return raw_.back().code; }
  const std::vector<std::uint32_t>& top_counts() const { return raw_.back().count; }
  const KnOptions& options() const { return options_; }
  static NgramModel from_top_table(std::vector<std::string> alphabet,
                                   std::vector<std::uint64_t> codes,
                                   std::vector<std::uint32_t> counts, const KnOptions& options);

 private:
  struct GramTable {
    std::vector<std::uint64_t> code;   // sorted unique gram codes
    std::vector<std::uint32_t> count;
    std::vector<std::uint64_t> ctx_code;  // sorted unique context codes
    std::vector<std::uint64_t> ctx_total;
    std::vector<std::uint32_t> ctx_distinct;
    std::uint64_t total = 0;
    double discount = 0.0;

    long long find(std::uint64_t c) const;
    long long find_ctx(std::uint64_t c) const;
    void build_ctx(int bits);
  };

  void build_from_window_codes(std::vector<std::uint64_t> window_codes);
  std::uint64_t encode_suffix(std::span<const int> context, int length) const;
  double base_prob(int target) const;
  const GramTable& level(int k) const;  // k in [2, order]

  int order_ = 0;
  int bits_ = 0;
  KnOptions options_;
  int pad_id_ = 0;
  std::vector<std::string> alphabet_;
  std::unordered_map<std::string, int> index_;
  std::vector<GramTable> raw_;   // raw_[k-1] for k = 1..order
  std::vector<GramTable> cont_;  // cont_[k-1] for k = 1..order-1 (empty for order 1)
};

NgramModel fit_kn(const std::vector<std::vector<std::string>>& sequences,
                  const KnOptions& options);

// Word-level baseline LM over document token streams (including `<s>`).
NgramModel fit_word_lm(const std::vector<Document>& docs, int order,
                       DiscountMode discount = DiscountMode::UniqueGrams);
double ngram_word_perplexity(const NgramModel& model, const std::vector<Document>& docs);

struct NgramDocSampleOptions {
  int num_docs = 0;
  int segments_per_doc = 0;  // stop a document after this many <s> tokens
  int max_tokens = 0;        // hard cap per attempt
  int max_attempts_per_doc = 1000;
  std::uint64_t seed = 0;
  std::string id_prefix = "sample";
};

// Samples token documents from a word LM. When `accept` is given, documents
// failing the predicate are re-drawn (up to max_attempts_per_doc).
std::vector<Document> ngram_sample_docs(const NgramModel& model,
                                        const NgramDocSampleOptions& options,
                                        const std::function<bool(const Document&)>& accept = {});

}  // namespace critic
