#include "critic/ngram.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <set>

#include "critic/errors.hpp"
#include "critic/fingerprint.hpp"
#include "critic/rng.hpp"

namespace critic {

namespace {

constexpr double kMaxDiscount = 1.0 - 1e-9;

std::vector<std::pair<std::uint64_t, std::uint64_t>> aggregate_sorted(
    std::vector<std::pair<std::uint64_t, std::uint64_t>> items) {
  std::sort(items.begin(), items.end());
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  for (const auto& [code, cnt] : items) {
    if (!out.empty() && out.back().first == code)
      out.back().second += cnt;
    else
      out.emplace_back(code, cnt);
  }
  return out;
}

}  // namespace

long long NgramModel::GramTable::find(std::uint64_t c) const {
  auto it = std::lower_bound(code.begin(), code.end(), c);
  if (it == code.end() || *it != c) return -1;
  return it - code.begin();
}

long long NgramModel::GramTable::find_ctx(std::uint64_t c) const {
  auto it = std::lower_bound(ctx_code.begin(), ctx_code.end(), c);
  if (it == ctx_code.end() || *it != c) return -1;
  return it - ctx_code.begin();
}

void NgramModel::GramTable::build_ctx(int bits) {
  ctx_code.clear();
  ctx_total.clear();
  ctx_distinct.clear();
  total = 0;
  for (std::size_t i = 0; i < code.size(); ++i) {
    const std::uint64_t ctx = code[i] >> bits;
    if (ctx_code.empty() || ctx_code.back() != ctx) {
      ctx_code.push_back(ctx);
      ctx_total.push_back(0);
      ctx_distinct.push_back(0);
    }
    ctx_total.back() += count[i];
    ctx_distinct.back() += 1;
    total += count[i];
  }
}

int NgramModel::symbol_id(const std::string& symbol) const {
  const int id = find_symbol(symbol);
  if (id < 0) raise(Errc::Parse, "symbol '" + symbol + "' is not in the model alphabet");
  return id;
}

int NgramModel::find_symbol(const std::string& symbol) const {
  auto it = index_.find(symbol);
  return it == index_.end() ? -1 : it->second;
}

NgramModel NgramModel::fit(const std::vector<std::vector<std::string>>& sequences,
                           const KnOptions& options) {
  if (options.order < 1) raise(Errc::Config, "order must be >= 1");
  bool any = false;
  for (const auto& s : sequences) any = any || !s.empty();
  if (!any) raise(Errc::EmptyTrainingData, "no symbols to fit on");

  std::vector<std::vector<std::string>> windows;
  const int n = options.order;
  for (const auto& seq : sequences)
    for (std::size_t i = 0; i < seq.size(); ++i) {
      std::vector<std::string> w;
      w.reserve(static_cast<std::size_t>(n));
      for (int j = n - 1; j >= 0; --j) {
        const long long pos = static_cast<long long>(i) - j;
        w.push_back(pos < 0 ? std::string(kPad) : seq[static_cast<std::size_t>(pos)]);
      }
      windows.push_back(std::move(w));
    }
  return fit_windows(windows, options);
}

NgramModel NgramModel::fit_windows(const std::vector<std::vector<std::string>>& windows,
                                   const KnOptions& options) {
  if (options.order < 1) raise(Errc::Config, "order must be >= 1");
  if (windows.empty()) raise(Errc::EmptyTrainingData, "no windows to fit on");

  NgramModel m;
  m.order_ = options.order;
  m.options_ = options;

  std::set<std::string> symbols;
  symbols.insert(kPad);
  for (const auto& w : windows) {
    if (static_cast<int>(w.size()) != options.order)
      raise(Errc::Config, "every window must hold exactly `order` symbols");
    for (const auto& s : w) symbols.insert(s);
  }
  m.alphabet_.assign(symbols.begin(), symbols.end());
  for (std::size_t i = 0; i < m.alphabet_.size(); ++i)
    m.index_[m.alphabet_[i]] = static_cast<int>(i);
  m.pad_id_ = m.index_.at(kPad);

  const int V = static_cast<int>(m.alphabet_.size());
  m.bits_ = std::max(1, static_cast<int>(std::bit_width(static_cast<unsigned>(V - 1))));
  if (m.order_ * m.bits_ > 63)
    raise(Errc::Config, "order * log2(alphabet) exceeds the 64-bit gram packing limit");

  std::vector<std::uint64_t> codes;
  codes.reserve(windows.size());
  for (const auto& w : windows) {
    std::uint64_t code = 0;
    for (const auto& s : w)
      code = (code << m.bits_) | static_cast<std::uint64_t>(m.index_.at(s));
    codes.push_back(code);
  }
  m.build_from_window_codes(std::move(codes));
  return m;
}

NgramModel NgramModel::from_top_table(std::vector<std::string> alphabet,
                                      std::vector<std::uint64_t> codes,
                                      std::vector<std::uint32_t> counts,
                                      const KnOptions& options) {
  if (codes.size() != counts.size()) raise(Errc::Parse, "gram code/count size mismatch");
  NgramModel m;
  m.order_ = options.order;
  m.options_ = options;
  m.alphabet_ = std::move(alphabet);
  for (std::size_t i = 0; i < m.alphabet_.size(); ++i)
    m.index_[m.alphabet_[i]] = static_cast<int>(i);
  auto it = m.index_.find(kPad);
  if (it == m.index_.end()) raise(Errc::Parse, "model alphabet is missing the pad symbol");
  m.pad_id_ = it->second;
  const int V = static_cast<int>(m.alphabet_.size());
  m.bits_ = std::max(1, static_cast<int>(std::bit_width(static_cast<unsigned>(V - 1))));
  if (m.order_ * m.bits_ > 63) raise(Errc::Parse, "stored model exceeds gram packing limit");

  std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
  pairs.reserve(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) pairs.emplace_back(codes[i], counts[i]);
  pairs = aggregate_sorted(std::move(pairs));
  GramTable top;
  for (const auto& [c, cnt] : pairs) {
    top.code.push_back(c);
    top.count.push_back(static_cast<std::uint32_t>(cnt));
  }
  m.raw_.assign(static_cast<std::size_t>(m.order_), GramTable{});
  m.raw_.back() = std::move(top);
  m.build_from_window_codes({});
  return m;
}

void NgramModel::build_from_window_codes(std::vector<std::uint64_t> window_codes) {
  const int n = order_;
  if (!window_codes.empty()) {
    std::sort(window_codes.begin(), window_codes.end());
    GramTable top;
    for (std::uint64_t c : window_codes) {
      if (!top.code.empty() && top.code.back() == c)
        ++top.count.back();
      else {
        top.code.push_back(c);
        top.count.push_back(1);
      }
    }
    raw_.assign(static_cast<std::size_t>(n), GramTable{});
    raw_.back() = std::move(top);
  }

  const auto mask = [&](int k) {
    return (k * bits_ >= 64) ? ~0ull : ((1ull << (k * bits_)) - 1);
  };
  // Raw suffix counts for lower orders.
  for (int k = n - 1; k >= 1; --k) {
    const GramTable& upper = raw_[static_cast<std::size_t>(k)];
    std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
    pairs.reserve(upper.code.size());
    for (std::size_t i = 0; i < upper.code.size(); ++i)
      pairs.emplace_back(upper.code[i] & mask(k), upper.count[i]);
    pairs = aggregate_sorted(std::move(pairs));
    GramTable& t = raw_[static_cast<std::size_t>(k - 1)];
    t = GramTable{};
    for (const auto& [c, cnt] : pairs) {
      t.code.push_back(c);
      t.count.push_back(static_cast<std::uint32_t>(cnt));
    }
  }
  // Continuation counts: number of distinct one-symbol extensions to the left,
  // read off the raw table one order up.
  cont_.assign(static_cast<std::size_t>(std::max(0, n - 1)), GramTable{});
  for (int k = 1; k <= n - 1; ++k) {
    const GramTable& upper = raw_[static_cast<std::size_t>(k)];
    std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
    pairs.reserve(upper.code.size());
    for (std::size_t i = 0; i < upper.code.size(); ++i)
      pairs.emplace_back(upper.code[i] & mask(k), 1ull);
    pairs = aggregate_sorted(std::move(pairs));
    GramTable& t = cont_[static_cast<std::size_t>(k - 1)];
    for (const auto& [c, cnt] : pairs) {
      t.code.push_back(c);
      t.count.push_back(static_cast<std::uint32_t>(cnt));
    }
  }
  for (auto& t : raw_) t.build_ctx(bits_);
  for (auto& t : cont_) t.build_ctx(bits_);

  // Per-order discounts (the unigram base stays undiscounted).
  for (int k = 2; k <= n; ++k) {
    double d = 0.0;
    if (options_.discount == DiscountMode::UniqueGrams) {
      const double unique_lower = static_cast<double>(raw_[static_cast<std::size_t>(k - 2)].code.size());
      const double unique_here = static_cast<double>(raw_[static_cast<std::size_t>(k - 1)].code.size());
      d = unique_lower / (unique_lower + 2.0 * unique_here);
    } else {
      const GramTable& t = (k == n) ? raw_[static_cast<std::size_t>(k - 1)] : cont_[static_cast<std::size_t>(k - 1)];
      double n1 = 0.0;
      double n2 = 0.0;
      for (std::uint32_t c : t.count) {
        if (c == 1) n1 += 1.0;
        if (c == 2) n2 += 1.0;
      }
      d = n1 > 0.0 ? n1 / (n1 + 2.0 * n2) : 0.0;
    }
    d = std::clamp(d, 0.0, kMaxDiscount);
    if (k == n)
      raw_[static_cast<std::size_t>(k - 1)].discount = d;
    else
      cont_[static_cast<std::size_t>(k - 1)].discount = d;
  }
}

const NgramModel::GramTable& NgramModel::level(int k) const {
  return k == order_ ? raw_[static_cast<std::size_t>(k - 1)] : cont_[static_cast<std::size_t>(k - 1)];
}

double NgramModel::discount(int at_order) const {
  if (at_order < 2 || at_order > order_) return 0.0;
  return level(at_order).discount;
}

std::uint64_t NgramModel::encode_suffix(std::span<const int> context, int length) const {
  std::uint64_t code = 0;
  for (int j = length; j >= 1; --j)
    code = (code << bits_) | static_cast<std::uint64_t>(context[context.size() - static_cast<std::size_t>(j)]);
  return code;
}

double NgramModel::base_prob(int target) const {
  const GramTable& base = order_ == 1 ? raw_[0] : cont_[0];
  if (base.total == 0) return 0.0;
  const long long idx = base.find(static_cast<std::uint64_t>(target));
  const double c = idx < 0 ? 0.0 : static_cast<double>(base.count[static_cast<std::size_t>(idx)]);
  return c / static_cast<double>(base.total);
}

double NgramModel::log_prob_at_order(int at_order, std::span<const int> context, int target) const {
  if (at_order < 1 || at_order > order_) raise(Errc::Config, "invalid backoff order");
  if (static_cast<int>(context.size()) < at_order - 1)
    raise(Errc::Config, "context shorter than order-1");
  double prob = 0.0;
  double weight = 1.0;
  for (int k = at_order; k >= 2; --k) {
    const GramTable& t = level(k);
    const std::uint64_t ctx = encode_suffix(context, k - 1);
    const long long ci = t.find_ctx(ctx);
    if (ci < 0) continue;  // unseen context: pass through
    const double total = static_cast<double>(t.ctx_total[static_cast<std::size_t>(ci)]);
    const double d = t.discount;
    const long long gi = t.find((ctx << bits_) | static_cast<std::uint64_t>(target));
    if (gi >= 0)
      prob += weight * std::max(static_cast<double>(t.count[static_cast<std::size_t>(gi)]) - d, 0.0) / total;
    weight *= d * static_cast<double>(t.ctx_distinct[static_cast<std::size_t>(ci)]) / total;
  }
  prob += weight * base_prob(target);
  return std::log(prob);
}

double NgramModel::log_prob_ids(std::span<const int> context, int target) const {
  if (static_cast<int>(context.size()) != order_ - 1)
    raise(Errc::Config, "context must hold exactly order-1 symbols");
  return log_prob_at_order(order_, context, target);
}

double NgramModel::log_prob(std::span<const std::string> context, const std::string& target) const {
  std::vector<int> ids;
  ids.reserve(context.size());
  for (const auto& s : context) ids.push_back(symbol_id(s));
  return log_prob_ids(ids, symbol_id(target));
}

bool NgramModel::context_seen(std::span<const int> context) const {
  if (order_ == 1) return true;
  const GramTable& t = level(order_);
  return t.find_ctx(encode_suffix(context, order_ - 1)) >= 0;
}

std::vector<double> NgramModel::conditional(std::span<const int> context) const {
  const int V = static_cast<int>(alphabet_.size());
  std::vector<double> cond(static_cast<std::size_t>(V), 0.0);
  double weight = 1.0;
  for (int k = order_; k >= 2; --k) {
    const GramTable& t = level(k);
    const std::uint64_t ctx = encode_suffix(context, k - 1);
    const long long ci = t.find_ctx(ctx);
    if (ci < 0) continue;
    const double total = static_cast<double>(t.ctx_total[static_cast<std::size_t>(ci)]);
    const double d = t.discount;
    auto it = std::lower_bound(t.code.begin(), t.code.end(), ctx << bits_);
    const std::uint64_t sym_mask = (1ull << bits_) - 1;
    for (; it != t.code.end() && (*it >> bits_) == ctx; ++it) {
      const std::size_t idx = static_cast<std::size_t>(it - t.code.begin());
      const int w = static_cast<int>(*it & sym_mask);
      cond[static_cast<std::size_t>(w)] +=
          weight * std::max(static_cast<double>(t.count[idx]) - d, 0.0) / total;
    }
    weight *= d * static_cast<double>(t.ctx_distinct[static_cast<std::size_t>(ci)]) / total;
  }
  for (int w = 0; w < V; ++w) cond[static_cast<std::size_t>(w)] += weight * base_prob(w);
  return cond;
}

std::vector<std::string> NgramModel::sample(int max_len, std::uint64_t seed,
                                            const std::string& stop_symbol) const {
  if (max_len < 1) raise(Errc::Config, "max_len must be >= 1");
  const int stop_id = stop_symbol.empty() ? -1 : symbol_id(stop_symbol);
  Rng rng(seed);
  std::vector<int> context(static_cast<std::size_t>(std::max(0, order_ - 1)), pad_id_);
  std::vector<std::string> out;
  for (int i = 0; i < max_len; ++i) {
    const auto cond = conditional(context);
    const int draw = rng.categorical(cond);
    out.push_back(alphabet_[static_cast<std::size_t>(draw)]);
    if (!context.empty()) {
      context.erase(context.begin());
      context.push_back(draw);
    }
    if (draw == stop_id) break;
  }
  return out;
}

std::string NgramModel::fingerprint() const {
  Fingerprint fp;
  fp.add(std::string("kn-ngram"));
  fp.add(order_).add(static_cast<int>(options_.discount));
  fp.add(alphabet_);
  fp.add(raw_.back().code).add(static_cast<std::uint64_t>(raw_.back().total));
  for (std::uint32_t c : raw_.back().count) fp.add(static_cast<std::uint64_t>(c));
  return fp.hex();
}

NgramModel fit_kn(const std::vector<std::vector<std::string>>& sequences,
                  const KnOptions& options) {
  return NgramModel::fit(sequences, options);
}

NgramModel fit_word_lm(const std::vector<Document>& docs, int order, DiscountMode discount) {
  std::vector<std::vector<std::string>> sequences;
  sequences.reserve(docs.size());
  for (const auto& doc : docs) {
    std::vector<std::string> seq;
    for (const auto& sec : doc.sections)
      seq.insert(seq.end(), sec.tokens.begin(), sec.tokens.end());
    sequences.push_back(std::move(seq));
  }
  KnOptions options;
  options.order = order;
  options.discount = discount;
  return NgramModel::fit(sequences, options);
}

double ngram_word_perplexity(const NgramModel& model, const std::vector<Document>& docs) {
  if (docs.empty()) raise(Errc::EmptyInput, "perplexity over an empty corpus");
  double total_ll = 0.0;
  std::size_t total_tokens = 0;
  const int ctx_len = model.order() - 1;
  for (const auto& doc : docs) {
    std::vector<int> context(static_cast<std::size_t>(ctx_len), model.pad_id());
    for (const auto& sec : doc.sections)
      for (const auto& tok : sec.tokens) {
        const int id = model.symbol_id(tok);
        total_ll += model.log_prob_ids(context, id);
        ++total_tokens;
        if (ctx_len > 0) {
          context.erase(context.begin());
          context.push_back(id);
        }
      }
  }
  if (total_tokens == 0) raise(Errc::EmptyInput, "corpus has no tokens");
  return std::exp(-total_ll / static_cast<double>(total_tokens));
}

std::vector<Document> ngram_sample_docs(const NgramModel& model,
                                        const NgramDocSampleOptions& options,
                                        const std::function<bool(const Document&)>& accept) {
  if (options.num_docs < 1) raise(Errc::Config, "num_docs must be >= 1");
  if (options.max_tokens < 1) raise(Errc::Config, "max_tokens must be >= 1");
  Rng root(options.seed);
  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(options.num_docs));
  const int ctx_len = model.order() - 1;
  const int seg_end = model.find_symbol(kSegmentEnd);
  for (int d = 0; d < options.num_docs; ++d) {
    Rng rng = root.fork(static_cast<std::uint64_t>(d) + 1);
    bool accepted = false;
    for (int attempt = 0; attempt < options.max_attempts_per_doc && !accepted; ++attempt) {
      Document doc;
      doc.id = options.id_prefix + "-" + std::to_string(d);
      Section sec;
      std::vector<int> context(static_cast<std::size_t>(ctx_len), model.pad_id());
      int segments = 0;
      for (int i = 0; i < options.max_tokens; ++i) {
        const auto cond = model.conditional(context);
        const int draw = rng.categorical(cond);
        sec.tokens.push_back(model.alphabet()[static_cast<std::size_t>(draw)]);
        if (ctx_len > 0) {
          context.erase(context.begin());
          context.push_back(draw);
        }
        if (draw == seg_end) {
          ++segments;
          if (options.segments_per_doc > 0 && segments >= options.segments_per_doc) break;
        }
      }
      doc.sections.push_back(std::move(sec));
      if (options.segments_per_doc > 0 && segments < options.segments_per_doc) continue;
      if (accept && !accept(doc)) continue;
      docs.push_back(std::move(doc));
      accepted = true;
    }
    if (!accepted)
      raise(Errc::Numeric, "could not sample an acceptable document after " +
                               std::to_string(options.max_attempts_per_doc) + " attempts");
  }
  return docs;
}

}  // namespace critic
