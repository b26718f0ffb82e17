#include "critic/hsmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "critic/errors.hpp"
#include "critic/fingerprint.hpp"
#include "critic/rng.hpp"

namespace critic {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Linear-space tables with per-step rescaling; avoids exp/log in the inner
// forward-backward loops.
struct HsmmTables {
  int K = 0;
  bool has_end = false;
  std::vector<double> initial;  // K
  std::vector<double> trans;    // K*K
  std::vector<double> fin;      // K (1.0 everywhere when no end state)
  std::vector<double> emis;     // S*K

  explicit HsmmTables(const Hsmm& m) : K(m.num_states), has_end(m.uses_end_state) {
    initial.resize(K);
    for (int k = 0; k < K; ++k) initial[k] = std::exp(m.log_initial[k]);
    trans.resize(static_cast<std::size_t>(K) * K);
    for (std::size_t i = 0; i < trans.size(); ++i) trans[i] = std::exp(m.log_transition[i]);
    fin.assign(K, 1.0);
    if (has_end)
      for (int k = 0; k < K; ++k) fin[k] = std::exp(m.log_final[k]);
    emis.resize(m.log_emission.size());
    for (std::size_t i = 0; i < emis.size(); ++i) emis[i] = std::exp(m.log_emission[i]);
  }
  double e(int seg, int k) const { return emis[static_cast<std::size_t>(seg) * K + k]; }
};

std::vector<int> doc_segment_ids(const Hsmm& model, const Document& doc) {
  std::vector<int> ids;
  for (const auto& key : segment_keys(doc)) ids.push_back(model.segment_id(key));
  return ids;
}

// Scaled forward pass. alpha[m][k] holds P(z_m=k | s_1..s_m); log_scale
// accumulates log P(s_1..s_m, s_{m+1} structure...) so that the total
// log marginal is log_scale + log(sum_k alpha[M-1][k] * fin[k]).
struct ForwardResult {
  std::vector<std::vector<double>> alpha;
  double log_marginal = kNegInf;
};

ForwardResult forward(const HsmmTables& t, const std::vector<int>& segs) {
  const int K = t.K;
  const int M = static_cast<int>(segs.size());
  ForwardResult r;
  r.alpha.assign(M, std::vector<double>(K, 0.0));
  double log_scale = 0.0;
  for (int m = 0; m < M; ++m) {
    auto& a = r.alpha[static_cast<std::size_t>(m)];
    if (m == 0) {
      for (int k = 0; k < K; ++k) a[k] = t.initial[k] * t.e(segs[0], k);
    } else {
      const auto& prev = r.alpha[static_cast<std::size_t>(m - 1)];
      for (int k = 0; k < K; ++k) {
        double s = 0.0;
        for (int i = 0; i < K; ++i) s += prev[i] * t.trans[static_cast<std::size_t>(i) * K + k];
        a[k] = s * t.e(segs[static_cast<std::size_t>(m)], k);
      }
    }
    double norm = 0.0;
    for (int k = 0; k < K; ++k) norm += a[k];
    if (norm <= 0.0) {
      r.log_marginal = kNegInf;
      return r;
    }
    for (int k = 0; k < K; ++k) a[k] /= norm;
    log_scale += std::log(norm);
  }
  double tail = 0.0;
  for (int k = 0; k < K; ++k) tail += r.alpha[static_cast<std::size_t>(M - 1)][k] * t.fin[k];
  r.log_marginal = tail > 0.0 ? log_scale + std::log(tail) : kNegInf;
  return r;
}

// Scaled backward pass, normalized per step; suitable for posterior moments.
std::vector<std::vector<double>> backward(const HsmmTables& t, const std::vector<int>& segs) {
  const int K = t.K;
  const int M = static_cast<int>(segs.size());
  std::vector<std::vector<double>> beta(M, std::vector<double>(K, 0.0));
  for (int k = 0; k < K; ++k) beta[static_cast<std::size_t>(M - 1)][k] = t.fin[k];
  for (int m = M - 2; m >= 0; --m) {
    const auto& next = beta[static_cast<std::size_t>(m + 1)];
    auto& b = beta[static_cast<std::size_t>(m)];
    double norm = 0.0;
    for (int i = 0; i < K; ++i) {
      double s = 0.0;
      for (int k = 0; k < K; ++k)
        s += t.trans[static_cast<std::size_t>(i) * K + k] * t.e(segs[static_cast<std::size_t>(m + 1)], k) * next[k];
      b[i] = s;
      norm += s;
    }
    if (norm <= 0.0) raise(Errc::Numeric, "backward pass underflowed");
    for (int i = 0; i < K; ++i) b[i] /= norm;
  }
  // Normalize the last slice too, to keep magnitudes tame.
  double norm = 0.0;
  for (int k = 0; k < K; ++k) norm += beta[static_cast<std::size_t>(M - 1)][k];
  if (norm > 0.0)
    for (int k = 0; k < K; ++k) beta[static_cast<std::size_t>(M - 1)][k] /= norm;
  return beta;
}

std::vector<int> viterbi(const Hsmm& model, const std::vector<int>& segs) {
  const int K = model.num_states;
  const int M = static_cast<int>(segs.size());
  std::vector<std::vector<double>> delta(M, std::vector<double>(K, kNegInf));
  std::vector<std::vector<int>> back(M, std::vector<int>(K, -1));
  for (int k = 0; k < K; ++k) delta[0][static_cast<std::size_t>(k)] = model.log_initial[k] + model.emit(segs[0], k);
  for (int m = 1; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      double best = kNegInf;
      int arg = -1;
      for (int i = 0; i < K; ++i) {
        const double v = delta[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)] + model.trans(i, k);
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      delta[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] =
          best + model.emit(segs[static_cast<std::size_t>(m)], k);
      back[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = arg;
    }
  double best = kNegInf;
  int arg = -1;
  for (int k = 0; k < K; ++k) {
    double v = delta[static_cast<std::size_t>(M - 1)][static_cast<std::size_t>(k)];
    if (model.uses_end_state) v += model.log_final[static_cast<std::size_t>(k)];
    if (v > best) {
      best = v;
      arg = k;
    }
  }
  if (arg < 0) raise(Errc::Numeric, "document has zero probability under every state path");
  std::vector<int> path(static_cast<std::size_t>(M));
  path[static_cast<std::size_t>(M - 1)] = arg;
  for (int m = M - 1; m > 0; --m)
    path[static_cast<std::size_t>(m - 1)] = back[static_cast<std::size_t>(m)][static_cast<std::size_t>(path[static_cast<std::size_t>(m)])];
  return path;
}

std::vector<double> path_nll(const Hsmm& model, const std::vector<int>& path) {
  std::vector<double> nll;
  nll.reserve(path.size() + 1);
  nll.push_back(-model.log_initial[static_cast<std::size_t>(path[0])]);
  for (std::size_t m = 1; m < path.size(); ++m)
    nll.push_back(-model.trans(path[m - 1], path[m]));
  if (model.uses_end_state) nll.push_back(-model.log_final[static_cast<std::size_t>(path.back())]);
  return nll;
}

std::vector<int> sample_path(const HsmmTables& t, const std::vector<std::vector<double>>& alpha,
                             Rng& rng) {
  const int K = t.K;
  const int M = static_cast<int>(alpha.size());
  std::vector<int> path(static_cast<std::size_t>(M));
  std::vector<double> w(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) w[static_cast<std::size_t>(k)] = alpha[static_cast<std::size_t>(M - 1)][static_cast<std::size_t>(k)] * t.fin[static_cast<std::size_t>(k)];
  path[static_cast<std::size_t>(M - 1)] = rng.categorical(w);
  for (int m = M - 2; m >= 0; --m) {
    const int nxt = path[static_cast<std::size_t>(m + 1)];
    for (int i = 0; i < K; ++i)
      w[static_cast<std::size_t>(i)] = alpha[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)] * t.trans[static_cast<std::size_t>(i) * K + nxt];
    path[static_cast<std::size_t>(m)] = rng.categorical(w);
  }
  return path;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace

int Hsmm::segment_id(const std::string& key) const {
  auto it = segment_index.find(key);
  if (it == segment_index.end())
    raise(Errc::UnknownSegment, "segment not in emission support: '" + key + "'");
  return it->second;
}

bool Hsmm::delta_posterior() const {
  for (std::size_t s = 0; s < segments.size(); ++s) {
    int finite = 0;
    for (int k = 0; k < num_states; ++k)
      if (std::isfinite(emit(static_cast<int>(s), k))) ++finite;
    if (finite != 1) return false;
  }
  return !segments.empty();
}

void Hsmm::rebuild_index() {
  segment_index.clear();
  for (std::size_t s = 0; s < segments.size(); ++s)
    segment_index.emplace(segments[s], static_cast<int>(s));
}

std::string Hsmm::fingerprint() const {
  Fingerprint fp;
  fp.add(std::string("hsmm"));
  fp.add(num_states).add(uses_end_state);
  fp.add(log_initial).add(log_transition).add(log_final);
  fp.add(segments).add(log_emission);
  return fp.hex();
}

SyntheticData generate_synthetic(const SyntheticConfig& config) {
  const int K = config.num_states;
  const int S = config.num_segment_types;
  const int A = config.alphabet_size - 1;  // content symbols, excluding <s>
  if (K < 1 || S < K) raise(Errc::Config, "need num_segment_types >= num_states >= 1");
  if (config.segment_len_min < 1 || config.segment_len_max < config.segment_len_min)
    raise(Errc::Config, "invalid segment length range");
  if (A < 1) raise(Errc::Config, "alphabet must contain at least one symbol besides <s>");
  if (config.segments_per_seq < 1) raise(Errc::Config, "segments_per_seq must be >= 1");

  // Count the distinct keys available (saturating) to keep rejection sampling
  // guaranteed to finish.
  double possible = 0.0;
  for (int len = config.segment_len_min; len <= config.segment_len_max; ++len)
    possible += std::pow(static_cast<double>(A), len - 1);
  if (static_cast<double>(S) > possible)
    raise(Errc::Config, "num_segment_types exceeds the number of distinct segments");

  std::vector<std::string> alphabet;
  static const char* kLetters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
  for (int i = 0; i < A; ++i) {
    if (i < 52)
      alphabet.emplace_back(1, kLetters[i]);
    else
      alphabet.push_back("t" + std::to_string(i));
  }

  Rng root(config.seed);

  // Segment inventory: distinct keys, uniform length, uniform tokens.
  Rng seg_rng = root.fork(1);
  std::set<std::string> inventory;
  while (static_cast<int>(inventory.size()) < S) {
    const int len = config.segment_len_min +
                    static_cast<int>(seg_rng.uniform_int(
                        static_cast<std::uint64_t>(config.segment_len_max - config.segment_len_min + 1)));
    std::string key;
    for (int i = 0; i + 1 < len; ++i) {
      key += alphabet[seg_rng.uniform_int(static_cast<std::uint64_t>(A))];
      key += ' ';
    }
    key += kSegmentEnd;
    inventory.insert(std::move(key));
  }

  Hsmm truth;
  truth.num_states = K;
  truth.uses_end_state = false;
  truth.segments.assign(inventory.begin(), inventory.end());
  truth.rebuild_index();

  // Each segment is produced by exactly one uniformly drawn state; redraw the
  // whole assignment until no state is left without a segment.
  Rng assign_rng = root.fork(2);
  std::vector<int> assigned(truth.segments.size());
  for (;;) {
    std::vector<int> occupancy(static_cast<std::size_t>(K), 0);
    for (auto& a : assigned) {
      a = static_cast<int>(assign_rng.uniform_int(static_cast<std::uint64_t>(K)));
      ++occupancy[static_cast<std::size_t>(a)];
    }
    if (std::all_of(occupancy.begin(), occupancy.end(), [](int c) { return c > 0; })) break;
  }

  Rng trans_rng = root.fork(3);
  auto draw_row = [&](double temperature) {
    std::vector<double> logits(static_cast<std::size_t>(K));
    for (auto& v : logits) v = trans_rng.normal() / temperature;
    return log_softmax(logits);
  };
  truth.log_initial = draw_row(config.transition_temperature);
  truth.log_transition.resize(static_cast<std::size_t>(K) * K);
  for (int i = 0; i < K; ++i) {
    auto row = draw_row(config.transition_temperature);
    std::copy(row.begin(), row.end(), truth.log_transition.begin() + static_cast<std::size_t>(i) * K);
  }

  Rng emis_rng = root.fork(4);
  truth.log_emission.assign(truth.segments.size() * static_cast<std::size_t>(K), kNegInf);
  std::vector<std::vector<int>> state_segments(static_cast<std::size_t>(K));
  for (std::size_t s = 0; s < assigned.size(); ++s)
    state_segments[static_cast<std::size_t>(assigned[s])].push_back(static_cast<int>(s));
  for (int k = 0; k < K; ++k) {
    std::vector<double> logits(state_segments[static_cast<std::size_t>(k)].size());
    for (auto& v : logits) v = emis_rng.normal() / config.emission_temperature;
    const auto logp = log_softmax(logits);
    for (std::size_t j = 0; j < logp.size(); ++j) {
      const int seg = state_segments[static_cast<std::size_t>(k)][j];
      truth.log_emission[static_cast<std::size_t>(seg) * K + k] = logp[j];
    }
  }

  SyntheticData data;
  data.truth = truth;
  const HsmmTables tables(truth);

  // Per-state segment samplers.
  std::vector<std::vector<double>> seg_probs(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    auto& probs = seg_probs[static_cast<std::size_t>(k)];
    probs.resize(state_segments[static_cast<std::size_t>(k)].size());
    for (std::size_t j = 0; j < probs.size(); ++j)
      probs[j] = std::exp(truth.emit(state_segments[static_cast<std::size_t>(k)][j], k));
  }

  auto generate_split = [&](int count, const std::string& name, std::uint64_t stream) {
    Rng rng = root.fork(stream);
    std::vector<Document> docs;
    docs.reserve(static_cast<std::size_t>(count));
    for (int d = 0; d < count; ++d) {
      Document doc;
      doc.id = name + "-" + std::to_string(d);
      Section sec;
      int state = -1;
      for (int m = 0; m < config.segments_per_seq; ++m) {
        if (m == 0)
          state = rng.categorical(tables.initial);
        else {
          std::vector<double> row(tables.trans.begin() + static_cast<std::size_t>(state) * K,
                                  tables.trans.begin() + (static_cast<std::size_t>(state) + 1) * K);
          state = rng.categorical(row);
        }
        const auto& candidates = state_segments[static_cast<std::size_t>(state)];
        const int seg = candidates[static_cast<std::size_t>(rng.categorical(seg_probs[static_cast<std::size_t>(state)]))];
        std::istringstream toks(truth.segments[static_cast<std::size_t>(seg)]);
        std::string tok;
        while (toks >> tok) sec.tokens.push_back(tok);
      }
      doc.sections.push_back(std::move(sec));
      docs.push_back(std::move(doc));
    }
    return docs;
  };
  data.train = generate_split(config.train_size, "train", 10);
  data.val = generate_split(config.val_size, "val", 11);
  data.test = generate_split(config.test_size, "test", 12);
  return data;
}

StatePosterior segment_posterior(const Hsmm& model, const Document& doc) {
  const auto segs = doc_segment_ids(model, doc);
  StatePosterior post;
  if (model.delta_posterior()) {
    post.delta = true;
    post.map_path.reserve(segs.size());
    post.marginals.assign(segs.size(), std::vector<double>(static_cast<std::size_t>(model.num_states), 0.0));
    for (std::size_t m = 0; m < segs.size(); ++m) {
      int state = -1;
      for (int k = 0; k < model.num_states; ++k)
        if (std::isfinite(model.emit(segs[m], k))) state = k;
      post.map_path.push_back(state);
      post.marginals[m][static_cast<std::size_t>(state)] = 1.0;
    }
    return post;
  }
  const HsmmTables tables(model);
  auto fwd = forward(tables, segs);
  if (!std::isfinite(fwd.log_marginal))
    raise(Errc::Numeric, "document '" + doc.id + "' has zero probability under the model");
  const auto beta = backward(tables, segs);
  post.marginals.assign(segs.size(), std::vector<double>(static_cast<std::size_t>(model.num_states), 0.0));
  for (std::size_t m = 0; m < segs.size(); ++m) {
    double norm = 0.0;
    for (int k = 0; k < model.num_states; ++k) {
      const double v = fwd.alpha[m][static_cast<std::size_t>(k)] * beta[m][static_cast<std::size_t>(k)];
      post.marginals[m][static_cast<std::size_t>(k)] = v;
      norm += v;
    }
    for (auto& v : post.marginals[m]) v /= norm;
  }
  post.map_path = viterbi(model, segs);
  return post;
}

double log_marginal(const Hsmm& model, const Document& doc) {
  const auto segs = doc_segment_ids(model, doc);
  const HsmmTables tables(model);
  return forward(tables, segs).log_marginal;
}

LatentProjection hsmm_project(const Hsmm& model, const Document& doc, ProjectionMode mode,
                              std::uint64_t seed) {
  const auto segs = doc_segment_ids(model, doc);
  LatentProjection proj;
  proj.mode = mode;
  proj.kind = LatentKind::Discrete;

  const bool delta = model.delta_posterior();
  if (mode.kind == ProjectionMode::Kind::MapEstimate || delta) {
    std::vector<int> path;
    if (delta) {
      path.reserve(segs.size());
      for (int seg : segs) {
        int state = -1;
        for (int k = 0; k < model.num_states; ++k)
          if (std::isfinite(model.emit(seg, k))) state = k;
        path.push_back(state);
      }
    } else {
      path = viterbi(model, segs);
    }
    proj.per_position_nll = path_nll(model, path);
  } else {
    if (mode.num_samples < 1) raise(Errc::Config, "MonteCarlo mode needs num_samples >= 1");
    const HsmmTables tables(model);
    auto fwd = forward(tables, segs);
    if (!std::isfinite(fwd.log_marginal))
      raise(Errc::Numeric, "document '" + doc.id + "' has zero probability under the model");
    Rng rng(seed);
    const std::size_t positions = segs.size() + (model.uses_end_state ? 1 : 0);
    proj.per_position_nll.assign(positions, 0.0);
    for (int s = 0; s < mode.num_samples; ++s) {
      const auto path = sample_path(tables, fwd.alpha, rng);
      const auto nll = path_nll(model, path);
      for (std::size_t i = 0; i < nll.size(); ++i) proj.per_position_nll[i] += nll[i];
    }
    for (auto& v : proj.per_position_nll) v /= mode.num_samples;
  }
  proj.num_positions = static_cast<int>(proj.per_position_nll.size());
  return proj;
}

Decomposition hsmm_decompose(const Hsmm& model, const Document& doc) {
  const auto segs = doc_segment_ids(model, doc);
  const HsmmTables tables(model);
  const int K = model.num_states;
  const int M = static_cast<int>(segs.size());
  auto fwd = forward(tables, segs);
  if (!std::isfinite(fwd.log_marginal))
    raise(Errc::Numeric, "document '" + doc.id + "' has zero probability under the model");
  const auto beta = backward(tables, segs);

  // Unary posteriors.
  std::vector<std::vector<double>> gamma(static_cast<std::size_t>(M),
                                         std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (int m = 0; m < M; ++m) {
    double norm = 0.0;
    for (int k = 0; k < K; ++k) {
      const double v = fwd.alpha[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] *
                       beta[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
      gamma[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = v;
      norm += v;
    }
    for (auto& v : gamma[static_cast<std::size_t>(m)]) v /= norm;
  }

  Decomposition d;
  d.log_marginal = fwd.log_marginal;
  for (int k = 0; k < K; ++k) {
    const double g = gamma[0][static_cast<std::size_t>(k)];
    if (g <= 0.0) continue;
    d.prior_term += g * model.log_initial[static_cast<std::size_t>(k)];
    d.posterior_entropy -= g * std::log(g);
  }
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      const double g = gamma[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
      if (g > 0.0) d.reconstruction_term += g * model.emit(segs[static_cast<std::size_t>(m)], k);
    }
  // Pairwise posteriors, normalized per step.
  for (int m = 1; m < M; ++m) {
    std::vector<double> xi(static_cast<std::size_t>(K) * K, 0.0);
    double norm = 0.0;
    for (int i = 0; i < K; ++i) {
      const double a = fwd.alpha[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)];
      if (a <= 0.0) continue;
      for (int k = 0; k < K; ++k) {
        const double v = a * tables.trans[static_cast<std::size_t>(i) * K + k] *
                         tables.e(segs[static_cast<std::size_t>(m)], k) *
                         beta[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
        xi[static_cast<std::size_t>(i) * K + k] = v;
        norm += v;
      }
    }
    for (int i = 0; i < K; ++i)
      for (int k = 0; k < K; ++k) {
        const double p = xi[static_cast<std::size_t>(i) * K + k] / norm;
        if (p <= 0.0) continue;
        d.prior_term += p * model.trans(i, k);
        // H(z_m | z_{m-1}) contribution: -p log(p / gamma_{m-1}(i)).
        d.posterior_entropy -= p * std::log(p / gamma[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)]);
      }
  }
  if (model.uses_end_state)
    for (int k = 0; k < K; ++k) {
      const double g = gamma[static_cast<std::size_t>(M - 1)][static_cast<std::size_t>(k)];
      if (g > 0.0) d.prior_term += g * model.log_final[static_cast<std::size_t>(k)];
    }
  return d;
}

double hsmm_word_perplexity(const Hsmm& model, const std::vector<Document>& docs) {
  if (docs.empty()) raise(Errc::EmptyInput, "perplexity over an empty corpus");
  const HsmmTables tables(model);
  double total_ll = 0.0;
  std::size_t total_tokens = 0;
  for (const auto& doc : docs) {
    const auto segs = doc_segment_ids(model, doc);
    const double lm = forward(tables, segs).log_marginal;
    if (!std::isfinite(lm))
      raise(Errc::Numeric, "document '" + doc.id + "' has zero probability under the model");
    total_ll += lm;
    total_tokens += doc.num_tokens();
  }
  return std::exp(-total_ll / static_cast<double>(total_tokens));
}

FitHsmmResult fit_hsmm(const std::vector<Document>& train, const std::vector<Document>& val,
                       const FitHsmmOptions& options) {
  if (train.empty()) raise(Errc::EmptyTrainingData, "fit_hsmm requires training documents");
  if (options.num_states < 1) raise(Errc::Config, "num_states must be >= 1");
  const int K = options.num_states;

  // Emission support: distinct training segment keys, optionally capped to the
  // most frequent ones (documents containing dropped segments are skipped).
  std::map<std::string, long long> key_count;
  std::vector<std::vector<std::string>> train_keys;
  train_keys.reserve(train.size());
  for (const auto& doc : train) {
    train_keys.push_back(segment_keys(doc));
    for (const auto& key : train_keys.back()) ++key_count[key];
  }
  std::vector<std::string> support;
  if (options.max_segment_types > 0 && key_count.size() > options.max_segment_types) {
    std::vector<std::pair<long long, std::string>> ranked;
    for (const auto& [k, c] : key_count) ranked.emplace_back(-c, k);
    std::sort(ranked.begin(), ranked.end());
    ranked.resize(options.max_segment_types);
    for (const auto& [c, k] : ranked) support.push_back(k);
    std::sort(support.begin(), support.end());
  } else {
    for (const auto& [k, c] : key_count) support.push_back(k);
  }

  Hsmm model;
  model.num_states = K;
  model.uses_end_state = false;
  model.segments = support;
  model.rebuild_index();
  const int S = static_cast<int>(model.segments.size());

  std::vector<std::vector<int>> train_ids;
  for (const auto& keys : train_keys) {
    std::vector<int> ids;
    bool ok = true;
    for (const auto& key : keys) {
      auto it = model.segment_index.find(key);
      if (it == model.segment_index.end()) {
        ok = false;
        break;
      }
      ids.push_back(it->second);
    }
    if (ok) train_ids.push_back(std::move(ids));
  }
  if (train_ids.empty()) raise(Errc::EmptyTrainingData, "no trainable documents after capping");
  std::vector<std::vector<int>> val_ids;
  for (const auto& doc : val) val_ids.push_back(doc_segment_ids(model, doc));

  // Random init: near-uniform transitions, random emission logits.
  Rng root(options.seed);
  Rng init_rng = root.fork(21);
  auto noisy_uniform_row = [&](int n) {
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (auto& v : logits) v = 0.1 * init_rng.normal();
    return log_softmax(logits);
  };
  model.log_initial = noisy_uniform_row(K);
  model.log_transition.resize(static_cast<std::size_t>(K) * K);
  for (int i = 0; i < K; ++i) {
    auto row = noisy_uniform_row(K);
    std::copy(row.begin(), row.end(), model.log_transition.begin() + static_cast<std::size_t>(i) * K);
  }
  model.log_emission.resize(static_cast<std::size_t>(S) * K);
  {
    std::vector<std::vector<double>> cols(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(S)));
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) cols[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)] = init_rng.normal();
      cols[static_cast<std::size_t>(k)] = log_softmax(cols[static_cast<std::size_t>(k)]);
    }
    for (int s = 0; s < S; ++s)
      for (int k = 0; k < K; ++k)
        model.log_emission[static_cast<std::size_t>(s) * K + k] = cols[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
  }

  FitHsmmResult result;
  Rng reseed_rng = root.fork(22);
  double prev_val = kNegInf;

  for (int iter = 0; iter < options.max_iters; ++iter) {
    const HsmmTables tables(model);
    std::vector<double> init_cnt(static_cast<std::size_t>(K), 0.0);
    std::vector<double> trans_cnt(static_cast<std::size_t>(K) * K, 0.0);
    std::vector<double> emis_cnt(static_cast<std::size_t>(S) * K, 0.0);
    double train_ll = 0.0;

    for (const auto& segs : train_ids) {
      auto fwd = forward(tables, segs);
      if (!std::isfinite(fwd.log_marginal))
        raise(Errc::Numeric, "training document has zero probability during EM");
      train_ll += fwd.log_marginal;
      const auto beta = backward(tables, segs);
      const int M = static_cast<int>(segs.size());
      std::vector<double> gamma(static_cast<std::size_t>(K));
      for (int m = 0; m < M; ++m) {
        double norm = 0.0;
        for (int k = 0; k < K; ++k) {
          gamma[static_cast<std::size_t>(k)] = fwd.alpha[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] *
                                               beta[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
          norm += gamma[static_cast<std::size_t>(k)];
        }
        for (int k = 0; k < K; ++k) {
          const double g = gamma[static_cast<std::size_t>(k)] / norm;
          emis_cnt[static_cast<std::size_t>(segs[static_cast<std::size_t>(m)]) * K + k] += g;
          if (m == 0) init_cnt[static_cast<std::size_t>(k)] += g;
        }
      }
      for (int m = 1; m < M; ++m) {
        double norm = 0.0;
        std::vector<double> xi(static_cast<std::size_t>(K) * K, 0.0);
        for (int i = 0; i < K; ++i) {
          const double a = fwd.alpha[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)];
          if (a <= 0.0) continue;
          for (int k = 0; k < K; ++k) {
            const double v = a * tables.trans[static_cast<std::size_t>(i) * K + k] *
                             tables.e(segs[static_cast<std::size_t>(m)], k) *
                             beta[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
            xi[static_cast<std::size_t>(i) * K + k] = v;
            norm += v;
          }
        }
        for (std::size_t i = 0; i < xi.size(); ++i) trans_cnt[i] += xi[i] / norm;
      }
    }
    result.train_log_marginal.push_back(train_ll);

    // M-step.
    auto normalize = [](std::vector<double>& row, double smoothing) {
      double total = 0.0;
      for (double v : row) total += v;
      const double denom = total + smoothing * static_cast<double>(row.size());
      if (denom <= 0.0) {
        for (auto& v : row) v = std::log(1.0 / static_cast<double>(row.size()));
        return;
      }
      for (auto& v : row) v = std::log((v + smoothing) / denom);
    };
    normalize(init_cnt, options.trans_smoothing);
    model.log_initial = init_cnt;
    for (int i = 0; i < K; ++i) {
      std::vector<double> row(trans_cnt.begin() + static_cast<std::size_t>(i) * K,
                              trans_cnt.begin() + (static_cast<std::size_t>(i) + 1) * K);
      normalize(row, options.trans_smoothing);
      std::copy(row.begin(), row.end(), model.log_transition.begin() + static_cast<std::size_t>(i) * K);
    }
    std::vector<double> state_mass(static_cast<std::size_t>(K), 0.0);
    for (int s = 0; s < S; ++s)
      for (int k = 0; k < K; ++k) state_mass[static_cast<std::size_t>(k)] += emis_cnt[static_cast<std::size_t>(s) * K + k];
    // Re-seed states whose expected mass collapsed: copy the highest-entropy
    // state's emission column plus noise.
    int richest = 0;
    {
      double best_entropy = -1.0;
      for (int k = 0; k < K; ++k) {
        if (state_mass[static_cast<std::size_t>(k)] <= 0.0) continue;
        double h = 0.0;
        for (int s = 0; s < S; ++s) {
          const double p = emis_cnt[static_cast<std::size_t>(s) * K + k] / state_mass[static_cast<std::size_t>(k)];
          if (p > 0.0) h -= p * std::log(p);
        }
        if (h > best_entropy) {
          best_entropy = h;
          richest = k;
        }
      }
    }
    for (int k = 0; k < K; ++k) {
      if (state_mass[static_cast<std::size_t>(k)] >= 1e-8) continue;
      ++result.reseeded_states;
      for (int s = 0; s < S; ++s)
        emis_cnt[static_cast<std::size_t>(s) * K + k] =
            emis_cnt[static_cast<std::size_t>(s) * K + richest] * std::exp(0.5 * reseed_rng.normal());
      state_mass[static_cast<std::size_t>(k)] = 0.0;
      for (int s = 0; s < S; ++s) state_mass[static_cast<std::size_t>(k)] += emis_cnt[static_cast<std::size_t>(s) * K + k];
    }
    for (int k = 0; k < K; ++k) {
      const double denom = state_mass[static_cast<std::size_t>(k)] + options.emis_smoothing * static_cast<double>(S);
      for (int s = 0; s < S; ++s) {
        const double p = (emis_cnt[static_cast<std::size_t>(s) * K + k] + options.emis_smoothing) / denom;
        model.log_emission[static_cast<std::size_t>(s) * K + k] = p > 0.0 ? std::log(p) : kNegInf;
      }
    }

    result.iterations = iter + 1;
    if (!val_ids.empty()) {
      const HsmmTables vt(model);
      double val_ll = 0.0;
      for (const auto& segs : val_ids) val_ll += forward(vt, segs).log_marginal;
      result.val_log_marginal.push_back(val_ll);
      const double gain = (val_ll - prev_val) / static_cast<double>(val_ids.size());
      if (iter > 0 && gain < options.tol) break;
      prev_val = val_ll;
    }
  }
  model.rebuild_index();
  result.model = std::move(model);
  return result;
}

std::vector<Document> hsmm_sample(const Hsmm& model, const HsmmSampleOptions& options) {
  if (options.num_docs < 1) raise(Errc::Config, "num_docs must be >= 1");
  if (!model.uses_end_state && options.max_segments < 1)
    raise(Errc::Config, "max_segments is required for models without an end state");
  const int K = model.num_states;
  const HsmmTables tables(model);

  std::vector<std::vector<int>> state_segments(static_cast<std::size_t>(K));
  std::vector<std::vector<double>> state_probs(static_cast<std::size_t>(K));
  for (std::size_t s = 0; s < model.segments.size(); ++s)
    for (int k = 0; k < K; ++k) {
      const double p = tables.e(static_cast<int>(s), k);
      if (p > 0.0) {
        state_segments[static_cast<std::size_t>(k)].push_back(static_cast<int>(s));
        state_probs[static_cast<std::size_t>(k)].push_back(p);
      }
    }

  Rng rng(options.seed);
  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(options.num_docs));
  for (int d = 0; d < options.num_docs; ++d) {
    Document doc;
    doc.id = options.id_prefix + "-" + std::to_string(d);
    Section sec;
    int state = -1;
    const int limit = options.max_segments > 0 ? options.max_segments : std::numeric_limits<int>::max();
    for (int m = 0; m < limit; ++m) {
      if (m == 0) {
        state = rng.categorical(tables.initial);
      } else {
        std::vector<double> row(tables.trans.begin() + static_cast<std::size_t>(state) * K,
                                tables.trans.begin() + (static_cast<std::size_t>(state) + 1) * K);
        if (model.uses_end_state) {
          row.push_back(tables.fin[static_cast<std::size_t>(state)]);
          const int draw = rng.categorical(row);
          if (draw == K) break;
          state = draw;
        } else {
          state = rng.categorical(row);
        }
      }
      const auto& candidates = state_segments[static_cast<std::size_t>(state)];
      if (candidates.empty()) raise(Errc::Numeric, "state has no emission support");
      const int seg = candidates[static_cast<std::size_t>(rng.categorical(state_probs[static_cast<std::size_t>(state)]))];
      std::istringstream toks(model.segments[static_cast<std::size_t>(seg)]);
      std::string tok;
      while (toks >> tok) sec.tokens.push_back(tok);
    }
    doc.sections.push_back(std::move(sec));
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace critic
