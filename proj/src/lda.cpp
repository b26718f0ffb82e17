#include "critic/lda.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "critic/errors.hpp"
#include "critic/fingerprint.hpp"
#include "critic/rng.hpp"

namespace critic {

namespace {

double digamma(double x) {
  // Recurrence to push x above 6, then the asymptotic series.
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0));
  return result;
}

std::vector<int> doc_token_ids(const std::vector<std::string>& vocab,
                               const std::map<std::string, int>& index, const Document& doc) {
  (void)vocab;
  std::vector<int> ids;
  for (const auto& sec : doc.sections)
    for (const auto& tok : sec.tokens) {
      auto it = index.find(tok);
      if (it != index.end()) ids.push_back(it->second);
    }
  return ids;
}

std::map<std::string, int> build_index(const std::vector<std::string>& vocab) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index[vocab[i]] = static_cast<int>(i);
  return index;
}

}  // namespace

int LdaModel::vocab_id(const std::string& token) const {
  auto it = std::lower_bound(vocab.begin(), vocab.end(), token);
  if (it == vocab.end() || *it != token) return -1;
  return static_cast<int>(it - vocab.begin());
}

std::string LdaModel::fingerprint() const {
  Fingerprint fp;
  fp.add(std::string("lda"));
  fp.add(num_topics).add(alpha).add(beta).add(vocab);
  for (const auto& row : phi) fp.add(row);
  return fp.hex();
}

LdaModel fit_lda(const std::vector<Document>& docs, const Vocabulary& vocab,
                 const LdaOptions& options) {
  if (options.num_topics < 2) raise(Errc::Config, "num_topics must be >= 2");
  if (vocab.size() == 0) raise(Errc::EmptyVocabulary, "fit_lda requires a vocabulary");
  if (docs.empty()) raise(Errc::EmptyCorpus, "fit_lda requires documents");

  LdaModel model;
  model.num_topics = options.num_topics;
  model.beta = options.beta;
  // The model vocabulary excludes reserved markers.
  for (const auto& tok : vocab.tokens())
    if (tok != kSegmentEnd && tok != kBos && tok != kEos && tok != kPad)
      model.vocab.push_back(tok);
  std::sort(model.vocab.begin(), model.vocab.end());
  const auto index = build_index(model.vocab);
  const int V = static_cast<int>(model.vocab.size());
  const int M = options.num_topics;
  if (V == 0) raise(Errc::EmptyVocabulary, "vocabulary holds only reserved symbols");

  std::vector<std::vector<int>> bags;
  bags.reserve(docs.size());
  for (const auto& doc : docs) bags.push_back(doc_token_ids(model.vocab, index, doc));

  model.alpha.assign(static_cast<std::size_t>(M), 1.0 / static_cast<double>(M));

  const int D = static_cast<int>(bags.size());
  std::vector<std::vector<int>> assignments(bags.size());
  std::vector<std::vector<long long>> ndk(bags.size(), std::vector<long long>(static_cast<std::size_t>(M), 0));
  std::vector<std::vector<long long>> nkw(static_cast<std::size_t>(M), std::vector<long long>(static_cast<std::size_t>(V), 0));
  std::vector<long long> nk(static_cast<std::size_t>(M), 0);

  Rng rng = Rng(options.seed).fork(31);
  for (std::size_t d = 0; d < bags.size(); ++d) {
    assignments[d].resize(bags[d].size());
    for (std::size_t n = 0; n < bags[d].size(); ++n) {
      const int t = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(M)));
      assignments[d][n] = t;
      ++ndk[d][static_cast<std::size_t>(t)];
      ++nkw[static_cast<std::size_t>(t)][static_cast<std::size_t>(bags[d][n])];
      ++nk[static_cast<std::size_t>(t)];
    }
  }

  std::vector<double> weights(static_cast<std::size_t>(M));
  double alpha_sum = 0.0;
  for (double a : model.alpha) alpha_sum += a;
  const double vbeta = static_cast<double>(V) * options.beta;

  for (int iter = 1; iter <= options.iterations; ++iter) {
    for (std::size_t d = 0; d < bags.size(); ++d)
      for (std::size_t n = 0; n < bags[d].size(); ++n) {
        const int w = bags[d][n];
        const int old = assignments[d][n];
        --ndk[d][static_cast<std::size_t>(old)];
        --nkw[static_cast<std::size_t>(old)][static_cast<std::size_t>(w)];
        --nk[static_cast<std::size_t>(old)];
        for (int i = 0; i < M; ++i)
          weights[static_cast<std::size_t>(i)] =
              (static_cast<double>(ndk[d][static_cast<std::size_t>(i)]) + model.alpha[static_cast<std::size_t>(i)]) *
              (static_cast<double>(nkw[static_cast<std::size_t>(i)][static_cast<std::size_t>(w)]) + options.beta) /
              (static_cast<double>(nk[static_cast<std::size_t>(i)]) + vbeta);
        const int t = rng.categorical(weights);
        assignments[d][n] = t;
        ++ndk[d][static_cast<std::size_t>(t)];
        ++nkw[static_cast<std::size_t>(t)][static_cast<std::size_t>(w)];
        ++nk[static_cast<std::size_t>(t)];
      }

    if (options.alpha_update_interval > 0 && iter % options.alpha_update_interval == 0) {
      // Minka fixed-point update from the current topic-count statistics.
      for (int round = 0; round < 5; ++round) {
        double denom = 0.0;
        for (int d = 0; d < D; ++d)
          denom += digamma(static_cast<double>(bags[static_cast<std::size_t>(d)].size()) + alpha_sum) -
                   digamma(alpha_sum);
        if (denom <= 0.0) break;
        alpha_sum = 0.0;
        for (int i = 0; i < M; ++i) {
          double numer = 0.0;
          const double a = model.alpha[static_cast<std::size_t>(i)];
          for (int d = 0; d < D; ++d)
            numer += digamma(static_cast<double>(ndk[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)]) + a) -
                     digamma(a);
          model.alpha[static_cast<std::size_t>(i)] = std::max(1e-8, a * numer / denom);
          alpha_sum += model.alpha[static_cast<std::size_t>(i)];
        }
      }
    }
  }

  // Point estimate of phi from the final state (posterior mean; the Dirichlet
  // mode is degenerate for beta < 1).
  model.phi.assign(static_cast<std::size_t>(M), std::vector<double>(static_cast<std::size_t>(V), 0.0));
  for (int i = 0; i < M; ++i) {
    const double denom = static_cast<double>(nk[static_cast<std::size_t>(i)]) + vbeta;
    for (int w = 0; w < V; ++w)
      model.phi[static_cast<std::size_t>(i)][static_cast<std::size_t>(w)] =
          (static_cast<double>(nkw[static_cast<std::size_t>(i)][static_cast<std::size_t>(w)]) + options.beta) / denom;
  }
  return model;
}

LdaPosterior lda_posterior(const LdaModel& model, const Document& doc,
                           const LdaPosteriorOptions& options) {
  if (options.num_samples < 1) raise(Errc::Config, "num_samples must be >= 1");
  const int M = model.num_topics;
  const auto index = build_index(model.vocab);
  const auto bag = doc_token_ids(model.vocab, index, doc);

  LdaPosterior post;
  Rng rng = Rng(options.seed).fork(37);

  if (bag.empty()) {
    // No evidence: the posterior is the prior.
    for (int s = 0; s < options.num_samples; ++s) {
      std::vector<double> z;
      rng.dirichlet(model.alpha, &z);
      post.z_samples.push_back(std::move(z));
      post.alpha_primes.push_back(model.alpha);
      post.assignment_samples.emplace_back();
    }
    return post;
  }

  std::vector<int> t(bag.size());
  std::vector<long long> counts(static_cast<std::size_t>(M), 0);
  for (std::size_t n = 0; n < bag.size(); ++n) {
    t[n] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(M)));
    ++counts[static_cast<std::size_t>(t[n])];
  }
  std::vector<double> weights(static_cast<std::size_t>(M));
  auto sweep = [&]() {
    for (std::size_t n = 0; n < bag.size(); ++n) {
      const int w = bag[n];
      --counts[static_cast<std::size_t>(t[n])];
      for (int i = 0; i < M; ++i)
        weights[static_cast<std::size_t>(i)] =
            (static_cast<double>(counts[static_cast<std::size_t>(i)]) + model.alpha[static_cast<std::size_t>(i)]) *
            model.phi[static_cast<std::size_t>(i)][static_cast<std::size_t>(w)];
      t[n] = rng.categorical(weights);
      ++counts[static_cast<std::size_t>(t[n])];
    }
  };

  for (int i = 0; i < options.burn_in; ++i) sweep();
  for (int s = 0; s < options.num_samples; ++s) {
    for (int i = 0; i < std::max(1, options.thin); ++i) sweep();
    std::vector<double> alpha_prime = model.alpha;
    for (int i = 0; i < M; ++i)
      alpha_prime[static_cast<std::size_t>(i)] += static_cast<double>(counts[static_cast<std::size_t>(i)]);
    std::vector<double> z;
    rng.dirichlet(alpha_prime, &z);
    post.z_samples.push_back(std::move(z));
    post.alpha_primes.push_back(std::move(alpha_prime));
    post.assignment_samples.push_back(t);
  }
  return post;
}

CodeMixingReport code_mixing_statistic(const LdaModel& model, const std::vector<Document>& docs,
                                       const LdaPosteriorOptions& options) {
  if (docs.empty()) raise(Errc::EmptyInput, "code_mixing_statistic requires documents");
  CodeMixingReport report;
  double total = 0.0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    LdaPosteriorOptions per_doc = options;
    per_doc.seed = Rng(options.seed).fork(d + 1000).next_u64();
    const auto post = lda_posterior(model, docs[d], per_doc);
    std::vector<double> mean(static_cast<std::size_t>(model.num_topics), 0.0);
    for (const auto& z : post.z_samples)
      for (std::size_t i = 0; i < z.size(); ++i) mean[i] += z[i];
    for (auto& v : mean) v /= static_cast<double>(post.z_samples.size());
    double h = 0.0;
    for (double p : mean)
      if (p > 0.0) h -= p * std::log(p);
    report.doc_ids.push_back(docs[d].id);
    report.entropy.push_back(h);
    report.mean_z.push_back(std::move(mean));
    total += h;
  }
  report.mean_entropy = total / static_cast<double>(docs.size());
  return report;
}

std::string code_mixing_csv(const CodeMixingReport& report) {
  std::ostringstream out;
  out << "doc_id,entropy";
  const std::size_t M = report.mean_z.empty() ? 0 : report.mean_z[0].size();
  for (std::size_t i = 0; i < M; ++i) out << ",topic_" << i;
  out << '\n';
  for (std::size_t d = 0; d < report.doc_ids.size(); ++d) {
    out << report.doc_ids[d] << ',' << report.entropy[d];
    for (double v : report.mean_z[d]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

Decomposition lda_decompose_tiny(const LdaModel& model, const Document& doc) {
  const auto index = build_index(model.vocab);
  const auto bag = doc_token_ids(model.vocab, index, doc);
  const int M = model.num_topics;
  const std::size_t N = bag.size();
  double combos = 1.0;
  for (std::size_t n = 0; n < N; ++n) {
    combos *= M;
    if (combos > 2e6)
      raise(Errc::UnsupportedCritic, "document too large for exact LDA enumeration");
  }
  if (N == 0) raise(Errc::UnsupportedCritic, "no in-vocabulary tokens to decompose");

  double alpha_sum = 0.0;
  for (double a : model.alpha) alpha_sum += a;

  std::vector<double> log_prior;
  std::vector<double> log_lik;
  std::vector<int> t(N, 0);
  for (;;) {
    std::vector<int> counts(static_cast<std::size_t>(M), 0);
    double ll = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      ++counts[static_cast<std::size_t>(t[n])];
      ll += std::log(model.phi[static_cast<std::size_t>(t[n])][static_cast<std::size_t>(bag[n])]);
    }
    // Dirichlet-multinomial prior over the assignment vector.
    double lp = std::lgamma(alpha_sum) - std::lgamma(alpha_sum + static_cast<double>(N));
    for (int i = 0; i < M; ++i)
      lp += std::lgamma(model.alpha[static_cast<std::size_t>(i)] + counts[static_cast<std::size_t>(i)]) -
            std::lgamma(model.alpha[static_cast<std::size_t>(i)]);
    log_prior.push_back(lp);
    log_lik.push_back(ll);

    std::size_t pos = 0;
    while (pos < N && ++t[pos] == M) {
      t[pos] = 0;
      ++pos;
    }
    if (pos == N) break;
  }
  return decompose_enumerated(log_prior, log_lik);
}

double log_dirichlet_density(const std::vector<double>& z, const std::vector<double>& alpha) {
  if (z.size() != alpha.size()) raise(Errc::Config, "dimension mismatch");
  double sum_alpha = 0.0;
  double logp = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    sum_alpha += alpha[i];
    logp += (alpha[i] - 1.0) * std::log(std::max(z[i], 1e-300));
    logp -= std::lgamma(alpha[i]);
  }
  logp += std::lgamma(sum_alpha);
  return logp;
}

LatentProjection LdaCritic::project(const Document& doc, ProjectionMode mode,
                                    std::uint64_t seed) const {
  LdaPosteriorOptions options = posterior_options_;
  options.seed = seed;
  if (mode.kind == ProjectionMode::Kind::MonteCarlo) options.num_samples = mode.num_samples;
  const auto post = lda_posterior(model_, doc, options);
  double total = 0.0;
  for (const auto& z : post.z_samples) total -= log_dirichlet_density(z, model_.alpha);
  LatentProjection proj;
  proj.mode = ProjectionMode::monte_carlo(static_cast<int>(post.z_samples.size()));
  proj.kind = LatentKind::Continuous;
  proj.per_position_nll = {total / static_cast<double>(post.z_samples.size())};
  proj.num_positions = 1;
  return proj;
}

}  // namespace critic
