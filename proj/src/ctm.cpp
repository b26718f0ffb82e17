#include "critic/ctm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "critic/errors.hpp"
#include "critic/fingerprint.hpp"
#include "critic/rng.hpp"

namespace critic {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double safe_exp(double x) { return std::exp(std::min(x, 700.0)); }

Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& sigma) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    raise(Errc::SingularCovariance, "covariance is not positive definite");
  return llt;
}

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

double gaussian_log_density(const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                            const Eigen::LLT<Eigen::MatrixXd>& llt, double log_det) {
  const Eigen::VectorXd diff = z - mu;
  const Eigen::VectorXd solved = llt.matrixL().solve(diff);
  return -0.5 * (static_cast<double>(z.size()) * kLog2Pi + log_det + solved.squaredNorm());
}

}  // namespace

int CtmModel::vocab_id(const std::string& token) const {
  auto it = std::lower_bound(vocab.begin(), vocab.end(), token);
  if (it == vocab.end() || *it != token) return -1;
  return static_cast<int>(it - vocab.begin());
}

std::string CtmModel::fingerprint() const {
  Fingerprint fp;
  fp.add(std::string("ctm"));
  fp.add(num_topics).add(vocab);
  for (int i = 0; i < mu.size(); ++i) fp.add(mu(i));
  for (int i = 0; i < sigma.size(); ++i) fp.add(*(sigma.data() + i));
  for (int i = 0; i < phi.size(); ++i) fp.add(*(phi.data() + i));
  return fp.hex();
}

std::vector<std::pair<int, double>> ctm_bag(const CtmModel& model, const Document& doc) {
  std::map<int, double> counts;
  for (const auto& sec : doc.sections)
    for (const auto& tok : sec.tokens) {
      const int id = model.vocab_id(tok);
      if (id >= 0) counts[id] += 1.0;
    }
  return {counts.begin(), counts.end()};
}

Eigen::MatrixXd ctm_optimal_psi(const CtmModel& model,
                                const std::vector<std::pair<int, double>>& bag,
                                const Eigen::VectorXd& lambda) {
  const int M = model.num_topics;
  Eigen::MatrixXd psi(static_cast<Eigen::Index>(bag.size()), M);
  for (std::size_t w = 0; w < bag.size(); ++w) {
    double norm = 0.0;
    for (int i = 0; i < M; ++i) {
      const double v = safe_exp(lambda(i)) * model.phi(i, bag[w].first);
      psi(static_cast<Eigen::Index>(w), i) = v;
      norm += v;
    }
    if (norm <= 0.0) raise(Errc::Numeric, "word has zero probability under every topic");
    psi.row(static_cast<Eigen::Index>(w)) /= norm;
  }
  return psi;
}

double ctm_optimal_zeta(const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu2) {
  double zeta = 0.0;
  for (int i = 0; i < lambda.size(); ++i) zeta += safe_exp(lambda(i) + 0.5 * nu2(i));
  return zeta;
}

double ctm_elbo(const CtmModel& model, const std::vector<std::pair<int, double>>& bag,
                const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu2,
                const Eigen::MatrixXd& psi, double zeta) {
  const int M = model.num_topics;
  const auto llt = checked_llt(model.sigma);
  const double log_det = log_det_from_llt(llt);
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(M, M));

  double N = 0.0;
  for (const auto& [w, c] : bag) N += c;

  const Eigen::VectorXd diff = lambda - model.mu;
  double elbo = -0.5 * (M * kLog2Pi + log_det + (inv.diagonal().array() * nu2.array()).sum() +
                        diff.dot(inv * diff));
  for (std::size_t w = 0; w < bag.size(); ++w) {
    const auto [word, count] = bag[w];
    for (int i = 0; i < M; ++i) {
      const double p = psi(static_cast<Eigen::Index>(w), i);
      if (p <= 0.0) continue;
      elbo += count * p * (lambda(i) + std::log(model.phi(i, word)) - std::log(p));
    }
  }
  double expsum = 0.0;
  for (int i = 0; i < M; ++i) expsum += safe_exp(lambda(i) + 0.5 * nu2(i));
  elbo -= N * (expsum / zeta - 1.0 + std::log(zeta));
  for (int i = 0; i < M; ++i) elbo += 0.5 * (std::log(2.0 * M_PI * nu2(i)) + 1.0);
  return elbo;
}

Eigen::VectorXd ctm_elbo_grad_lambda(const CtmModel& model,
                                     const std::vector<std::pair<int, double>>& bag,
                                     const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu2,
                                     const Eigen::MatrixXd& psi, double zeta) {
  const int M = model.num_topics;
  const auto llt = checked_llt(model.sigma);
  double N = 0.0;
  Eigen::VectorXd word_mass = Eigen::VectorXd::Zero(M);
  for (std::size_t w = 0; w < bag.size(); ++w) {
    N += bag[w].second;
    word_mass += bag[w].second * psi.row(static_cast<Eigen::Index>(w)).transpose();
  }
  Eigen::VectorXd grad = -llt.solve(lambda - model.mu) + word_mass;
  for (int i = 0; i < M; ++i) grad(i) -= (N / zeta) * safe_exp(lambda(i) + 0.5 * nu2(i));
  return grad;
}

VariationalPosterior ctm_infer(const CtmModel& model, const Document& doc, int max_iters,
                               double tol) {
  const int M = model.num_topics;
  const auto bag = ctm_bag(model, doc);
  VariationalPosterior q;
  q.lambda = model.mu;
  q.nu2 = Eigen::VectorXd::Ones(M);

  const auto llt = checked_llt(model.sigma);
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(M, M));

  double N = 0.0;
  for (const auto& [w, c] : bag) N += c;

  if (bag.empty()) {
    // No evidence: q matches the prior marginals.
    q.nu2 = model.sigma.diagonal();
    Eigen::MatrixXd psi(0, M);
    q.elbo = ctm_elbo(model, bag, q.lambda, q.nu2, psi, ctm_optimal_zeta(q.lambda, q.nu2));
    return q;
  }

  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::MatrixXd psi = ctm_optimal_psi(model, bag, q.lambda);
    double zeta = ctm_optimal_zeta(q.lambda, q.nu2);

    // Newton step on lambda with backtracking line search.
    for (int newton = 0; newton < 20; ++newton) {
      const Eigen::VectorXd grad = ctm_elbo_grad_lambda(model, bag, q.lambda, q.nu2, psi, zeta);
      Eigen::MatrixXd hess = -inv;
      for (int i = 0; i < M; ++i) hess(i, i) -= (N / zeta) * safe_exp(q.lambda(i) + 0.5 * q.nu2(i));
      const Eigen::VectorXd step = -hess.ldlt().solve(grad);
      if (!step.allFinite()) break;
      const double before = ctm_elbo(model, bag, q.lambda, q.nu2, psi, zeta);
      double alpha = 1.0;
      bool moved = false;
      for (int bt = 0; bt < 30; ++bt) {
        const Eigen::VectorXd cand = q.lambda + alpha * step;
        if (ctm_elbo(model, bag, cand, q.nu2, psi, zeta) > before) {
          q.lambda = cand;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved || grad.norm() < 1e-10) break;
    }

    zeta = ctm_optimal_zeta(q.lambda, q.nu2);
    // Per-coordinate bisection for nu2; the stationarity condition is monotone.
    for (int i = 0; i < M; ++i) {
      const double a = 0.5 * inv(i, i);
      auto g = [&](double v) {
        return -a - 0.5 * (N / zeta) * safe_exp(q.lambda(i) + 0.5 * v) + 0.5 / v;
      };
      double lo = 1e-10;
      double hi = 1.0;
      while (g(hi) > 0.0 && hi < 1e6) hi *= 2.0;
      for (int it2 = 0; it2 < 100; ++it2) {
        const double mid = 0.5 * (lo + hi);
        if (g(mid) > 0.0)
          lo = mid;
        else
          hi = mid;
      }
      q.nu2(i) = 0.5 * (lo + hi);
    }

    psi = ctm_optimal_psi(model, bag, q.lambda);
    zeta = ctm_optimal_zeta(q.lambda, q.nu2);
    q.elbo = ctm_elbo(model, bag, q.lambda, q.nu2, psi, zeta);
    if (std::abs(q.elbo - prev) < tol * (1.0 + std::abs(q.elbo))) break;
    prev = q.elbo;
  }
  return q;
}

FitCtmResult fit_ctm(const std::vector<Document>& docs, const Vocabulary& vocab,
                     const CtmOptions& options) {
  if (docs.empty()) raise(Errc::EmptyCorpus, "fit_ctm requires documents");
  if (options.num_topics < 2) raise(Errc::Config, "num_topics must be >= 2");

  CtmModel model;
  model.num_topics = options.num_topics;
  for (const auto& tok : vocab.tokens())
    if (tok != kSegmentEnd && tok != kBos && tok != kEos && tok != kPad)
      model.vocab.push_back(tok);
  std::sort(model.vocab.begin(), model.vocab.end());
  const int V = static_cast<int>(model.vocab.size());
  const int M = options.num_topics;
  if (V == 0) raise(Errc::EmptyVocabulary, "vocabulary holds only reserved symbols");

  std::vector<std::vector<std::pair<int, double>>> bags;
  bags.reserve(docs.size());
  {
    CtmModel probe = model;  // vocab only
    for (const auto& doc : docs) bags.push_back(ctm_bag(probe, doc));
  }

  // Init: perturbed corpus frequencies per topic, unit Gaussian prior.
  Rng rng = Rng(options.seed).fork(41);
  Eigen::VectorXd corpus_freq = Eigen::VectorXd::Constant(V, 1.0);
  for (const auto& bag : bags)
    for (const auto& [w, c] : bag) corpus_freq(w) += c;
  model.phi.resize(M, V);
  for (int i = 0; i < M; ++i) {
    double norm = 0.0;
    for (int w = 0; w < V; ++w) {
      const double v = corpus_freq(w) * std::exp(0.5 * rng.normal());
      model.phi(i, w) = v;
      norm += v;
    }
    model.phi.row(i) /= norm;
  }
  model.mu = Eigen::VectorXd::Zero(M);
  model.sigma = Eigen::MatrixXd::Identity(M, M);

  FitCtmResult result;
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_em_iters; ++iter) {
    std::vector<VariationalPosterior> posteriors;
    posteriors.reserve(docs.size());
    Eigen::MatrixXd phi_counts = Eigen::MatrixXd::Constant(M, V, options.phi_smoothing);
    double corpus_elbo = 0.0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
      auto q = ctm_infer(model, docs[d], options.estep_max_iters, options.estep_tol);
      corpus_elbo += q.elbo;
      const auto psi = ctm_optimal_psi(model, bags[d], q.lambda);
      for (std::size_t w = 0; w < bags[d].size(); ++w)
        phi_counts.col(bags[d][w].first) +=
            bags[d][w].second * psi.row(static_cast<Eigen::Index>(w)).transpose();
      posteriors.push_back(std::move(q));
    }
    result.elbo.push_back(corpus_elbo);
    result.iterations = iter + 1;

    // M-step.
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(M);
    for (const auto& q : posteriors) mu += q.lambda;
    mu /= static_cast<double>(posteriors.size());
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(M, M);
    for (const auto& q : posteriors) {
      const Eigen::VectorXd diff = q.lambda - mu;
      sigma += diff * diff.transpose();
      sigma += q.nu2.asDiagonal().toDenseMatrix();
    }
    sigma /= static_cast<double>(posteriors.size());
    sigma = 0.5 * (sigma + sigma.transpose());
    // Regularize only if the moment matrix fails the PD check.
    for (int tries = 0; tries < 8; ++tries) {
      Eigen::LLT<Eigen::MatrixXd> llt(sigma);
      if (llt.info() == Eigen::Success) break;
      sigma += 1e-6 * Eigen::MatrixXd::Identity(M, M);
      if (tries == 7) raise(Errc::SingularCovariance, "covariance update is not repairable");
    }
    model.mu = std::move(mu);
    model.sigma = std::move(sigma);
    for (int i = 0; i < M; ++i) {
      const double norm = phi_counts.row(i).sum();
      model.phi.row(i) = phi_counts.row(i) / norm;
    }

    if (iter > 0 && std::abs(corpus_elbo - prev) < options.tol * (1.0 + std::abs(corpus_elbo)))
      break;
    prev = corpus_elbo;
  }
  result.model = std::move(model);
  return result;
}

LatentProjection ctm_latent_nll(const CtmModel& model, const Document& doc,
                                const CtmScoreOptions& options) {
  if (options.num_samples < 1) raise(Errc::Config, "num_samples must be >= 1");
  const auto q = ctm_infer(model, doc);
  const auto llt = checked_llt(model.sigma);
  const double log_det = log_det_from_llt(llt);
  Rng rng(options.seed);
  const int M = model.num_topics;
  double total = 0.0;
  Eigen::VectorXd z(M);
  for (int s = 0; s < options.num_samples; ++s) {
    for (int i = 0; i < M; ++i) z(i) = q.lambda(i) + std::sqrt(q.nu2(i)) * rng.normal();
    total -= gaussian_log_density(z, model.mu, llt, log_det);
  }
  LatentProjection proj;
  proj.mode = ProjectionMode::monte_carlo(options.num_samples);
  proj.kind = LatentKind::Continuous;
  proj.per_position_nll = {total / options.num_samples};
  proj.num_positions = 1;
  return proj;
}

std::vector<Document> ctm_sample_docs(const CtmModel& model, int num_docs, int tokens_per_doc,
                                      std::uint64_t seed, const std::string& id_prefix) {
  if (num_docs < 1 || tokens_per_doc < 1) raise(Errc::Config, "invalid sample size");
  const auto llt = checked_llt(model.sigma);
  const Eigen::MatrixXd L = llt.matrixL();
  const int M = model.num_topics;
  const int V = static_cast<int>(model.vocab.size());
  Rng rng(seed);
  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(num_docs));
  std::vector<double> theta(static_cast<std::size_t>(M));
  std::vector<double> row(static_cast<std::size_t>(V));
  for (int d = 0; d < num_docs; ++d) {
    Eigen::VectorXd eps(M);
    for (int i = 0; i < M; ++i) eps(i) = rng.normal();
    const Eigen::VectorXd z = model.mu + L * eps;
    const double mx = z.maxCoeff();
    double norm = 0.0;
    for (int i = 0; i < M; ++i) {
      theta[static_cast<std::size_t>(i)] = std::exp(z(i) - mx);
      norm += theta[static_cast<std::size_t>(i)];
    }
    for (auto& t : theta) t /= norm;
    Document doc;
    doc.id = id_prefix + "-" + std::to_string(d);
    Section sec;
    for (int n = 0; n < tokens_per_doc; ++n) {
      const int topic = rng.categorical(theta);
      for (int w = 0; w < V; ++w) row[static_cast<std::size_t>(w)] = model.phi(topic, w);
      sec.tokens.push_back(model.vocab[static_cast<std::size_t>(rng.categorical(row))]);
    }
    doc.sections.push_back(std::move(sec));
    docs.push_back(std::move(doc));
  }
  return docs;
}

namespace {

// Average-linkage agglomerative clustering; returns the dendrogram leaf order.
std::vector<int> cluster_order(const Eigen::MatrixXd& cov) {
  const int K = static_cast<int>(cov.rows());
  std::vector<std::vector<int>> clusters;
  for (int i = 0; i < K; ++i) clusters.push_back({i});
  Eigen::MatrixXd dist(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) dist(i, j) = (cov.row(i) - cov.row(j)).norm();

  std::vector<std::vector<double>> d(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(K)));
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = dist(i, j);

  while (clusters.size() > 1) {
    std::size_t bi = 0;
    std::size_t bj = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < clusters.size(); ++i)
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        double sum = 0.0;
        for (int a : clusters[i])
          for (int b : clusters[j]) sum += d[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
        const double avg = sum / (static_cast<double>(clusters[i].size()) * static_cast<double>(clusters[j].size()));
        if (avg < best) {
          best = avg;
          bi = i;
          bj = j;
        }
      }
    // Cluster with the smaller leading index goes first.
    std::vector<int> merged;
    if (clusters[bi].front() <= clusters[bj].front()) {
      merged = clusters[bi];
      merged.insert(merged.end(), clusters[bj].begin(), clusters[bj].end());
    } else {
      merged = clusters[bj];
      merged.insert(merged.end(), clusters[bi].begin(), clusters[bi].end());
    }
    clusters.erase(clusters.begin() + static_cast<long>(bj));
    clusters[bi] = std::move(merged);
  }
  return clusters.front();
}

Eigen::MatrixXd posterior_mean_covariance(const CtmModel& model, const std::vector<Document>& docs,
                                          bool softmax_proportions) {
  if (docs.empty()) raise(Errc::EmptyInput, "covariance over an empty corpus");
  const int M = model.num_topics;
  Eigen::MatrixXd points(static_cast<Eigen::Index>(docs.size()), M);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto q = ctm_infer(model, docs[d]);
    Eigen::VectorXd v = q.lambda;
    if (softmax_proportions) {
      const double mx = v.maxCoeff();
      v = (v.array() - mx).exp();
      v /= v.sum();
    }
    points.row(static_cast<Eigen::Index>(d)) = v.transpose();
  }
  const Eigen::RowVectorXd mean = points.colwise().mean();
  const Eigen::MatrixXd centered = points.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(docs.size());
}

}  // namespace

CovarianceReport covariance_report(const CtmModel& model, const std::vector<Document>& docs_a,
                                   const std::vector<Document>& docs_b,
                                   bool softmax_proportions) {
  CovarianceReport report;
  report.cov_a = posterior_mean_covariance(model, docs_a, softmax_proportions);
  report.cov_b = posterior_mean_covariance(model, docs_b, softmax_proportions);
  report.order = cluster_order(report.cov_a);
  report.frobenius = (report.cov_a - report.cov_b).norm();
  return report;
}

std::string covariance_csv(const CovarianceReport& report, bool second) {
  const Eigen::MatrixXd& cov = second ? report.cov_b : report.cov_a;
  const auto& order = report.order;
  std::ostringstream out;
  out << "topic";
  for (int idx : order) out << ",topic_" << idx;
  out << '\n';
  for (std::size_t i = 0; i < order.size(); ++i) {
    out << "topic_" << order[i];
    for (std::size_t j = 0; j < order.size(); ++j) {
      const double v = std::clamp(cov(order[i], order[j]), report.clamp_lo, report.clamp_hi);
      out << ',' << v;
    }
    out << '\n';
  }
  return out.str();
}

CtmCritic::CtmCritic(CtmModel model, CtmScoreOptions options)
    : model_(std::move(model)), options_(options) {}

LatentProjection CtmCritic::project(const Document& doc, ProjectionMode mode,
                                    std::uint64_t seed) const {
  CtmScoreOptions options = options_;
  options.seed = seed;
  if (mode.kind == ProjectionMode::Kind::MonteCarlo) options.num_samples = mode.num_samples;
  return ctm_latent_nll(model_, doc, options);
}

}  // namespace critic
