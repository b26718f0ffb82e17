#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "critic/corpus.hpp"
#include "critic/scores.hpp"

namespace critic {

struct CtmModel {
  int num_topics = 0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // symmetric positive-definite
  Eigen::MatrixXd phi;    // topics x vocab, rows sum to 1
  std::vector<std::string> vocab;

  int vocab_id(const std::string& token) const;
  std::string fingerprint() const;
};

struct CtmOptions {
  int num_topics = 10;
  int max_em_iters = 50;
  double tol = 1e-5;          // relative corpus-ELBO change
  int estep_max_iters = 100;
  double estep_tol = 1e-8;
  double phi_smoothing = 1e-8;
  std::uint64_t seed = 0;
};

struct FitCtmResult {
  CtmModel model;
  std::vector<double> elbo;  // corpus ELBO per EM iteration
  int iterations = 0;
};

// Variational EM for the logistic-normal topic model with the per-word topic
// assignments marginalized out; the softmax normalizer is handled with the
// standard first-order bound and a per-document auxiliary variable.
FitCtmResult fit_ctm(const std::vector<Document>& docs, const Vocabulary& vocab,
                     const CtmOptions& options);

// Bag of in-vocabulary words: (vocab id, count).
std::vector<std::pair<int, double>> ctm_bag(const CtmModel& model, const Document& doc);

struct VariationalPosterior {
  Eigen::VectorXd lambda;  // mean
  Eigen::VectorXd nu2;     // diagonal variances, > 0
  double elbo = 0.0;
};

VariationalPosterior ctm_infer(const CtmModel& model, const Document& doc,
                               int max_iters = 100, double tol = 1e-8);

// ELBO of one document at a given variational state with the auxiliary
// quantities (psi, zeta) held at their coordinate optima for (lambda, nu2)
// frozen separately; exposed so the lambda-gradient can be checked against
// finite differences.
double ctm_elbo(const CtmModel& model, const std::vector<std::pair<int, double>>& bag,
                const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu2,
                const Eigen::MatrixXd& psi, double zeta);
Eigen::VectorXd ctm_elbo_grad_lambda(const CtmModel& model,
                                     const std::vector<std::pair<int, double>>& bag,
                                     const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu2,
                                     const Eigen::MatrixXd& psi, double zeta);
// Coordinate optima used inside the E-step.
Eigen::MatrixXd ctm_optimal_psi(const CtmModel& model,
                                const std::vector<std::pair<int, double>>& bag,
                                const Eigen::VectorXd& lambda);
double ctm_optimal_zeta(const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu2);

struct CtmScoreOptions {
  int num_samples = 64;
  std::uint64_t seed = 0;
};

// T(x) = -E_{z ~ q} log N(z; mu, Sigma), Monte Carlo over the variational
// posterior. Continuous latent: a single scored position, no PPL.
LatentProjection ctm_latent_nll(const CtmModel& model, const Document& doc,
                                const CtmScoreOptions& options);

std::vector<Document> ctm_sample_docs(const CtmModel& model, int num_docs, int tokens_per_doc,
                                      std::uint64_t seed, const std::string& id_prefix = "ctm");

struct CovarianceReport {
  Eigen::MatrixXd cov_a;      // unclamped, original topic order
  Eigen::MatrixXd cov_b;
  std::vector<int> order;     // permutation from clustering cov_a
  double frobenius = 0.0;     // distance between the unclamped matrices
  double clamp_lo = -5.0;
  double clamp_hi = 5.0;
};

// Empirical covariance of posterior means over each corpus. Topic order comes
// from average-linkage clustering of the first matrix and applies to both.
CovarianceReport covariance_report(const CtmModel& model, const std::vector<Document>& docs_a,
                                   const std::vector<Document>& docs_b,
                                   bool softmax_proportions = false);

// CSV with the permuted topic labels as header; emitted values are clamped.
std::string covariance_csv(const CovarianceReport& report, bool second);

class CtmCritic : public Critic {
 public:
  CtmCritic(CtmModel model, CtmScoreOptions options);
  std::string name() const override { return "ctm"; }
  std::string fingerprint() const override { return model_.fingerprint(); }
  LatentProjection project(const Document& doc, ProjectionMode mode,
                           std::uint64_t seed) const override;
  const CtmModel& model() const { return model_; }

 private:
  CtmModel model_;
  CtmScoreOptions options_;
};

}  // namespace critic
