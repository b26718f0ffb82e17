#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "critic/corpus.hpp"
#include "critic/scores.hpp"

namespace critic {

struct LdaOptions {
  int num_topics = 10;
  double beta = 0.01;
  int iterations = 1000;
  int alpha_update_interval = 100;  // Minka fixed-point update cadence
  std::uint64_t seed = 0;
};

struct LdaModel {
  int num_topics = 0;
  std::vector<double> alpha;            // per-topic Dirichlet concentration
  double beta = 0.01;
  std::vector<std::vector<double>> phi;  // topics x vocab, rows sum to 1
  std::vector<std::string> vocab;

  int vocab_id(const std::string& token) const;
  std::string fingerprint() const;
};

// Collapsed Gibbs sampling with both z and phi integrated out; alpha is
// re-optimized every alpha_update_interval sweeps starting from 1/M.
LdaModel fit_lda(const std::vector<Document>& docs, const Vocabulary& vocab,
                 const LdaOptions& options);

struct LdaPosterior {
  std::vector<std::vector<double>> z_samples;       // points on the simplex
  std::vector<std::vector<double>> alpha_primes;    // alpha' = alpha + topic counts
  std::vector<std::vector<int>> assignment_samples; // t snapshots, one per z draw
};

struct LdaPosteriorOptions {
  int num_samples = 32;
  int burn_in = 50;
  int thin = 5;
  std::uint64_t seed = 0;
};

// Two-stage sampling: collapsed Gibbs over t with phi fixed, then
// z ~ Dirichlet(alpha + counts(t)). Documents with no in-vocabulary tokens
// fall back to the prior.
LdaPosterior lda_posterior(const LdaModel& model, const Document& doc,
                           const LdaPosteriorOptions& options);

struct CodeMixingReport {
  std::vector<std::string> doc_ids;
  std::vector<double> entropy;              // per-doc entropy of mean proportions
  std::vector<std::vector<double>> mean_z;  // per-doc mean posterior proportions
  double mean_entropy = 0.0;
};

CodeMixingReport code_mixing_statistic(const LdaModel& model, const std::vector<Document>& docs,
                                       const LdaPosteriorOptions& options);

std::string code_mixing_csv(const CodeMixingReport& report);

// Exact log-marginal decomposition over the topic-assignment latents, by
// enumerating all M^N assignments; only valid for tiny documents.
Decomposition lda_decompose_tiny(const LdaModel& model, const Document& doc);

// T(x) = -E log Dirichlet(z; alpha) over two-stage posterior samples.
class LdaCritic : public Critic {
 public:
  LdaCritic(LdaModel model, LdaPosteriorOptions posterior_options)
      : model_(std::move(model)), posterior_options_(posterior_options) {}
  std::string name() const override { return "lda"; }
  std::string fingerprint() const override { return model_.fingerprint(); }
  LatentProjection project(const Document& doc, ProjectionMode mode,
                           std::uint64_t seed) const override;
  Decomposition decompose(const Document& doc) const override {
    return lda_decompose_tiny(model_, doc);
  }
  const LdaModel& model() const { return model_; }

 private:
  LdaModel model_;
  LdaPosteriorOptions posterior_options_;
};

double log_dirichlet_density(const std::vector<double>& z, const std::vector<double>& alpha);

}  // namespace critic
