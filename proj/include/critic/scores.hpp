#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "critic/corpus.hpp"
#include "json.hpp"

namespace critic {

enum class LatentKind { Discrete, Continuous };

struct ProjectionMode {
  enum class Kind { MapEstimate, MonteCarlo };
  Kind kind = Kind::MapEstimate;
  int num_samples = 64;  // only used by MonteCarlo

  static ProjectionMode map() { return {Kind::MapEstimate, 0}; }
  static ProjectionMode monte_carlo(int n) { return {Kind::MonteCarlo, n}; }
};

// Latent-space projection of one document: the per-position negative log prior
// probability of the posterior-projected latents. Under MonteCarlo the entries
// are averages over posterior samples.
struct LatentProjection {
  std::vector<double> per_position_nll;
  int num_positions = 0;
  ProjectionMode mode = ProjectionMode::map();
  LatentKind kind = LatentKind::Discrete;
};

// Total latent NLL of one document: the sum of per-position values.
double latent_nll(const LatentProjection& projection);

struct CriticScore {
  double latent_nll = 0.0;                 // corpus mean of per-document totals
  std::optional<double> latent_ppl;        // exp(total NLL / total positions); discrete only
  int num_docs = 0;
  long long total_positions = 0;
  std::string critic;       // critic kind, e.g. "hsmm"
  std::string fingerprint;  // hash of fitted parameters + config
};

CriticScore corpus_score(const std::vector<LatentProjection>& projections,
                         const std::string& critic = std::string(),
                         const std::string& fingerprint = std::string());

struct Decomposition {
  double prior_term = 0.0;          // E_{P(z|x)} log P(z)  (equals -latent NLL)
  double reconstruction_term = 0.0; // E_{P(z|x)} log P(x|z)
  double posterior_entropy = 0.0;   // H(P(z|x))
  double log_marginal = 0.0;        // log P(x)
};

// Exact decomposition from an enumeration of all latent assignments, given
// parallel arrays of log prior and log likelihood values.
Decomposition decompose_enumerated(std::span<const double> log_prior,
                                   std::span<const double> log_lik);

std::vector<std::pair<std::string, double>> rank_outliers(
    const std::vector<std::pair<std::string, LatentProjection>>& projections, int top_k);

struct ComparisonReport {
  std::string critic;
  CriticScore reference;
  CriticScore samples;
  double delta_nll = 0.0;
  std::optional<double> ppl_ratio;
};

// Both scores must come from the same fitted critic (matching fingerprints).
ComparisonReport compare(const CriticScore& reference, const CriticScore& samples);

nlohmann::json score_to_json(const CriticScore& s);
CriticScore score_from_json(const nlohmann::json& j);
nlohmann::json comparison_to_json(const ComparisonReport& r);

// A fitted critic: projects documents into its latent space. Critics that
// support exact inference also expose the log-marginal decomposition.
class Critic {
 public:
  virtual ~Critic() = default;
  virtual std::string name() const = 0;
  virtual std::string fingerprint() const = 0;
  virtual LatentProjection project(const Document& doc, ProjectionMode mode,
                                   std::uint64_t seed) const = 0;
  virtual Decomposition decompose(const Document& doc) const;
};

Decomposition decompose(const Critic& critic, const Document& doc);

// log(sum_i exp(x_i)) without overflow.
double log_sum_exp(std::span<const double> x);

}  // namespace critic
