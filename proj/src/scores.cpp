#include "critic/scores.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "critic/errors.hpp"

namespace critic {

double latent_nll(const LatentProjection& projection) {
  double total = 0.0;
  for (double v : projection.per_position_nll) total += v;
  return total;
}

CriticScore corpus_score(const std::vector<LatentProjection>& projections,
                         const std::string& critic, const std::string& fingerprint) {
  if (projections.empty()) raise(Errc::EmptyInput, "corpus_score requires at least one document");
  CriticScore score;
  score.critic = critic;
  score.fingerprint = fingerprint;
  score.num_docs = static_cast<int>(projections.size());
  double total = 0.0;
  bool discrete = true;
  for (const auto& p : projections) {
    total += latent_nll(p);
    score.total_positions += p.num_positions;
    if (p.kind == LatentKind::Continuous) discrete = false;
  }
  score.latent_nll = total / static_cast<double>(score.num_docs);
  if (discrete && score.total_positions > 0)
    score.latent_ppl = std::exp(total / static_cast<double>(score.total_positions));
  return score;
}

Decomposition decompose_enumerated(std::span<const double> log_prior,
                                   std::span<const double> log_lik) {
  if (log_prior.size() != log_lik.size() || log_prior.empty())
    raise(Errc::Config, "decompose_enumerated requires matching non-empty arrays");
  std::vector<double> log_joint(log_prior.size());
  for (std::size_t i = 0; i < log_prior.size(); ++i) log_joint[i] = log_prior[i] + log_lik[i];
  Decomposition d;
  d.log_marginal = log_sum_exp(log_joint);
  for (std::size_t i = 0; i < log_joint.size(); ++i) {
    const double post = std::exp(log_joint[i] - d.log_marginal);
    if (post <= 0.0) continue;
    d.prior_term += post * log_prior[i];
    d.reconstruction_term += post * log_lik[i];
    d.posterior_entropy -= post * std::log(post);
  }
  return d;
}

std::vector<std::pair<std::string, double>> rank_outliers(
    const std::vector<std::pair<std::string, LatentProjection>>& projections, int top_k) {
  if (top_k < 1) raise(Errc::Config, "top_k must be >= 1");
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(projections.size());
  for (const auto& [id, proj] : projections) scored.emplace_back(id, latent_nll(proj));
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(scored.size()) > top_k) scored.resize(static_cast<std::size_t>(top_k));
  return scored;
}

ComparisonReport compare(const CriticScore& reference, const CriticScore& samples) {
  if (reference.fingerprint != samples.fingerprint || reference.critic != samples.critic)
    raise(Errc::CriticMismatch, "scores come from different critics (" + reference.critic + ":" +
                                    reference.fingerprint + " vs " + samples.critic + ":" +
                                    samples.fingerprint + ")");
  ComparisonReport r;
  r.critic = reference.critic;
  r.reference = reference;
  r.samples = samples;
  r.delta_nll = samples.latent_nll - reference.latent_nll;
  if (reference.latent_ppl && samples.latent_ppl)
    r.ppl_ratio = *samples.latent_ppl / *reference.latent_ppl;
  return r;
}

nlohmann::json score_to_json(const CriticScore& s) {
  nlohmann::json j;
  j["latent_nll"] = s.latent_nll;
  j["latent_ppl"] = s.latent_ppl ? nlohmann::json(*s.latent_ppl) : nlohmann::json(nullptr);
  j["num_docs"] = s.num_docs;
  j["total_positions"] = s.total_positions;
  j["critic"] = s.critic;
  j["fingerprint"] = s.fingerprint;
  return j;
}

CriticScore score_from_json(const nlohmann::json& j) {
  CriticScore s;
  s.latent_nll = j.at("latent_nll").get<double>();
  if (j.contains("latent_ppl") && !j["latent_ppl"].is_null())
    s.latent_ppl = j["latent_ppl"].get<double>();
  s.num_docs = j.at("num_docs").get<int>();
  s.total_positions = j.at("total_positions").get<long long>();
  s.critic = j.value("critic", std::string());
  s.fingerprint = j.value("fingerprint", std::string());
  return s;
}

nlohmann::json comparison_to_json(const ComparisonReport& r) {
  nlohmann::json j;
  j["critic"] = r.critic;
  auto strip = [](const CriticScore& s) {
    nlohmann::json js = score_to_json(s);
    js.erase("critic");
    js.erase("fingerprint");
    return js;
  };
  j["reference"] = strip(r.reference);
  j["samples"] = strip(r.samples);
  j["delta_nll"] = r.delta_nll;
  j["ppl_ratio"] = r.ppl_ratio ? nlohmann::json(*r.ppl_ratio) : nlohmann::json(nullptr);
  return j;
}

Decomposition Critic::decompose(const Document& doc) const {
  (void)doc;
  raise(Errc::UnsupportedCritic, "critic '" + name() + "' has no exact inference");
}

Decomposition decompose(const Critic& critic, const Document& doc) {
  return critic.decompose(doc);
}

double log_sum_exp(std::span<const double> x) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

}  // namespace critic
