#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "critic/corpus.hpp"
#include "critic/scores.hpp"

namespace critic {

// Hidden semi-Markov model over `<s>`-terminated token segments. Segment
// boundaries are observed, so inference reduces to an HMM over segment keys.
// Probabilities are kept in log space throughout.
struct Hsmm {
  int num_states = 0;
  bool uses_end_state = false;
  std::vector<double> log_initial;     // K: P(z_1 | z_0)
  std::vector<double> log_transition;  // K*K row-major: P(z' | z)
  std::vector<double> log_final;       // K: P(end | z); empty unless uses_end_state

  std::vector<std::string> segments;          // dense segment ids, sorted keys
  std::unordered_map<std::string, int> segment_index;
  std::vector<double> log_emission;    // S*K: log P(segment s | state k)

  double trans(int from, int to) const {
    return log_transition[static_cast<std::size_t>(from) * num_states + to];
  }
  double emit(int seg, int state) const {
    return log_emission[static_cast<std::size_t>(seg) * num_states + state];
  }
  int segment_id(const std::string& key) const;  // raises UnknownSegment
  // True when every segment is emitted by exactly one state, which makes the
  // posterior a delta distribution recoverable by lookup.
  bool delta_posterior() const;

  void rebuild_index();
  std::string fingerprint() const;
};

struct SyntheticConfig {
  int num_states = 256;
  int segments_per_seq = 50;
  int num_segment_types = 10000;
  int segment_len_min = 4;   // tokens per segment, including the trailing <s>
  int segment_len_max = 11;
  int alphabet_size = 53;    // 52 letters + <s>
  double transition_temperature = 0.5;
  double emission_temperature = 0.3;
  int train_size = 51200;
  int val_size = 6400;
  int test_size = 6400;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Hsmm truth;
  std::vector<Document> train;
  std::vector<Document> val;
  std::vector<Document> test;
};

SyntheticData generate_synthetic(const SyntheticConfig& config);

// Posterior over the latent state sequence given the observed segmentation.
struct StatePosterior {
  std::vector<int> map_path;                    // Viterbi path (== the delta path)
  std::vector<std::vector<double>> marginals;   // per-position P(z_m | x)
  bool delta = false;
};

StatePosterior segment_posterior(const Hsmm& model, const Document& doc);

double log_marginal(const Hsmm& model, const Document& doc);

// T_c(x) per latent position: -log P(z_m | z_{m-1}) along the projected path,
// plus the end transition as a final position when the model uses one.
// MonteCarlo averages over posterior path samples drawn with forward-filter
// backward-sampling.
LatentProjection hsmm_project(const Hsmm& model, const Document& doc, ProjectionMode mode,
                              std::uint64_t seed);

Decomposition hsmm_decompose(const Hsmm& model, const Document& doc);

// exp(-sum log P(x) / sum tokens) over the corpus; the HSMM as a language model.
double hsmm_word_perplexity(const Hsmm& model, const std::vector<Document>& docs);

struct FitHsmmOptions {
  int num_states = 32;
  int max_iters = 100;
  double tol = 1e-4;              // stop when val log-marginal gain per doc < tol
  double trans_smoothing = 1e-3;
  double emis_smoothing = 1e-6;
  std::size_t max_segment_types = 0;  // 0 = keep every distinct training segment
  std::uint64_t seed = 0;
};

struct FitHsmmResult {
  Hsmm model;
  std::vector<double> train_log_marginal;  // per EM iteration, total over corpus
  std::vector<double> val_log_marginal;
  int iterations = 0;
  int reseeded_states = 0;
};

// EM on the segment-level HMM with observed segmentation.
FitHsmmResult fit_hsmm(const std::vector<Document>& train, const std::vector<Document>& val,
                       const FitHsmmOptions& options);

struct HsmmSampleOptions {
  int num_docs = 0;
  int max_segments = 0;  // required when the model has no end state
  std::uint64_t seed = 0;
  std::string id_prefix = "sample";
};

std::vector<Document> hsmm_sample(const Hsmm& model, const HsmmSampleOptions& options);

class HsmmCritic : public Critic {
 public:
  explicit HsmmCritic(Hsmm model) : model_(std::move(model)) {}
  std::string name() const override { return "hsmm"; }
  std::string fingerprint() const override { return model_.fingerprint(); }
  LatentProjection project(const Document& doc, ProjectionMode mode,
                           std::uint64_t seed) const override {
    return hsmm_project(model_, doc, mode, seed);
  }
  Decomposition decompose(const Document& doc) const override {
    return hsmm_decompose(model_, doc);
  }
  const Hsmm& model() const { return model_; }

 private:
  Hsmm model_;
};

}  // namespace critic
