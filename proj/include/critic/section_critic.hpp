#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "critic/corpus.hpp"
#include "critic/scores.hpp"

namespace critic {

// Multinomial naive-Bayes section classifier with additive smoothing. It
// approximates the section-type posterior from the section text alone.
struct SectionClassifier {
  std::vector<std::string> labels;                 // sorted
  std::vector<double> log_prior;                   // per label
  std::vector<std::string> vocab;                  // sorted observed tokens
  std::map<std::string, int> vocab_index;
  std::vector<std::vector<double>> log_likelihood; // labels x vocab
  double alpha = 1.0;

  std::string fingerprint() const;
};

SectionClassifier fit_section_classifier(const std::vector<Document>& docs, double alpha = 1.0);

// Posterior over labels for one section (tokens unseen in training are skipped).
std::vector<double> classify(const SectionClassifier& classifier, const Section& section);
int classify_map(const SectionClassifier& classifier, const Section& section);

// Label-bigram transition table with begin/end states and additive smoothing.
struct LabelTransitions {
  std::vector<std::string> labels;  // sorted; begin and end are implicit extra states
  std::vector<double> prob;         // (K+1) x (K+1): rows begin,labels; cols labels,end
  double smoothing = 1e-3;

  int index(const std::string& label) const;
  // from == -1 means the begin state; to == K means the end state.
  double transition(int from, int to) const;
  std::string fingerprint() const;
};

LabelTransitions fit_transition_prior(const std::vector<Document>& docs, double smoothing = 1e-3);

struct TransitionEdge {
  std::string from;  // "<bos>" for the begin state
  std::string to;    // "<eos>" for the end state
  double prior_prob = 0.0;
  double sample_prob = 0.0;
  double diff = 0.0;  // sample - prior
  bool unlikely = false;
  long long sample_count = 0;
};

struct TransitionErrorRow {
  std::string from;
  std::string to;
  long long count = 0;
  double frequency = 0.0;  // fraction of all sample transitions
};

struct TransitionReport {
  std::vector<std::string> labels;
  std::vector<TransitionEdge> edges;        // every edge observed in the samples
  std::vector<TransitionErrorRow> errors;   // prior < error_threshold, by frequency desc
  long long total_transitions = 0;
  long long total_failures = 0;
  double failure_frequency = 0.0;
  double repetition_fraction = 0.0;  // among errors, share with identical from/to
  double unlikely_threshold = 0.05;
  double error_threshold = 0.01;
  std::map<std::string, long long> sample_label_counts;
};

// Classifies every sample section (MAP), derives empirical transition
// frequencies and compares them with the data prior.
TransitionReport transition_diff_report(const LabelTransitions& prior,
                                        const std::vector<Document>& samples,
                                        const SectionClassifier& classifier,
                                        double unlikely_threshold = 0.05,
                                        double error_threshold = 0.01);

// Fig-3-style DOT graph: top_k labels by sample frequency, singletons removed,
// edges labeled with the probability difference, red marks unlikely priors.
std::string transition_report_dot(const TransitionReport& report, int top_k = 20);
std::string transition_report_error_csv(const TransitionReport& report);

// The HSMM section critic: classifier posterior (MAP) composed with the label
// transition prior. Positions are the M+1 transitions including begin and end.
class SectionCritic : public Critic {
 public:
  SectionCritic(SectionClassifier classifier, LabelTransitions prior);
  std::string name() const override { return "section"; }
  std::string fingerprint() const override;
  LatentProjection project(const Document& doc, ProjectionMode mode,
                           std::uint64_t seed) const override;

  const SectionClassifier& classifier() const { return classifier_; }
  const LabelTransitions& prior() const { return prior_; }

 private:
  SectionClassifier classifier_;
  LabelTransitions prior_;
};

}  // namespace critic
