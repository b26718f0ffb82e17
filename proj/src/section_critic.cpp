#include "critic/section_critic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "critic/errors.hpp"
#include "critic/fingerprint.hpp"

namespace critic {

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_fixed(double v, int decimals) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(decimals) << v;
  return out.str();
}

}  // namespace

std::string SectionClassifier::fingerprint() const {
  Fingerprint fp;
  fp.add(std::string("section-classifier"));
  fp.add(labels).add(log_prior).add(vocab).add(alpha);
  for (const auto& row : log_likelihood) fp.add(row);
  return fp.hex();
}

SectionClassifier fit_section_classifier(const std::vector<Document>& docs, double alpha) {
  std::set<std::string> label_set;
  std::set<std::string> vocab_set;
  for (const auto& doc : docs)
    for (std::size_t s = 0; s < doc.sections.size(); ++s) {
      const auto& sec = doc.sections[s];
      if (!sec.label)
        raise(Errc::UnlabeledSection,
              "document '" + doc.id + "' section " + std::to_string(s) + " has no label");
      label_set.insert(*sec.label);
      for (const auto& tok : sec.tokens) vocab_set.insert(tok);
    }
  if (label_set.empty()) raise(Errc::EmptyLabelSet, "no labeled sections to fit on");

  SectionClassifier c;
  c.alpha = alpha;
  c.labels.assign(label_set.begin(), label_set.end());
  c.vocab.assign(vocab_set.begin(), vocab_set.end());
  for (std::size_t i = 0; i < c.vocab.size(); ++i) c.vocab_index[c.vocab[i]] = static_cast<int>(i);

  const int L = static_cast<int>(c.labels.size());
  const int V = static_cast<int>(c.vocab.size());
  std::map<std::string, int> label_index;
  for (int l = 0; l < L; ++l) label_index[c.labels[static_cast<std::size_t>(l)]] = l;

  std::vector<long long> section_count(static_cast<std::size_t>(L), 0);
  std::vector<std::vector<long long>> token_count(static_cast<std::size_t>(L),
                                                  std::vector<long long>(static_cast<std::size_t>(V), 0));
  std::vector<long long> token_total(static_cast<std::size_t>(L), 0);
  long long total_sections = 0;
  for (const auto& doc : docs)
    for (const auto& sec : doc.sections) {
      const int l = label_index[*sec.label];
      ++section_count[static_cast<std::size_t>(l)];
      ++total_sections;
      for (const auto& tok : sec.tokens) {
        ++token_count[static_cast<std::size_t>(l)][static_cast<std::size_t>(c.vocab_index[tok])];
        ++token_total[static_cast<std::size_t>(l)];
      }
    }

  c.log_prior.resize(static_cast<std::size_t>(L));
  c.log_likelihood.assign(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(V)));
  for (int l = 0; l < L; ++l) {
    c.log_prior[static_cast<std::size_t>(l)] =
        std::log(static_cast<double>(section_count[static_cast<std::size_t>(l)]) /
                 static_cast<double>(total_sections));
    const double denom = static_cast<double>(token_total[static_cast<std::size_t>(l)]) +
                         alpha * static_cast<double>(V);
    for (int v = 0; v < V; ++v)
      c.log_likelihood[static_cast<std::size_t>(l)][static_cast<std::size_t>(v)] =
          std::log((static_cast<double>(token_count[static_cast<std::size_t>(l)][static_cast<std::size_t>(v)]) + alpha) /
                   denom);
  }
  return c;
}

std::vector<double> classify(const SectionClassifier& classifier, const Section& section) {
  const int L = static_cast<int>(classifier.labels.size());
  std::vector<double> logp = classifier.log_prior;
  for (const auto& tok : section.tokens) {
    auto it = classifier.vocab_index.find(tok);
    if (it == classifier.vocab_index.end()) continue;
    for (int l = 0; l < L; ++l)
      logp[static_cast<std::size_t>(l)] +=
          classifier.log_likelihood[static_cast<std::size_t>(l)][static_cast<std::size_t>(it->second)];
  }
  const double norm = log_sum_exp(logp);
  std::vector<double> post(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) post[static_cast<std::size_t>(l)] = std::exp(logp[static_cast<std::size_t>(l)] - norm);
  return post;
}

int classify_map(const SectionClassifier& classifier, const Section& section) {
  const auto post = classify(classifier, section);
  int best = 0;
  for (std::size_t l = 1; l < post.size(); ++l)
    if (post[l] > post[static_cast<std::size_t>(best)]) best = static_cast<int>(l);
  return best;
}

int LabelTransitions::index(const std::string& label) const {
  auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) return -1;
  return static_cast<int>(it - labels.begin());
}

double LabelTransitions::transition(int from, int to) const {
  const int K = static_cast<int>(labels.size());
  const std::size_t row = static_cast<std::size_t>(from + 1);  // begin occupies row 0
  const std::size_t col = static_cast<std::size_t>(to);        // end occupies column K
  return prob[row * static_cast<std::size_t>(K + 1) + col];
}

std::string LabelTransitions::fingerprint() const {
  Fingerprint fp;
  fp.add(std::string("section-prior"));
  fp.add(labels).add(prob).add(smoothing);
  return fp.hex();
}

LabelTransitions fit_transition_prior(const std::vector<Document>& docs, double smoothing) {
  std::set<std::string> label_set;
  for (const auto& doc : docs)
    for (std::size_t s = 0; s < doc.sections.size(); ++s) {
      if (!doc.sections[s].label)
        raise(Errc::UnlabeledSection,
              "document '" + doc.id + "' section " + std::to_string(s) + " has no label");
      label_set.insert(*doc.sections[s].label);
    }
  if (label_set.empty()) raise(Errc::EmptyLabelSet, "no labeled sections to fit on");

  LabelTransitions t;
  t.smoothing = smoothing;
  t.labels.assign(label_set.begin(), label_set.end());
  const int K = static_cast<int>(t.labels.size());
  std::vector<double> count(static_cast<std::size_t>(K + 1) * static_cast<std::size_t>(K + 1), 0.0);
  auto at = [&](int row, int col) -> double& {
    return count[static_cast<std::size_t>(row) * static_cast<std::size_t>(K + 1) +
                 static_cast<std::size_t>(col)];
  };
  for (const auto& doc : docs) {
    int prev = -1;  // begin
    for (const auto& sec : doc.sections) {
      const int cur = t.index(*sec.label);
      at(prev + 1, cur) += 1.0;
      prev = cur;
    }
    at(prev + 1, K) += 1.0;  // end
  }
  t.prob.resize(count.size());
  for (int row = 0; row <= K; ++row) {
    double total = 0.0;
    for (int col = 0; col <= K; ++col) total += at(row, col);
    const double denom = total + smoothing * static_cast<double>(K + 1);
    for (int col = 0; col <= K; ++col)
      t.prob[static_cast<std::size_t>(row) * static_cast<std::size_t>(K + 1) + static_cast<std::size_t>(col)] =
          denom > 0.0 ? (at(row, col) + smoothing) / denom : 1.0 / static_cast<double>(K + 1);
  }
  return t;
}

TransitionReport transition_diff_report(const LabelTransitions& prior,
                                        const std::vector<Document>& samples,
                                        const SectionClassifier& classifier,
                                        double unlikely_threshold, double error_threshold) {
  if (classifier.labels != prior.labels)
    raise(Errc::CriticMismatch, "classifier and transition prior have different label sets");
  const int K = static_cast<int>(prior.labels.size());

  TransitionReport report;
  report.labels = prior.labels;
  report.unlikely_threshold = unlikely_threshold;
  report.error_threshold = error_threshold;

  // Empirical transition counts over MAP label sequences, including begin/end.
  std::map<std::pair<int, int>, long long> counts;  // (from+1, to) with to==K meaning end
  std::vector<long long> row_totals(static_cast<std::size_t>(K + 1), 0);
  for (const auto& doc : samples) {
    int prev = -1;
    for (const auto& sec : doc.sections) {
      const int cur = classify_map(classifier, sec);
      ++counts[{prev + 1, cur}];
      ++row_totals[static_cast<std::size_t>(prev + 1)];
      ++report.sample_label_counts[prior.labels[static_cast<std::size_t>(cur)]];
      prev = cur;
    }
    ++counts[{prev + 1, K}];
    ++row_totals[static_cast<std::size_t>(prev + 1)];
  }
  for (long long c : row_totals) report.total_transitions += c;
  if (report.total_transitions == 0)
    raise(Errc::EmptyInput, "sample corpus has no sections to classify");

  auto edge_name = [&](int idx, bool from) -> std::string {
    if (from && idx == 0) return kBos;
    if (!from && idx == K) return kEos;
    return prior.labels[static_cast<std::size_t>(from ? idx - 1 : idx)];
  };

  for (const auto& [key, c] : counts) {
    const auto [row, col] = key;
    TransitionEdge e;
    e.from = edge_name(row, true);
    e.to = edge_name(col, false);
    e.prior_prob = prior.transition(row - 1, col);
    e.sample_prob = static_cast<double>(c) / static_cast<double>(row_totals[static_cast<std::size_t>(row)]);
    e.diff = e.sample_prob - e.prior_prob;
    e.unlikely = e.prior_prob < unlikely_threshold;
    e.sample_count = c;
    report.edges.push_back(std::move(e));

    if (prior.transition(row - 1, col) < error_threshold) {
      TransitionErrorRow r;
      r.from = edge_name(row, true);
      r.to = edge_name(col, false);
      r.count = c;
      r.frequency = static_cast<double>(c) / static_cast<double>(report.total_transitions);
      report.errors.push_back(std::move(r));
      report.total_failures += c;
    }
  }
  std::sort(report.errors.begin(), report.errors.end(), [](const auto& a, const auto& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.from != b.from) return a.from < b.from;
    return a.to < b.to;
  });
  report.failure_frequency =
      static_cast<double>(report.total_failures) / static_cast<double>(report.total_transitions);
  long long repeats = 0;
  for (const auto& r : report.errors)
    if (r.from == r.to) repeats += r.count;
  report.repetition_fraction =
      report.total_failures > 0 ? static_cast<double>(repeats) / static_cast<double>(report.total_failures) : 0.0;
  return report;
}

std::string transition_report_dot(const TransitionReport& report, int top_k) {
  // Keep the top_k labels by sample frequency; ties by name.
  std::vector<std::pair<long long, std::string>> ranked;
  for (const auto& [label, c] : report.sample_label_counts) ranked.emplace_back(-c, label);
  std::sort(ranked.begin(), ranked.end());
  std::set<std::string> kept;
  for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < top_k; ++i)
    kept.insert(ranked[i].second);

  std::vector<const TransitionEdge*> edges;
  std::set<std::string> connected;
  for (const auto& e : report.edges) {
    if (!kept.count(e.from) || !kept.count(e.to)) continue;
    edges.push_back(&e);
    connected.insert(e.from);
    connected.insert(e.to);
  }

  std::ostringstream out;
  out << "digraph transitions {\n";
  out << "  rankdir=LR;\n";
  for (const auto& label : kept) {
    if (!connected.count(label)) continue;  // singleton removal
    out << "  \"" << label << "\";\n";
  }
  for (const auto* e : edges) {
    const double width = std::max(0.1, 20.0 * std::abs(e->diff));
    out << "  \"" << e->from << "\" -> \"" << e->to << "\" [label=\"" << format_fixed(e->diff, 2)
        << "\", penwidth=" << format_fixed(width, 2);
    if (e->unlikely) out << ", color=red";
    out << "];\n";
  }
  out << "}\n";
  return out.str();
}

std::string transition_report_error_csv(const TransitionReport& report) {
  std::ostringstream out;
  out << "z_prev,z_next,count,frequency\n";
  for (const auto& r : report.errors)
    out << csv_escape(r.from) << ',' << csv_escape(r.to) << ',' << r.count << ','
        << format_fixed(100.0 * r.frequency, 4) << "%\n";
  out << "total failures,-," << report.total_failures << ','
      << format_fixed(100.0 * report.failure_frequency, 4) << "%\n";
  return out.str();
}

SectionCritic::SectionCritic(SectionClassifier classifier, LabelTransitions prior)
    : classifier_(std::move(classifier)), prior_(std::move(prior)) {
  if (classifier_.labels != prior_.labels)
    raise(Errc::CriticMismatch, "classifier and transition prior have different label sets");
}

std::string SectionCritic::fingerprint() const {
  Fingerprint fp;
  fp.add(classifier_.fingerprint()).add(prior_.fingerprint());
  return fp.hex();
}

LatentProjection SectionCritic::project(const Document& doc, ProjectionMode mode,
                                        std::uint64_t seed) const {
  (void)seed;  // the MAP projection is deterministic
  const int K = static_cast<int>(prior_.labels.size());
  LatentProjection proj;
  proj.mode = mode;
  proj.kind = LatentKind::Discrete;
  int prev = -1;
  for (const auto& sec : doc.sections) {
    const int cur = classify_map(classifier_, sec);
    proj.per_position_nll.push_back(-std::log(prior_.transition(prev, cur)));
    prev = cur;
  }
  proj.per_position_nll.push_back(-std::log(prior_.transition(prev, K)));
  proj.num_positions = static_cast<int>(proj.per_position_nll.size());
  return proj;
}

}  // namespace critic
