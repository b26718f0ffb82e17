#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "critic/corpus.hpp"
#include "critic/ngram.hpp"
#include "critic/scores.hpp"

namespace critic {

enum class Gender { Male, Female, Plural, None };

char gender_letter(Gender g);

struct ChainSymbol {
  enum class Kind { Mention, Pronoun, Boundary, Pad };
  Kind kind = Kind::Pad;
  Gender gender = Gender::None;  // Mention only
  std::string surface;           // Pronoun only
  int entity = -1;               // Mention/Pronoun

  bool operator==(const ChainSymbol&) const = default;

  static ChainSymbol mention(Gender g, int entity) { return {Kind::Mention, g, "", entity}; }
  static ChainSymbol pronoun(std::string surface, int entity) {
    return {Kind::Pronoun, Gender::None, std::move(surface), entity};
  }
  static ChainSymbol boundary() { return {Kind::Boundary, Gender::None, "", -1}; }
  static ChainSymbol pad() { return {Kind::Pad, Gender::None, "", -1}; }

  // Model alphabet string, e.g. "M_0", "him_1", ".", "<pad>".
  std::string text() const;
};

// Majority gender over the gendered pronouns coreferring with the entity;
// ties broken by the fixed priority M, F, P. None when no gendered pronoun
// corefers.
Gender assign_gender(const std::vector<Mention>& mentions, int entity_id);

// One symbol per mention in document order: proper nouns replaced by their
// assigned gender, pronouns keep their surface, and a boundary symbol marks
// every sentence change. Entity ids are renumbered by first occurrence.
std::vector<ChainSymbol> extract_chain(const Document& doc);

// Entity ids remapped to first-occurrence order within the window; boundary
// and pad symbols occupy a slot but carry no id.
std::vector<ChainSymbol> relabel_window(std::vector<ChainSymbol> window);

// All length-n windows of the chain, left-padded and relabeled.
std::vector<std::vector<std::string>> chain_windows(const std::vector<ChainSymbol>& chain, int n);

struct ChainKnOptions {
  KnOptions kn;  // order 5, paper discount by default
};

NgramModel fit_chain_critic(const std::vector<std::vector<ChainSymbol>>& chains,
                            const ChainKnOptions& options);

// Per-position NLL of -log P(sym_i | previous 4 symbols) with per-window
// relabeling applied independently at every position.
LatentProjection chain_latent_nll(const NgramModel& model, const std::vector<ChainSymbol>& chain);

struct ContributionRow {
  std::vector<std::string> gram;  // length n, "<pad>" entries for padding
  double freq_data = 0.0;         // fraction of windows
  double freq_samples = 0.0;
  double contribution = 0.0;      // (freq_samples - freq_data) * (-log P_data)
};

struct LogProbDiffRow {
  std::vector<std::string> gram;
  long long count_data = 0;
  long long count_samples = 0;
  double logp_data = 0.0;
  double logp_samples = 0.0;
  double diff = 0.0;  // logp_samples - logp_data
};

struct NgramRanking {
  std::vector<ContributionRow> contributions;   // descending
  std::vector<LogProbDiffRow> logprob_diffs;    // descending by diff
};

// Table-4-style ranking of windows by their contribution to the Latent NLL
// difference, plus the signed conditional log-probability difference between
// a critic fit on samples and the data critic (windows with count >= min_count
// in both corpora).
NgramRanking contribution_ranking(const NgramModel& model_data,
                                  const std::vector<std::vector<ChainSymbol>>& chains_data,
                                  const std::vector<std::vector<ChainSymbol>>& chains_samples,
                                  int top_k, long long min_count);

struct UnlikelyChainRow {
  std::vector<std::string> context;  // length n-1
  std::string symbol;
  double log_prob = 0.0;
  std::string argmax_symbol;
  double argmax_log_prob = 0.0;
};

std::vector<UnlikelyChainRow> unlikely_chains(const NgramModel& model,
                                              const std::vector<std::vector<ChainSymbol>>& chains,
                                              double log_prob_threshold);

std::string ranking_contributions_csv(const NgramRanking& ranking);
std::string ranking_logprob_csv(const NgramRanking& ranking);
std::string unlikely_chains_csv(const std::vector<UnlikelyChainRow>& rows);

// Chain JSONL: {"doc_id": str, "chain": [{"sym": ..., "entity": int|null}, ...]}
struct ChainRecord {
  std::string doc_id;
  std::vector<ChainSymbol> chain;

  bool operator==(const ChainRecord&) const = default;
};

std::vector<ChainRecord> load_chains(const std::string& path);
void save_chains(const std::vector<ChainRecord>& records, const std::string& path);
std::vector<ChainRecord> chains_from_documents(const std::vector<Document>& docs);

class ChainCritic : public Critic {
 public:
  explicit ChainCritic(NgramModel model) : model_(std::move(model)) {}
  std::string name() const override { return "kn-chain"; }
  std::string fingerprint() const override { return model_.fingerprint(); }
  LatentProjection project(const Document& doc, ProjectionMode mode,
                           std::uint64_t seed) const override {
    (void)mode;
    (void)seed;
    return chain_latent_nll(model_, extract_chain(doc));
  }
  const NgramModel& model() const { return model_; }

 private:
  NgramModel model_;
};

}  // namespace critic
