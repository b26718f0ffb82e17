#include "critic/chains.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "critic/errors.hpp"
#include "json.hpp"

namespace critic {

using nlohmann::json;

namespace {

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Closed pronoun lexicon for gender voting; other pronouns cast no vote.
int gender_vote(const std::string& surface) {
  static const std::map<std::string, int> kVotes = {
      {"he", 0},   {"him", 0},   {"his", 0},    {"himself", 0},
      {"she", 1},  {"her", 1},   {"hers", 1},   {"herself", 1},
      {"they", 2}, {"them", 2},  {"their", 2},  {"themselves", 2},
  };
  auto it = kVotes.find(lowercase(surface));
  return it == kVotes.end() ? -1 : it->second;
}

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

}  // namespace

char gender_letter(Gender g) {
  switch (g) {
    case Gender::Male: return 'M';
    case Gender::Female: return 'F';
    case Gender::Plural: return 'P';
    case Gender::None: return 'N';
  }
  return 'N';
}

std::string ChainSymbol::text() const {
  switch (kind) {
    case Kind::Mention:
      return std::string(1, gender_letter(gender)) + "_" + std::to_string(entity);
    case Kind::Pronoun:
      return surface + "_" + std::to_string(entity);
    case Kind::Boundary:
      return ".";
    case Kind::Pad:
      return kPad;
  }
  return kPad;
}

Gender assign_gender(const std::vector<Mention>& mentions, int entity_id) {
  long long votes[3] = {0, 0, 0};
  bool found = false;
  for (const auto& m : mentions) {
    if (m.entity_id != entity_id) continue;
    found = true;
    if (m.kind != MentionKind::Pronoun) continue;
    const int v = gender_vote(m.surface);
    if (v >= 0) ++votes[v];
  }
  if (!found) raise(Errc::Config, "entity " + std::to_string(entity_id) + " has no mentions");
  if (votes[0] == 0 && votes[1] == 0 && votes[2] == 0) return Gender::None;
  // Majority; ties fall to the earlier entry of M, F, P.
  int best = 0;
  for (int g = 1; g < 3; ++g)
    if (votes[g] > votes[best]) best = g;
  return best == 0 ? Gender::Male : best == 1 ? Gender::Female : Gender::Plural;
}

std::vector<ChainSymbol> extract_chain(const Document& doc) {
  if (!doc.mentions)
    raise(Errc::MissingMentions, "document '" + doc.id + "' carries no mention annotations");
  const auto& mentions = *doc.mentions;
  std::vector<ChainSymbol> chain;
  if (mentions.empty()) return chain;

  std::map<int, int> entity_order;  // original id -> first-occurrence id
  std::map<int, Gender> gender_cache;
  int prev_sentence = mentions.front().sentence;
  for (const auto& m : mentions) {
    if (m.sentence != prev_sentence) {
      chain.push_back(ChainSymbol::boundary());
      prev_sentence = m.sentence;
    }
    const int entity =
        entity_order.emplace(m.entity_id, static_cast<int>(entity_order.size())).first->second;
    if (m.kind == MentionKind::Pronoun) {
      chain.push_back(ChainSymbol::pronoun(m.surface, entity));
    } else {
      auto git = gender_cache.find(m.entity_id);
      if (git == gender_cache.end())
        git = gender_cache.emplace(m.entity_id, assign_gender(mentions, m.entity_id)).first;
      chain.push_back(ChainSymbol::mention(git->second, entity));
    }
  }
  return chain;
}

std::vector<ChainSymbol> relabel_window(std::vector<ChainSymbol> window) {
  std::map<int, int> order;
  for (auto& sym : window) {
    if (sym.entity < 0) continue;
    sym.entity = order.emplace(sym.entity, static_cast<int>(order.size())).first->second;
  }
  return window;
}

std::vector<std::vector<std::string>> chain_windows(const std::vector<ChainSymbol>& chain, int n) {
  std::vector<std::vector<std::string>> windows;
  windows.reserve(chain.size());
  for (std::size_t i = 0; i < chain.size(); ++i) {
    std::vector<ChainSymbol> w;
    w.reserve(static_cast<std::size_t>(n));
    for (int j = n - 1; j >= 0; --j) {
      const long long pos = static_cast<long long>(i) - j;
      w.push_back(pos < 0 ? ChainSymbol::pad() : chain[static_cast<std::size_t>(pos)]);
    }
    w = relabel_window(std::move(w));
    std::vector<std::string> texts;
    texts.reserve(w.size());
    for (const auto& sym : w) texts.push_back(sym.text());
    windows.push_back(std::move(texts));
  }
  return windows;
}

NgramModel fit_chain_critic(const std::vector<std::vector<ChainSymbol>>& chains,
                            const ChainKnOptions& options) {
  std::vector<std::vector<std::string>> windows;
  for (const auto& chain : chains) {
    auto w = chain_windows(chain, options.kn.order);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                   std::make_move_iterator(w.end()));
  }
  if (windows.empty()) raise(Errc::EmptyTrainingData, "no chain symbols to fit on");
  return NgramModel::fit_windows(windows, options.kn);
}

LatentProjection chain_latent_nll(const NgramModel& model, const std::vector<ChainSymbol>& chain) {
  LatentProjection proj;
  proj.mode = ProjectionMode::map();
  proj.kind = LatentKind::Discrete;
  const int n = model.order();
  for (const auto& window : chain_windows(chain, n)) {
    std::vector<int> ids;
    ids.reserve(window.size());
    for (const auto& s : window) ids.push_back(model.symbol_id(s));
    const int target = ids.back();
    ids.pop_back();
    proj.per_position_nll.push_back(-model.log_prob_ids(ids, target));
  }
  proj.num_positions = static_cast<int>(proj.per_position_nll.size());
  return proj;
}

namespace {

std::map<std::vector<std::string>, long long> window_counts(
    const std::vector<std::vector<ChainSymbol>>& chains, int n, long long* total) {
  std::map<std::vector<std::string>, long long> counts;
  long long t = 0;
  for (const auto& chain : chains)
    for (auto& w : chain_windows(chain, n)) {
      ++counts[w];
      ++t;
    }
  if (total) *total = t;
  return counts;
}

double window_log_prob(const NgramModel& model, const std::vector<std::string>& gram) {
  std::vector<int> ids;
  ids.reserve(gram.size());
  for (const auto& s : gram) ids.push_back(model.symbol_id(s));
  const int target = ids.back();
  ids.pop_back();
  return model.log_prob_ids(ids, target);
}

}  // namespace

NgramRanking contribution_ranking(const NgramModel& model_data,
                                  const std::vector<std::vector<ChainSymbol>>& chains_data,
                                  const std::vector<std::vector<ChainSymbol>>& chains_samples,
                                  int top_k, long long min_count) {
  if (chains_data.empty() || chains_samples.empty())
    raise(Errc::EmptyInput, "contribution_ranking requires two non-empty chain corpora");
  const int n = model_data.order();
  long long total_data = 0;
  long long total_samples = 0;
  const auto counts_data = window_counts(chains_data, n, &total_data);
  const auto counts_samples = window_counts(chains_samples, n, &total_samples);
  if (total_data == 0 || total_samples == 0)
    raise(Errc::EmptyInput, "contribution_ranking requires non-empty chains");

  NgramRanking ranking;
  std::map<std::vector<std::string>, std::pair<long long, long long>> merged;
  for (const auto& [gram, c] : counts_data) merged[gram].first = c;
  for (const auto& [gram, c] : counts_samples) merged[gram].second = c;

  for (const auto& [gram, cs] : merged) {
    ContributionRow row;
    row.gram = gram;
    row.freq_data = static_cast<double>(cs.first) / static_cast<double>(total_data);
    row.freq_samples = static_cast<double>(cs.second) / static_cast<double>(total_samples);
    row.contribution = (row.freq_samples - row.freq_data) * (-window_log_prob(model_data, gram));
    ranking.contributions.push_back(std::move(row));
  }
  std::sort(ranking.contributions.begin(), ranking.contributions.end(),
            [](const ContributionRow& a, const ContributionRow& b) {
              if (a.contribution != b.contribution) return a.contribution > b.contribution;
              return a.gram < b.gram;
            });
  if (top_k > 0 && static_cast<int>(ranking.contributions.size()) > top_k)
    ranking.contributions.resize(static_cast<std::size_t>(top_k));

  // Conditional log-probability differences need a sample-side critic of the
  // same shape.
  ChainKnOptions sample_options;
  sample_options.kn = model_data.options();
  const NgramModel model_samples = fit_chain_critic(chains_samples, sample_options);
  for (const auto& [gram, cs] : merged) {
    if (cs.first < min_count || cs.second < min_count) continue;
    LogProbDiffRow row;
    row.gram = gram;
    row.count_data = cs.first;
    row.count_samples = cs.second;
    row.logp_data = window_log_prob(model_data, gram);
    row.logp_samples = window_log_prob(model_samples, gram);
    row.diff = row.logp_samples - row.logp_data;
    ranking.logprob_diffs.push_back(std::move(row));
  }
  std::sort(ranking.logprob_diffs.begin(), ranking.logprob_diffs.end(),
            [](const LogProbDiffRow& a, const LogProbDiffRow& b) {
              if (a.diff != b.diff) return a.diff > b.diff;
              return a.gram < b.gram;
            });
  if (top_k > 0 && static_cast<int>(ranking.logprob_diffs.size()) > top_k)
    ranking.logprob_diffs.resize(static_cast<std::size_t>(top_k));
  return ranking;
}

std::vector<UnlikelyChainRow> unlikely_chains(const NgramModel& model,
                                              const std::vector<std::vector<ChainSymbol>>& chains,
                                              double log_prob_threshold) {
  std::vector<UnlikelyChainRow> rows;
  const int n = model.order();
  const int pad = model.pad_id();
  for (const auto& chain : chains)
    for (const auto& window : chain_windows(chain, n)) {
      std::vector<int> ids;
      ids.reserve(window.size());
      for (const auto& s : window) ids.push_back(model.symbol_id(s));
      const int target = ids.back();
      ids.pop_back();
      const double logp = model.log_prob_ids(ids, target);
      if (logp >= log_prob_threshold) continue;
      UnlikelyChainRow row;
      row.context = std::vector<std::string>(window.begin(), window.end() - 1);
      row.symbol = window.back();
      row.log_prob = logp;
      const auto cond = model.conditional(ids);
      int best = -1;
      for (std::size_t w = 0; w < cond.size(); ++w) {
        if (static_cast<int>(w) == pad) continue;
        if (best < 0 || cond[w] > cond[static_cast<std::size_t>(best)]) best = static_cast<int>(w);
      }
      row.argmax_symbol = model.alphabet()[static_cast<std::size_t>(best)];
      row.argmax_log_prob = std::log(cond[static_cast<std::size_t>(best)]);
      rows.push_back(std::move(row));
    }
  std::sort(rows.begin(), rows.end(), [](const UnlikelyChainRow& a, const UnlikelyChainRow& b) {
    if (a.log_prob != b.log_prob) return a.log_prob < b.log_prob;
    if (a.context != b.context) return a.context < b.context;
    return a.symbol < b.symbol;
  });
  return rows;
}

std::string ranking_contributions_csv(const NgramRanking& ranking) {
  std::ostringstream out;
  const std::size_t n = ranking.contributions.empty() ? 5 : ranking.contributions[0].gram.size();
  for (std::size_t i = 1; i <= n; ++i) out << 'z' << i << ',';
  out << "freq_data,freq_samples,contribution\n";
  for (const auto& row : ranking.contributions) {
    for (const auto& s : row.gram) out << csv_escape(s) << ',';
    out << row.freq_data << ',' << row.freq_samples << ',' << row.contribution << '\n';
  }
  return out.str();
}

std::string ranking_logprob_csv(const NgramRanking& ranking) {
  std::ostringstream out;
  const std::size_t n = ranking.logprob_diffs.empty() ? 5 : ranking.logprob_diffs[0].gram.size();
  for (std::size_t i = 1; i <= n; ++i) out << 'z' << i << ',';
  out << "count_data,count_samples,logp_data,logp_samples,diff\n";
  for (const auto& row : ranking.logprob_diffs) {
    for (const auto& s : row.gram) out << csv_escape(s) << ',';
    out << row.count_data << ',' << row.count_samples << ',' << row.logp_data << ','
        << row.logp_samples << ',' << row.diff << '\n';
  }
  return out.str();
}

std::string unlikely_chains_csv(const std::vector<UnlikelyChainRow>& rows) {
  std::ostringstream out;
  const std::size_t n = rows.empty() ? 4 : rows[0].context.size();
  for (std::size_t i = 1; i <= n; ++i) out << 'z' << i << ',';
  out << 'z' << n + 1 << ",log_prob,argmax,argmax_log_prob\n";
  for (const auto& row : rows) {
    for (const auto& s : row.context) out << csv_escape(s) << ',';
    out << csv_escape(row.symbol) << ',' << row.log_prob << ',' << csv_escape(row.argmax_symbol)
        << ',' << row.argmax_log_prob << '\n';
  }
  return out.str();
}

std::vector<ChainRecord> load_chains(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::Io, "cannot open " + path);
  std::vector<ChainRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      raise(Errc::Parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    ChainRecord rec;
    if (!j.contains("doc_id") || !j["doc_id"].is_string() || !j.contains("chain") ||
        !j["chain"].is_array())
      raise(Errc::Parse, "line " + std::to_string(line_no) + ": expected doc_id and chain");
    rec.doc_id = j["doc_id"].get<std::string>();
    for (const auto& js : j["chain"]) {
      if (!js.is_object() || !js.contains("sym") || !js["sym"].is_string())
        raise(Errc::Parse, "line " + std::to_string(line_no) + ": malformed chain symbol");
      const std::string sym = js["sym"].get<std::string>();
      const bool has_entity = js.contains("entity") && !js["entity"].is_null();
      ChainSymbol s;
      if (sym == ".") {
        s = ChainSymbol::boundary();
      } else if (sym == kPad) {
        s = ChainSymbol::pad();
      } else if (!has_entity) {
        raise(Errc::Parse, "line " + std::to_string(line_no) + ": mention symbol needs an entity");
      } else {
        const int entity = js["entity"].get<int>();
        if (sym.size() == 1 && (sym == "M" || sym == "F" || sym == "P" || sym == "N")) {
          const Gender g = sym == "M"   ? Gender::Male
                           : sym == "F" ? Gender::Female
                           : sym == "P" ? Gender::Plural
                                        : Gender::None;
          s = ChainSymbol::mention(g, entity);
        } else {
          s = ChainSymbol::pronoun(sym, entity);
        }
      }
      rec.chain.push_back(std::move(s));
    }
    records.push_back(std::move(rec));
  }
  if (in.bad()) raise(Errc::Io, "read failure on " + path);
  return records;
}

void save_chains(const std::vector<ChainRecord>& records, const std::string& path) {
  std::ostringstream out;
  for (const auto& rec : records) {
    json arr = json::array();
    for (const auto& s : rec.chain) {
      json js;
      switch (s.kind) {
        case ChainSymbol::Kind::Mention:
          js["sym"] = std::string(1, gender_letter(s.gender));
          js["entity"] = s.entity;
          break;
        case ChainSymbol::Kind::Pronoun:
          js["sym"] = s.surface;
          js["entity"] = s.entity;
          break;
        case ChainSymbol::Kind::Boundary:
          js["sym"] = ".";
          js["entity"] = nullptr;
          break;
        case ChainSymbol::Kind::Pad:
          js["sym"] = kPad;
          js["entity"] = nullptr;
          break;
      }
      arr.push_back(std::move(js));
    }
    json j;
    j["doc_id"] = rec.doc_id;
    j["chain"] = std::move(arr);
    out << j.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<ChainRecord> chains_from_documents(const std::vector<Document>& docs) {
  std::vector<ChainRecord> records;
  records.reserve(docs.size());
  for (const auto& doc : docs) records.push_back({doc.id, extract_chain(doc)});
  return records;
}

}  // namespace critic
