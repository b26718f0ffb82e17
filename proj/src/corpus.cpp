#include "critic/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "critic/errors.hpp"
#include "json.hpp"

namespace critic {

using nlohmann::json;

namespace {

const char* kReserved[] = {kSegmentEnd, kBos, kEos, kPad};

bool has_whitespace(const std::string& s) {
  return s.find_first_of(" \t\n\r\f\v") != std::string::npos;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& cause) {
  raise(Errc::Parse, "line " + std::to_string(line) + ": " + cause);
}

Document parse_record(const json& j, std::size_t line) {
  Document doc;
  if (!j.is_object()) parse_fail(line, "record is not a JSON object");
  if (!j.contains("id") || !j["id"].is_string()) parse_fail(line, "missing string field 'id'");
  doc.id = j["id"].get<std::string>();
  if (doc.id.empty()) parse_fail(line, "'id' must be non-empty");

  if (!j.contains("sections") || !j["sections"].is_array() || j["sections"].empty())
    parse_fail(line, "missing non-empty array field 'sections'");
  for (const auto& js : j["sections"]) {
    Section sec;
    if (!js.is_object() || !js.contains("tokens") || !js["tokens"].is_array() ||
        js["tokens"].empty())
      parse_fail(line, "section must carry a non-empty 'tokens' array");
    if (js.contains("label") && !js["label"].is_null()) {
      if (!js["label"].is_string()) parse_fail(line, "section 'label' must be string or null");
      sec.label = js["label"].get<std::string>();
    }
    for (const auto& jt : js["tokens"]) {
      if (!jt.is_string()) parse_fail(line, "token must be a string");
      std::string tok = jt.get<std::string>();
      if (tok.empty()) parse_fail(line, "empty token");
      if (has_whitespace(tok)) parse_fail(line, "token contains whitespace: '" + tok + "'");
      sec.tokens.push_back(std::move(tok));
    }
    doc.sections.push_back(std::move(sec));
  }

  if (j.contains("mentions") && !j["mentions"].is_null()) {
    if (!j["mentions"].is_array()) parse_fail(line, "'mentions' must be an array or null");
    std::vector<Mention> mentions;
    int prev_sentence = std::numeric_limits<int>::min();
    for (const auto& jm : j["mentions"]) {
      Mention m;
      if (!jm.is_object()) parse_fail(line, "mention must be an object");
      for (const char* field : {"entity_id", "section", "token", "sentence"})
        if (!jm.contains(field) || !jm[field].is_number_integer())
          parse_fail(line, std::string("mention missing integer field '") + field + "'");
      m.entity_id = jm["entity_id"].get<int>();
      m.section = jm["section"].get<int>();
      m.token = jm["token"].get<int>();
      m.sentence = jm["sentence"].get<int>();
      if (m.entity_id < 0) parse_fail(line, "mention entity_id must be >= 0");
      if (m.section < 0 || m.section >= static_cast<int>(doc.sections.size()))
        parse_fail(line, "mention section index out of range");
      const auto& toks = doc.sections[static_cast<std::size_t>(m.section)].tokens;
      if (m.token < 0 || m.token >= static_cast<int>(toks.size()))
        parse_fail(line, "mention token index out of range");
      if (m.sentence < prev_sentence)
        parse_fail(line, "mention sentence indices must be non-decreasing");
      prev_sentence = m.sentence;
      if (!jm.contains("kind") || !jm["kind"].is_string())
        parse_fail(line, "mention missing string field 'kind'");
      const std::string kind = jm["kind"].get<std::string>();
      if (kind == "proper")
        m.kind = MentionKind::ProperNoun;
      else if (kind == "pronoun")
        m.kind = MentionKind::Pronoun;
      else
        parse_fail(line, "mention kind must be 'proper' or 'pronoun'");
      if (!jm.contains("surface") || !jm["surface"].is_string())
        parse_fail(line, "mention missing string field 'surface'");
      m.surface = jm["surface"].get<std::string>();
      mentions.push_back(std::move(m));
    }
    doc.mentions = std::move(mentions);
  }
  return doc;
}

json record_to_json(const Document& doc) {
  json sections = json::array();
  for (const auto& s : doc.sections) {
    json js;
    js["label"] = s.label ? json(*s.label) : json(nullptr);
    js["tokens"] = s.tokens;
    sections.push_back(std::move(js));
  }
  json j;
  j["id"] = doc.id;
  j["sections"] = std::move(sections);
  if (doc.mentions) {
    json arr = json::array();
    for (const auto& m : *doc.mentions) {
      json jm;
      jm["entity_id"] = m.entity_id;
      jm["section"] = m.section;
      jm["token"] = m.token;
      jm["kind"] = m.kind == MentionKind::ProperNoun ? "proper" : "pronoun";
      jm["surface"] = m.surface;
      jm["sentence"] = m.sentence;
      arr.push_back(std::move(jm));
    }
    j["mentions"] = std::move(arr);
  } else {
    j["mentions"] = nullptr;
  }
  return j;
}

}  // namespace

std::vector<Document> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::Io, "cannot open " + path);
  std::vector<Document> docs;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      parse_fail(line_no, e.what());
    }
    Document doc = parse_record(j, line_no);
    if (!seen_ids.insert(doc.id).second)
      raise(Errc::DuplicateId, "duplicate document id '" + doc.id + "' at line " +
                                   std::to_string(line_no));
    docs.push_back(std::move(doc));
  }
  if (in.bad()) raise(Errc::Io, "read failure on " + path);
  return docs;
}

void save_corpus(const std::vector<Document>& docs, const std::string& path) {
  std::ostringstream out;
  for (const auto& doc : docs) out << record_to_json(doc).dump() << '\n';
  write_file_atomic(path, out.str());
}

Vocabulary Vocabulary::build(const std::vector<Document>& docs, long long min_count,
                             double max_doc_fraction) {
  if (docs.empty()) raise(Errc::EmptyCorpus, "build_vocabulary requires a non-empty corpus");
  if (max_doc_fraction <= 0.0 || max_doc_fraction > 1.0)
    raise(Errc::Config, "max_doc_fraction must lie in (0, 1]");
  std::map<std::string, long long> count;
  std::map<std::string, long long> doc_freq;
  for (const auto& doc : docs) {
    std::set<std::string> in_doc;
    for (const auto& sec : doc.sections)
      for (const auto& tok : sec.tokens) {
        ++count[tok];
        in_doc.insert(tok);
      }
    for (const auto& tok : in_doc) ++doc_freq[tok];
  }

  const double num_docs = static_cast<double>(docs.size());
  std::vector<std::string> tokens;
  std::vector<long long> df;
  std::set<std::string> reserved;
  for (const char* r : kReserved) {
    reserved.insert(r);
    tokens.push_back(r);
    auto it = doc_freq.find(r);
    df.push_back(it == doc_freq.end() ? 0 : it->second);
  }
  for (const auto& [tok, c] : count) {
    if (reserved.count(tok)) continue;
    const double fraction = static_cast<double>(doc_freq[tok]) / num_docs;
    if (c < min_count || fraction > max_doc_fraction) continue;
    tokens.push_back(tok);
    df.push_back(doc_freq[tok]);
  }
  return from_tokens(std::move(tokens), std::move(df));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens,
                                   std::vector<long long> doc_frequency) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.doc_frequency_ = std::move(doc_frequency);
  if (v.doc_frequency_.size() != v.tokens_.size())
    raise(Errc::Config, "vocabulary token/frequency size mismatch");
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second)
      raise(Errc::Config, "duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  return v;
}

std::vector<Document> filter_by_section_stats(const std::vector<Document>& docs, int min_sections,
                                              int min_tokens, int max_tokens,
                                              long long min_label_count) {
  for (const auto& doc : docs)
    for (std::size_t s = 0; s < doc.sections.size(); ++s)
      if (!doc.sections[s].label)
        raise(Errc::UnlabeledSection,
              "document '" + doc.id + "' section " + std::to_string(s) + " has no label");

  std::vector<Document> current = docs;
  for (;;) {
    std::map<std::string, long long> label_count;
    for (const auto& doc : current)
      for (const auto& sec : doc.sections) ++label_count[*sec.label];

    std::vector<Document> kept;
    for (const auto& doc : current) {
      bool ok = static_cast<int>(doc.sections.size()) >= min_sections;
      for (const auto& sec : doc.sections) {
        if (!ok) break;
        const int len = static_cast<int>(sec.tokens.size());
        if (len < min_tokens || len > max_tokens) ok = false;
        if (label_count[*sec.label] < min_label_count) ok = false;
      }
      if (ok) kept.push_back(doc);
    }
    if (kept.size() == current.size()) return kept;
    current = std::move(kept);
  }
}

std::vector<std::string> segment_keys(const Document& doc) {
  std::vector<std::string> keys;
  std::string cur;
  bool open = false;
  for (const auto& sec : doc.sections)
    for (const auto& tok : sec.tokens) {
      if (open) cur += ' ';
      cur += tok;
      open = true;
      if (tok == kSegmentEnd) {
        keys.push_back(cur);
        cur.clear();
        open = false;
      }
    }
  if (open)
    raise(Errc::Parse, "document '" + doc.id + "' has trailing tokens after the last " +
                           kSegmentEnd + " marker");
  if (keys.empty()) raise(Errc::Parse, "document '" + doc.id + "' has no segments");
  return keys;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::Io, "cannot open " + tmp + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) raise(Errc::Io, "write failure on " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    raise(Errc::Io, "cannot rename " + tmp + " to " + path + ": " + ec.message());
  }
}

}  // namespace critic
