#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "critic/corpus.hpp"
#include "critic/errors.hpp"
#include "critic/hsmm.hpp"
#include "critic/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace critic;
using testutil::TempDir;
using testutil::make_doc;

namespace {

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

TEST_CASE("load_corpus keeps file order and ids") {
  TempDir tmp;
  const auto path = tmp.path("docs.jsonl");
  write_lines(path, {
      R"({"id":"a","sections":[{"label":"intro","tokens":["x","y"]}],"mentions":null})",
      R"({"id":"b","sections":[{"label":null,"tokens":["z"]}]})",
  });
  const auto docs = load_corpus(path);
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].id == "a");
  CHECK(docs[1].id == "b");
  CHECK(docs[0].sections[0].label == "intro");
  CHECK_FALSE(docs[1].sections[0].label.has_value());
  CHECK(docs[0].sections[0].tokens == std::vector<std::string>{"x", "y"});
}

TEST_CASE("load_corpus reports schema violations with line numbers") {
  TempDir tmp;
  const auto path = tmp.path("docs.jsonl");
  write_lines(path, {
      R"({"id":"a","sections":[{"label":"s","tokens":["x"]}]})",
      R"({"id":"b"})",
  });
  try {
    load_corpus(path);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Parse);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("load_corpus rejects duplicate ids and bad mentions") {
  TempDir tmp;
  const auto dup = tmp.path("dup.jsonl");
  write_lines(dup, {
      R"({"id":"a","sections":[{"label":"s","tokens":["x"]}]})",
      R"({"id":"a","sections":[{"label":"s","tokens":["y"]}]})",
  });
  CHECK_THROWS_WITH_AS(load_corpus(dup), doctest::Contains("duplicate"), Error);

  const auto bad = tmp.path("bad.jsonl");
  write_lines(bad, {
      R"({"id":"a","sections":[{"label":"s","tokens":["x"]}],"mentions":[{"entity_id":0,"section":0,"token":5,"kind":"proper","surface":"X","sentence":0}]})",
  });
  CHECK_THROWS_WITH_AS(load_corpus(bad), doctest::Contains("out of range"), Error);
}

TEST_CASE("synthetic corpus round-trips through save/load") {
  SyntheticConfig config;
  config.num_states = 6;
  config.segments_per_seq = 5;
  config.num_segment_types = 40;
  config.train_size = 8;
  config.val_size = 2;
  config.test_size = 2;
  config.seed = 7;
  const auto data = generate_synthetic(config);

  TempDir tmp;
  const auto path = tmp.path("train.jsonl");
  save_corpus(data.train, path);
  const auto loaded = load_corpus(path);
  CHECK(loaded == data.train);
}

TEST_CASE("documents with mentions round-trip") {
  Document doc = make_doc("m", {{"Lisa", "saw", "him"}}, {"plot"});
  doc.mentions = std::vector<Mention>{
      {0, 0, 0, MentionKind::ProperNoun, "Lisa", 0},
      {1, 0, 2, MentionKind::Pronoun, "him", 0},
  };
  TempDir tmp;
  const auto path = tmp.path("m.jsonl");
  save_corpus({doc}, path);
  const auto loaded = load_corpus(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0] == doc);
}

TEST_CASE("vocabulary filters by count and document fraction") {
  // "common" appears in 3 of 4 docs: excluded at max_doc_fraction 0.5.
  std::vector<Document> docs = {
      make_doc("1", {{"common", "alpha"}}),
      make_doc("2", {{"common", "beta"}}),
      make_doc("3", {{"common", "gamma"}}),
      make_doc("4", {{"delta"}}),
  };
  const auto vocab = Vocabulary::build(docs, 1, 0.5);
  CHECK(vocab.id("common") == -1);
  CHECK(vocab.id("alpha") >= 0);
  CHECK(vocab.id(kPad) >= 0);

  const auto all = Vocabulary::build(docs, 1, 1.0);
  for (const char* tok : {"common", "alpha", "beta", "gamma", "delta"}) CHECK(all.id(tok) >= 0);
  // 4 reserved + 5 corpus tokens.
  CHECK(all.size() == 9);
}

TEST_CASE("vocabulary exclusion matches a brute-force counting pass") {
  Rng rng(123);
  std::vector<Document> docs;
  const std::vector<std::string> pool = {"a", "b", "c", "d", "e", "f", "g", "h"};
  for (int d = 0; d < 10; ++d) {
    std::vector<std::string> tokens;
    const int len = 3 + static_cast<int>(rng.uniform_int(6));
    for (int i = 0; i < len; ++i) tokens.push_back(pool[rng.uniform_int(pool.size())]);
    docs.push_back(make_doc("d" + std::to_string(d), {tokens}));
  }
  const long long min_count = 3;
  const double max_fraction = 0.6;
  const auto vocab = Vocabulary::build(docs, min_count, max_fraction);

  // Independent scan.
  std::map<std::string, long long> count;
  std::map<std::string, long long> df;
  for (const auto& doc : docs) {
    std::set<std::string> seen;
    for (const auto& t : doc.sections[0].tokens) {
      ++count[t];
      seen.insert(t);
    }
    for (const auto& t : seen) ++df[t];
  }
  for (const auto& t : pool) {
    const bool expect = count[t] >= min_count &&
                        static_cast<double>(df[t]) / static_cast<double>(docs.size()) <= max_fraction;
    CHECK((vocab.id(t) >= 0) == expect);
  }
}

TEST_CASE("vocabulary ids do not depend on document order") {
  std::vector<Document> docs = {
      make_doc("1", {{"b", "a"}}),
      make_doc("2", {{"c", "a"}}),
  };
  auto v1 = Vocabulary::build(docs, 1, 1.0);
  std::reverse(docs.begin(), docs.end());
  auto v2 = Vocabulary::build(docs, 1, 1.0);
  CHECK(v1.tokens() == v2.tokens());
}

TEST_CASE("filter_by_section_stats applies all three predicates") {
  std::vector<Document> docs;
  docs.push_back(make_doc("short", {{"a"}, {"b"}}, {"x", "y"}));  // 2 sections only
  docs.push_back(make_doc("ok1", {{"a", "b"}, {"c", "d"}, {"e", "f"}}, {"x", "y", "x"}));
  docs.push_back(make_doc("ok2", {{"g", "h"}, {"i", "j"}, {"k", "l"}}, {"x", "y", "x"}));

  // min_sections=3 drops "short".
  auto filtered = filter_by_section_stats(docs, 3, 1, 10, 1);
  REQUIRE(filtered.size() == 2);
  CHECK(filtered[0].id == "ok1");

  // Weakest thresholds: identity.
  auto none = filter_by_section_stats(docs, 0, 0, 1000, 0);
  CHECK(none == docs);

  // Unlabeled section is an error.
  auto bad = make_doc("bad", {{"a"}}, {});
  CHECK_THROWS_AS(filter_by_section_stats({bad}, 0, 0, 10, 0), Error);
}

TEST_CASE("filter matches a brute-force predicate oracle and is idempotent") {
  Rng rng(99);
  const std::vector<std::string> labels = {"intro", "method", "result", "rare"};
  std::vector<Document> docs;
  for (int d = 0; d < 20; ++d) {
    const int num_sections = 2 + static_cast<int>(rng.uniform_int(3));
    std::vector<std::vector<std::string>> sections;
    std::vector<std::string> doc_labels;
    for (int s = 0; s < num_sections; ++s) {
      const int len = 1 + static_cast<int>(rng.uniform_int(5));
      sections.push_back(std::vector<std::string>(static_cast<std::size_t>(len), "w"));
      doc_labels.push_back(labels[rng.uniform_int(d == 7 ? 4 : 3)]);
    }
    docs.push_back(make_doc("d" + std::to_string(d), sections, doc_labels));
  }
  const int min_sections = 3;
  const int min_tokens = 2;
  const int max_tokens = 5;
  const long long min_label_count = 2;
  const auto filtered = filter_by_section_stats(docs, min_sections, min_tokens, max_tokens,
                                                min_label_count);

  // Oracle: first-round label counts + per-document predicates; the library
  // iterates to a fixed point, so the oracle must too.
  auto survivors = docs;
  for (;;) {
    std::map<std::string, long long> lc;
    for (const auto& doc : survivors)
      for (const auto& sec : doc.sections) ++lc[*sec.label];
    std::vector<Document> next;
    for (const auto& doc : survivors) {
      bool ok = static_cast<int>(doc.sections.size()) >= min_sections;
      for (const auto& sec : doc.sections) {
        const int len = static_cast<int>(sec.tokens.size());
        if (len < min_tokens || len > max_tokens || lc[*sec.label] < min_label_count) ok = false;
      }
      if (ok) next.push_back(doc);
    }
    if (next.size() == survivors.size()) break;
    survivors = next;
  }
  CHECK(filtered == survivors);

  const auto again = filter_by_section_stats(filtered, min_sections, min_tokens, max_tokens,
                                             min_label_count);
  CHECK(again == filtered);
}

TEST_CASE("segment_keys splits at <s> and rejects trailing tokens") {
  const Document doc = make_doc("d", {{"a", "b", "<s>", "c", "<s>"}});
  const auto keys = segment_keys(doc);
  REQUIRE(keys.size() == 2);
  CHECK(keys[0] == "a b <s>");
  CHECK(keys[1] == "c <s>");

  const Document trailing = make_doc("t", {{"a", "<s>", "b"}});
  CHECK_THROWS_AS(segment_keys(trailing), Error);
}
