#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace critic {

// Reserved symbols. These strings are markers and never ordinary corpus words.
inline constexpr const char* kSegmentEnd = "<s>";
inline constexpr const char* kBos = "<bos>";
inline constexpr const char* kEos = "<eos>";
inline constexpr const char* kPad = "<pad>";

enum class MentionKind { ProperNoun, Pronoun };

struct Mention {
  int entity_id = 0;
  int section = 0;  // section index of the mention root
  int token = 0;    // token index within the section
  MentionKind kind = MentionKind::ProperNoun;
  std::string surface;
  int sentence = 0;

  bool operator==(const Mention&) const = default;
};

struct Section {
  std::optional<std::string> label;
  std::vector<std::string> tokens;

  bool operator==(const Section&) const = default;
};

struct Document {
  std::string id;
  std::vector<Section> sections;
  std::optional<std::vector<Mention>> mentions;

  bool operator==(const Document&) const = default;

  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& s : sections) n += s.tokens.size();
    return n;
  }
};

class Vocabulary {
 public:
  // Reserved symbols occupy ids 0..3; remaining tokens get contiguous ids in
  // lexicographic order, so the mapping is independent of document order.
  static Vocabulary build(const std::vector<Document>& docs, long long min_count,
                          double max_doc_fraction);

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
  }
  const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(tokens_.size()); }
  long long doc_frequency(int id) const { return doc_frequency_[static_cast<std::size_t>(id)]; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Used by serialization; tokens must be distinct.
  static Vocabulary from_tokens(std::vector<std::string> tokens,
                                std::vector<long long> doc_frequency);

 private:
  std::vector<std::string> tokens_;
  std::vector<long long> doc_frequency_;
  std::unordered_map<std::string, int> index_;
};

std::vector<Document> load_corpus(const std::string& path);
void save_corpus(const std::vector<Document>& docs, const std::string& path);

// Drops documents with too few sections, out-of-range section lengths, or
// sections labeled with an infrequent label. Label counts are taken on the
// whole input of each round (never updated mid-scan) and the label stage is
// repeated until stable, so the filter is idempotent.
std::vector<Document> filter_by_section_stats(const std::vector<Document>& docs, int min_sections,
                                              int min_tokens, int max_tokens,
                                              long long min_label_count);

// Concatenated tokens of all sections split at `<s>` (marker kept, segments
// joined with single spaces). Raises if the stream has trailing tokens after
// the last marker.
std::vector<std::string> segment_keys(const Document& doc);

// Atomic file write: write to a temp file then rename, so failures never
// leave partial outputs behind.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace critic
