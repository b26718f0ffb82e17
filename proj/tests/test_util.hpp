#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include "critic/corpus.hpp"

namespace testutil {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    base_ = std::filesystem::temp_directory_path() /
            ("critic-test-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "-" +
             std::to_string(::getpid()));
    std::filesystem::create_directories(base_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(base_, ec);
  }
  std::string path(const std::string& name) const { return (base_ / name).string(); }

 private:
  std::filesystem::path base_;
};

inline critic::Document make_doc(const std::string& id,
                                 const std::vector<std::vector<std::string>>& sections,
                                 const std::vector<std::string>& labels = {}) {
  critic::Document doc;
  doc.id = id;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    critic::Section sec;
    if (i < labels.size() && !labels[i].empty()) sec.label = labels[i];
    sec.tokens = sections[i];
    doc.sections.push_back(std::move(sec));
  }
  return doc;
}

}  // namespace testutil
