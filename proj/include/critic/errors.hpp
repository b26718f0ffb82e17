#pragma once

#include <stdexcept>
#include <string>

namespace critic {

// Stable error codes. The CLI maps these to exit-code classes:
// config/usage errors exit 1, data errors exit 2, numeric failures exit 3.
enum class Errc {
  Io,
  Parse,
  DuplicateId,
  EmptyCorpus,
  EmptyInput,
  UnlabeledSection,
  MissingMentions,
  UnknownSegment,
  EmptyVocabulary,
  EmptyLabelSet,
  EmptyTrainingData,
  CriticMismatch,
  UnsupportedCritic,
  Config,
  DegenerateInit,
  SingularCovariance,
  Numeric,
};

const char* errc_name(Errc c);
int errc_exit_code(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void raise(Errc code, const std::string& message);

}  // namespace critic
