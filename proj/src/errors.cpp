#include "critic/errors.hpp"

namespace critic {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::Io: return "io-error";
    case Errc::Parse: return "parse-error";
    case Errc::DuplicateId: return "duplicate-id";
    case Errc::EmptyCorpus: return "empty-corpus";
    case Errc::EmptyInput: return "empty-input";
    case Errc::UnlabeledSection: return "unlabeled-section";
    case Errc::MissingMentions: return "missing-mentions";
    case Errc::UnknownSegment: return "unknown-segment";
    case Errc::EmptyVocabulary: return "empty-vocabulary";
    case Errc::EmptyLabelSet: return "empty-label-set";
    case Errc::EmptyTrainingData: return "empty-training-data";
    case Errc::CriticMismatch: return "critic-mismatch";
    case Errc::UnsupportedCritic: return "unsupported-critic";
    case Errc::Config: return "config-error";
    case Errc::DegenerateInit: return "degenerate-init";
    case Errc::SingularCovariance: return "singular-covariance";
    case Errc::Numeric: return "numeric-error";
  }
  return "unknown-error";
}

int errc_exit_code(Errc c) {
  switch (c) {
    case Errc::Config:
      return 1;
    case Errc::DegenerateInit:
    case Errc::SingularCovariance:
    case Errc::Numeric:
      return 3;
    default:
      return 2;
  }
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string("[") + errc_name(code) + "] " + message), code_(code) {}

void raise(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace critic
