#pragma once

#include <string>

#include "critic/chains.hpp"
#include "critic/ctm.hpp"
#include "critic/hsmm.hpp"
#include "critic/lda.hpp"
#include "critic/ngram.hpp"
#include "critic/section_critic.hpp"
#include "json.hpp"

namespace critic {

// Versioned JSON model container: {"format_version", "kind", "params",
// "fingerprint"}. Doubles round-trip bit-exactly through nlohmann's
// shortest-representation output; the fingerprint is re-checked on load.

nlohmann::json hsmm_to_json(const Hsmm& model);
Hsmm hsmm_from_json(const nlohmann::json& j);

nlohmann::json ngram_to_json(const NgramModel& model);
NgramModel ngram_from_json(const nlohmann::json& j);

nlohmann::json lda_to_json(const LdaModel& model);
LdaModel lda_from_json(const nlohmann::json& j);

nlohmann::json ctm_to_json(const CtmModel& model);
CtmModel ctm_from_json(const nlohmann::json& j);

nlohmann::json classifier_to_json(const SectionClassifier& model);
SectionClassifier classifier_from_json(const nlohmann::json& j);

nlohmann::json transitions_to_json(const LabelTransitions& model);
LabelTransitions transitions_from_json(const nlohmann::json& j);

void save_model(const nlohmann::json& container, const std::string& path);
nlohmann::json load_model(const std::string& path);  // validates the container
std::string model_kind(const nlohmann::json& container);

std::string base64_encode(const unsigned char* data, std::size_t n);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace critic
