#include "critic/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "critic/errors.hpp"

namespace critic {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
const char* kB64Digits = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

json container(const std::string& kind, json params, const std::string& fingerprint) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = kind;
  j["params"] = std::move(params);
  j["fingerprint"] = fingerprint;
  return j;
}

const json& params_of(const json& j, const std::string& kind) {
  if (model_kind(j) != kind)
    raise(Errc::Parse, "expected a '" + kind + "' model, found '" + model_kind(j) + "'");
  return j.at("params");
}

template <typename T>
std::string pack_base64(const std::vector<T>& values) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  return base64_encode(bytes, values.size() * sizeof(T));
}

template <typename T>
std::vector<T> unpack_base64(const std::string& text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % sizeof(T) != 0) raise(Errc::Parse, "corrupt packed array");
  std::vector<T> values(bytes.size() / sizeof(T));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

}  // namespace

std::string base64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    unsigned int v = static_cast<unsigned int>(data[i]) << 16;
    if (i + 1 < n) v |= static_cast<unsigned int>(data[i + 1]) << 8;
    if (i + 2 < n) v |= static_cast<unsigned int>(data[i + 2]);
    out += kB64Digits[(v >> 18) & 0x3f];
    out += kB64Digits[(v >> 12) & 0x3f];
    out += i + 1 < n ? kB64Digits[(v >> 6) & 0x3f] : '=';
    out += i + 2 < n ? kB64Digits[v & 0x3f] : '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  static int lookup[256];
  static bool ready = false;
  if (!ready) {
    for (int i = 0; i < 256; ++i) lookup[i] = -1;
    for (int i = 0; i < 64; ++i) lookup[static_cast<unsigned char>(kB64Digits[i])] = i;
    ready = true;
  }
  if (text.size() % 4 != 0) raise(Errc::Parse, "base64 payload length must be a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        vals[k] = 0;
        ++pad;
      } else {
        vals[k] = lookup[static_cast<unsigned char>(c)];
        if (vals[k] < 0) raise(Errc::Parse, "invalid base64 character");
      }
    }
    const unsigned int v = (static_cast<unsigned int>(vals[0]) << 18) |
                           (static_cast<unsigned int>(vals[1]) << 12) |
                           (static_cast<unsigned int>(vals[2]) << 6) |
                           static_cast<unsigned int>(vals[3]);
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
  }
  return out;
}

nlohmann::json hsmm_to_json(const Hsmm& model) {
  json p;
  p["num_states"] = model.num_states;
  p["uses_end_state"] = model.uses_end_state;
  p["log_initial"] = pack_base64(model.log_initial);
  p["log_transition"] = pack_base64(model.log_transition);
  p["log_final"] = pack_base64(model.log_final);
  p["segments"] = model.segments;
  p["log_emission"] = pack_base64(model.log_emission);
  return container("hsmm", std::move(p), model.fingerprint());
}

Hsmm hsmm_from_json(const nlohmann::json& j) {
  const json& p = params_of(j, "hsmm");
  Hsmm m;
  m.num_states = p.at("num_states").get<int>();
  m.uses_end_state = p.at("uses_end_state").get<bool>();
  m.log_initial = unpack_base64<double>(p.at("log_initial").get<std::string>());
  m.log_transition = unpack_base64<double>(p.at("log_transition").get<std::string>());
  m.log_final = unpack_base64<double>(p.at("log_final").get<std::string>());
  m.segments = p.at("segments").get<std::vector<std::string>>();
  m.log_emission = unpack_base64<double>(p.at("log_emission").get<std::string>());
  if (m.log_emission.size() != m.segments.size() * static_cast<std::size_t>(m.num_states))
    raise(Errc::Parse, "hsmm emission table has the wrong shape");
  m.rebuild_index();
  if (m.fingerprint() != j.at("fingerprint").get<std::string>())
    raise(Errc::Parse, "hsmm fingerprint mismatch; file is corrupt");
  return m;
}

nlohmann::json ngram_to_json(const NgramModel& model) {
  json p;
  p["order"] = model.order();
  p["discount_mode"] =
      model.discount_mode() == DiscountMode::UniqueGrams ? "unique-grams" : "count-of-counts";
  p["alphabet"] = model.alphabet();
  p["codes"] = pack_base64(model.top_codes());
  p["counts"] = pack_base64(model.top_counts());
  return container("kn-ngram", std::move(p), model.fingerprint());
}

NgramModel ngram_from_json(const nlohmann::json& j) {
  const json& p = params_of(j, "kn-ngram");
  KnOptions options;
  options.order = p.at("order").get<int>();
  const std::string mode = p.at("discount_mode").get<std::string>();
  if (mode == "unique-grams")
    options.discount = DiscountMode::UniqueGrams;
  else if (mode == "count-of-counts")
    options.discount = DiscountMode::CountOfCounts;
  else
    raise(Errc::Parse, "unknown discount mode '" + mode + "'");
  auto model = NgramModel::from_top_table(p.at("alphabet").get<std::vector<std::string>>(),
                                          unpack_base64<std::uint64_t>(p.at("codes").get<std::string>()),
                                          unpack_base64<std::uint32_t>(p.at("counts").get<std::string>()),
                                          options);
  if (model.fingerprint() != j.at("fingerprint").get<std::string>())
    raise(Errc::Parse, "ngram fingerprint mismatch; file is corrupt");
  return model;
}

nlohmann::json lda_to_json(const LdaModel& model) {
  json p;
  p["num_topics"] = model.num_topics;
  p["alpha"] = pack_base64(model.alpha);
  p["beta"] = model.beta;
  p["vocab"] = model.vocab;
  std::vector<double> phi_flat;
  for (const auto& row : model.phi) phi_flat.insert(phi_flat.end(), row.begin(), row.end());
  p["phi"] = pack_base64(phi_flat);
  return container("lda", std::move(p), model.fingerprint());
}

LdaModel lda_from_json(const nlohmann::json& j) {
  const json& p = params_of(j, "lda");
  LdaModel m;
  m.num_topics = p.at("num_topics").get<int>();
  m.alpha = unpack_base64<double>(p.at("alpha").get<std::string>());
  m.beta = p.at("beta").get<double>();
  m.vocab = p.at("vocab").get<std::vector<std::string>>();
  const auto phi_flat = unpack_base64<double>(p.at("phi").get<std::string>());
  const std::size_t V = m.vocab.size();
  if (phi_flat.size() != V * static_cast<std::size_t>(m.num_topics))
    raise(Errc::Parse, "lda phi table has the wrong shape");
  m.phi.assign(static_cast<std::size_t>(m.num_topics), std::vector<double>(V));
  for (int i = 0; i < m.num_topics; ++i)
    std::copy(phi_flat.begin() + static_cast<long>(static_cast<std::size_t>(i) * V),
              phi_flat.begin() + static_cast<long>((static_cast<std::size_t>(i) + 1) * V),
              m.phi[static_cast<std::size_t>(i)].begin());
  if (m.fingerprint() != j.at("fingerprint").get<std::string>())
    raise(Errc::Parse, "lda fingerprint mismatch; file is corrupt");
  return m;
}

nlohmann::json ctm_to_json(const CtmModel& model) {
  json p;
  p["num_topics"] = model.num_topics;
  p["vocab"] = model.vocab;
  std::vector<double> mu(model.mu.data(), model.mu.data() + model.mu.size());
  std::vector<double> sigma(model.sigma.data(), model.sigma.data() + model.sigma.size());
  std::vector<double> phi(model.phi.data(), model.phi.data() + model.phi.size());
  p["mu"] = pack_base64(mu);
  p["sigma"] = pack_base64(sigma);
  p["phi"] = pack_base64(phi);
  return container("ctm", std::move(p), model.fingerprint());
}

CtmModel ctm_from_json(const nlohmann::json& j) {
  const json& p = params_of(j, "ctm");
  CtmModel m;
  m.num_topics = p.at("num_topics").get<int>();
  m.vocab = p.at("vocab").get<std::vector<std::string>>();
  const auto mu = unpack_base64<double>(p.at("mu").get<std::string>());
  const auto sigma = unpack_base64<double>(p.at("sigma").get<std::string>());
  const auto phi = unpack_base64<double>(p.at("phi").get<std::string>());
  const int M = m.num_topics;
  const int V = static_cast<int>(m.vocab.size());
  if (static_cast<int>(mu.size()) != M || static_cast<int>(sigma.size()) != M * M ||
      static_cast<int>(phi.size()) != M * V)
    raise(Errc::Parse, "ctm parameter shapes are inconsistent");
  m.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), M);
  m.sigma = Eigen::Map<const Eigen::MatrixXd>(sigma.data(), M, M);
  m.phi = Eigen::Map<const Eigen::MatrixXd>(phi.data(), M, V);
  if (m.fingerprint() != j.at("fingerprint").get<std::string>())
    raise(Errc::Parse, "ctm fingerprint mismatch; file is corrupt");
  return m;
}

nlohmann::json classifier_to_json(const SectionClassifier& model) {
  json p;
  p["labels"] = model.labels;
  p["vocab"] = model.vocab;
  p["alpha"] = model.alpha;
  p["log_prior"] = pack_base64(model.log_prior);
  std::vector<double> flat;
  for (const auto& row : model.log_likelihood) flat.insert(flat.end(), row.begin(), row.end());
  p["log_likelihood"] = pack_base64(flat);
  return container("section-classifier", std::move(p), model.fingerprint());
}

SectionClassifier classifier_from_json(const nlohmann::json& j) {
  const json& p = params_of(j, "section-classifier");
  SectionClassifier m;
  m.labels = p.at("labels").get<std::vector<std::string>>();
  m.vocab = p.at("vocab").get<std::vector<std::string>>();
  m.alpha = p.at("alpha").get<double>();
  m.log_prior = unpack_base64<double>(p.at("log_prior").get<std::string>());
  const auto flat = unpack_base64<double>(p.at("log_likelihood").get<std::string>());
  const std::size_t L = m.labels.size();
  const std::size_t V = m.vocab.size();
  if (flat.size() != L * V || m.log_prior.size() != L)
    raise(Errc::Parse, "classifier parameter shapes are inconsistent");
  for (std::size_t i = 0; i < V; ++i) m.vocab_index[m.vocab[i]] = static_cast<int>(i);
  m.log_likelihood.assign(L, std::vector<double>(V));
  for (std::size_t l = 0; l < L; ++l)
    std::copy(flat.begin() + static_cast<long>(l * V), flat.begin() + static_cast<long>((l + 1) * V),
              m.log_likelihood[l].begin());
  if (m.fingerprint() != j.at("fingerprint").get<std::string>())
    raise(Errc::Parse, "classifier fingerprint mismatch; file is corrupt");
  return m;
}

nlohmann::json transitions_to_json(const LabelTransitions& model) {
  json p;
  p["labels"] = model.labels;
  p["smoothing"] = model.smoothing;
  p["prob"] = pack_base64(model.prob);
  return container("section-prior", std::move(p), model.fingerprint());
}

LabelTransitions transitions_from_json(const nlohmann::json& j) {
  const json& p = params_of(j, "section-prior");
  LabelTransitions m;
  m.labels = p.at("labels").get<std::vector<std::string>>();
  m.smoothing = p.at("smoothing").get<double>();
  m.prob = unpack_base64<double>(p.at("prob").get<std::string>());
  const std::size_t K1 = m.labels.size() + 1;
  if (m.prob.size() != K1 * K1) raise(Errc::Parse, "transition table has the wrong shape");
  if (m.fingerprint() != j.at("fingerprint").get<std::string>())
    raise(Errc::Parse, "transition prior fingerprint mismatch; file is corrupt");
  return m;
}

void save_model(const nlohmann::json& j, const std::string& path) {
  write_file_atomic(path, j.dump() + "\n");
}

nlohmann::json load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::Io, "cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  json j;
  try {
    j = json::parse(buffer.str());
  } catch (const json::exception& e) {
    raise(Errc::Parse, std::string("model file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j.contains("kind") ||
      !j.contains("params") || !j.contains("fingerprint"))
    raise(Errc::Parse, "model container is missing required fields");
  if (j["format_version"].get<int>() != kFormatVersion)
    raise(Errc::Parse, "unsupported model format version");
  return j;
}

std::string model_kind(const nlohmann::json& j) { return j.at("kind").get<std::string>(); }

}  // namespace critic
