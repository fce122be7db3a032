#include "psiflow/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <boost/crc.hpp>
#include <fmt/format.h>

#include "psiflow/rng.hpp"

namespace psiflow {

using nlohmann::json;

json to_json(const Interval& iv) { return json::array({iv.lo, iv.hi}); }

Interval interval_from_json(const json& j) {
  require(j.is_array() && j.size() == 2, "interval must be a two-element array");
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

json to_json(const TrainingDomain& dom) {
  json box = json::array();
  for (const auto& iv : dom.y0_box) box.push_back(to_json(iv));
  json j{{"y0_box", box}, {"h_max", dom.h_max}, {"xi_sign", dom.xi_sign == XiSign::forward ? "forward" : "backward"}};
  j["t0_interval"] = dom.t0_interval ? to_json(*dom.t0_interval) : json(nullptr);
  return j;
}

TrainingDomain domain_from_json(const json& j) {
  TrainingDomain dom;
  for (const auto& iv : j.at("y0_box")) dom.y0_box.push_back(interval_from_json(iv));
  if (j.contains("t0_interval") && !j.at("t0_interval").is_null())
    dom.t0_interval = interval_from_json(j.at("t0_interval"));
  dom.h_max = j.at("h_max").get<double>();
  const std::string sign = j.value("xi_sign", "forward");
  require(sign == "forward" || sign == "backward", "xi_sign must be 'forward' or 'backward'");
  dom.xi_sign = sign == "forward" ? XiSign::forward : XiSign::backward;
  dom.validate();
  return dom;
}

namespace {

constexpr char kMagic[4] = {'P', 'S', 'I', 'F'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) fail(ErrorKind::checksum_mismatch, "model file is truncated");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::uint32_t crc32(const char* data, std::size_t len) {
  boost::crc_32_type crc;
  crc.process_bytes(data, len);
  return crc.checksum();
}

json subnet_header(const SubnetParams& net) {
  return {{"arch", net.arch},
          {"rm", net.rm},
          {"seed", net.seed},
          {"stream_index", net.stream_index},
          {"activation", std::string(to_string(net.activation))}};
}

json header_of(const DecomposedModel& model) {
  const IvpSystem& sys = model.models.front().system;
  json subs = json::array();
  for (std::size_t k = 0; k < model.subdomains.size(); ++k) {
    const auto& s = model.subdomains[k];
    const auto& m = model.models[k];
    json box = json::array();
    for (const auto& iv : s.box) box.push_back(to_json(iv));
    subs.push_back({{"id", s.id},
                    {"box", box},
                    {"h_max", s.h_max},
                    {"delta_m", s.delta_m},
                    {"enlargement", s.enlargement},
                    {"kind", std::string(to_string(m.kind))},
                    {"trained", m.trained},
                    {"domain", to_json(m.domain)},
                    {"subnet", subnet_header(m.subnet)}});
  }
  return {{"format_version", kModelFormatVersion},
          {"generator", std::string(Philox::name)},
          {"system", {{"name", sys.name}, {"params", sys.params}, {"dim", sys.dim}}},
          {"partition", {{"domain", to_json(model.partition.domain)}, {"boundaries", model.partition.boundaries}}},
          {"subdomains", subs}};
}

}  // namespace

std::string serialize_model(const DecomposedModel& model) {
  model.validate();
  const std::string header = header_of(model).dump();
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kModelFormatVersion);
  put<std::uint64_t>(out, header.size());
  out += header;
  for (const auto& m : model.models) {
    for (const auto& layer : m.subnet.hidden) {
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i) put<double>(out, layer.weights.data()[i]);
      for (Eigen::Index i = 0; i < layer.biases.size(); ++i) put<double>(out, layer.biases[i]);
    }
    for (Eigen::Index i = 0; i < m.subnet.beta.size(); ++i) put<double>(out, m.subnet.beta.data()[i]);
  }
  put<std::uint32_t>(out, crc32(out.data(), out.size()));
  return out;
}

namespace {

DecomposedModel parse_container(const std::string& bytes, const SystemResolver& resolve) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::io_failure, "not a model file (bad magic)");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kModelFormatVersion)
    fail(ErrorKind::version_mismatch,
         fmt::format("model file has format version {}, expected {}", version, kModelFormatVersion));
  if (bytes.size() < pos + sizeof(std::uint64_t) + sizeof(std::uint32_t))
    fail(ErrorKind::checksum_mismatch, "model file is truncated");
  std::size_t crc_pos = bytes.size() - sizeof(std::uint32_t);
  std::size_t tail = crc_pos;
  if (get<std::uint32_t>(bytes, tail) != crc32(bytes.data(), crc_pos))
    fail(ErrorKind::checksum_mismatch, "model file checksum mismatch (corrupt or truncated)");

  const auto header_len = get<std::uint64_t>(bytes, pos);
  if (header_len > crc_pos - pos) fail(ErrorKind::checksum_mismatch, "model header overruns the file");
  const json header = json::parse(bytes.substr(pos, header_len));
  pos += header_len;

  const auto& sj = header.at("system");
  const auto params = sj.at("params").get<std::map<std::string, double>>();
  IvpSystem sys = resolve(sj.at("name").get<std::string>(), params);
  require(sys.dim == sj.at("dim").get<int>(), "resolved system dimension differs from the stored one");

  DecomposedModel dm;
  const auto& pj = header.at("partition");
  dm.partition = build_partition(domain_from_json(pj.at("domain")),
                                 pj.at("boundaries").get<std::vector<std::vector<double>>>());
  for (const auto& s : header.at("subdomains")) {
    Subdomain sub;
    sub.id = s.at("id").get<int>();
    for (const auto& iv : s.at("box")) sub.box.push_back(interval_from_json(iv));
    sub.h_max = s.at("h_max").get<double>();
    sub.delta_m = s.at("delta_m").get<double>();
    sub.enlargement = s.at("enlargement").get<std::vector<double>>();

    const auto& nj = s.at("subnet");
    PsiModel m;
    m.kind = rep_kind_from_string(s.at("kind").get<std::string>());
    m.trained = s.at("trained").get<bool>();
    m.domain = domain_from_json(s.at("domain"));
    m.system = sys;
    m.normalizer = Normalizer::from_domain(m.domain, sub.delta_m);
    SubnetParams& net = m.subnet;
    net.arch = nj.at("arch").get<std::vector<int>>();
    require(net.arch.size() >= 3, "stored architecture is too short");
    net.rm = nj.at("rm").get<double>();
    net.seed = nj.at("seed").get<std::uint64_t>();
    net.stream_index = nj.at("stream_index").get<std::uint32_t>();
    net.activation = activation_from_string(nj.at("activation").get<std::string>());
    for (std::size_t l = 1; l + 1 < net.arch.size(); ++l) {
      HiddenLayer layer;
      layer.weights.resize(net.arch[l], net.arch[l - 1]);
      layer.biases.resize(net.arch[l]);
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = get<double>(bytes, pos);
      for (Eigen::Index i = 0; i < layer.biases.size(); ++i) layer.biases[i] = get<double>(bytes, pos);
      net.hidden.push_back(std::move(layer));
    }
    net.beta.resize(net.output_dim(), net.width());
    for (Eigen::Index i = 0; i < net.beta.size(); ++i) net.beta.data()[i] = get<double>(bytes, pos);
    if (pos > crc_pos) fail(ErrorKind::checksum_mismatch, "model arrays overrun the file");
    m.validate();
    dm.subdomains.push_back(std::move(sub));
    dm.models.push_back(std::move(m));
  }
  if (pos != crc_pos) fail(ErrorKind::io_failure, "model file has trailing data");
  dm.validate();
  return dm;
}

}  // namespace

DecomposedModel deserialize_model(const std::string& bytes, const SystemResolver& resolve) {
  try {
    return parse_container(bytes, resolve);
  } catch (const json::exception& e) {
    fail(ErrorKind::io_failure, fmt::format("malformed model header: {}", e.what()));
  }
}

void save_model(const DecomposedModel& model, const std::string& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io_failure, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io_failure, "failed writing " + path);
}

void save_model(const PsiModel& model, const std::string& path) { save_model(as_decomposed(model), path); }

DecomposedModel load_model(const std::string& path, const SystemResolver& resolve) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io_failure, "cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes, resolve);
}

json model_manifest(const DecomposedModel& model) {
  json j = header_of(model);
  json arrays = json::array();
  for (const auto& m : model.models) {
    arrays.push_back({{"beta_shape", {m.subnet.beta.rows(), m.subnet.beta.cols()}},
                      {"beta_max_abs", m.subnet.beta.size() ? m.subnet.beta.cwiseAbs().maxCoeff() : 0.0},
                      {"beta_norm", m.subnet.beta.norm()}});
  }
  j["arrays"] = arrays;
  return j;
}

}  // namespace psiflow
