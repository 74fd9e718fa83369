#include "partner/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace partner
{

const Tensor & ModelParams::at(const std::string & name) const
{
  const auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second;
}

Tensor & ModelParams::at(const std::string & name)
{
  const auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second;
}

std::size_t ModelParams::total_size() const
{
  std::size_t n = 0;
  for (const auto & [name, t] : tensors) {
    n += t.size();
  }
  return n;
}

ModelParams init_params(const std::vector<ParamDecl> & decls, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto & d : decls) {
    Tensor t(d.shape);
    if (!d.bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(d.fan_in, 1)));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double & v : t.data) {
        v = u(rng);
      }
    }
    if (!params.tensors.emplace(d.name, std::move(t)).second) {
      throw std::invalid_argument("duplicate parameter: " + d.name);
    }
  }
  return params;
}

std::filesystem::path weights_sidecar(const std::filesystem::path & path)
{
  return std::filesystem::path(path.string() + ".json");
}

void save_weights(const ModelParams & params, const std::filesystem::path & path)
{
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) {
    throw std::runtime_error("cannot write weights: " + path.string());
  }
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto & [name, t] : params.tensors) {
    index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    for (double v : t.data) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int b = 0; b < 8; ++b) {
        bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
      }
      bin.write(bytes, 8);
    }
    offset += t.size();
  }
  nlohmann::json sidecar{
    {"format", "partner-weights"}, {"version", 1}, {"dtype", "float64-le"}, {"count", offset},
    {"tensors", index}};
  std::ofstream js(weights_sidecar(path), std::ios::trunc);
  js << sidecar.dump(2) << '\n';
}

ModelParams load_weights(const std::filesystem::path & path)
{
  std::ifstream js(weights_sidecar(path));
  if (!js) {
    throw std::runtime_error("missing weights sidecar: " + weights_sidecar(path).string());
  }
  const nlohmann::json sidecar = nlohmann::json::parse(js);
  if (sidecar.at("format") != "partner-weights" || sidecar.at("dtype") != "float64-le") {
    throw std::runtime_error("unsupported weights format in " + weights_sidecar(path).string());
  }
  std::ifstream bin(path, std::ios::binary);
  if (!bin) {
    throw std::runtime_error("cannot read weights: " + path.string());
  }
  const auto count = sidecar.at("count").get<std::size_t>();
  std::vector<double> flat(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char bytes[8];
    if (!bin.read(reinterpret_cast<char *>(bytes), 8)) {
      throw std::runtime_error("truncated weights file: " + path.string());
    }
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    }
    flat[i] = std::bit_cast<double>(bits);
  }
  ModelParams params;
  for (const auto & entry : sidecar.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(shape);
    if (offset + n > count) {
      throw std::runtime_error("weights sidecar overruns payload");
    }
    params.tensors.emplace(
      entry.at("name").get<std::string>(),
      Tensor(std::move(shape), std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                                   flat.begin() + static_cast<std::ptrdiff_t>(offset + n))));
  }
  return params;
}

ad::Var ParamBinder::operator()(const std::string & name)
{
  const auto it = bound_.find(name);
  if (it != bound_.end()) {
    return it->second;
  }
  const Tensor & t = params_.at(name);
  const ad::Var v = trainable_ ? graph_.parameter(t) : graph_.constant(t);
  bound_.emplace(name, v);
  return v;
}

}  // namespace partner
