#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "partner/graph.hpp"
#include "partner/tensor.hpp"

namespace partner
{

/// Named learnable tensors, iterated in name order.
struct ModelParams
{
  std::map<std::string, Tensor> tensors;

  const Tensor & at(const std::string & name) const;
  Tensor & at(const std::string & name);
  bool contains(const std::string & name) const { return tensors.count(name) != 0; }
  std::size_t total_size() const;
};

/// Shape and initialization metadata for one learnable tensor.
struct ParamDecl
{
  std::string name;
  Shape shape;
  std::size_t fan_in{1};
  bool bias{false};
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
ModelParams init_params(const std::vector<ParamDecl> & decls, std::uint64_t seed);

/// Flat little-endian float64 payload at `path`, plus `path` + ".json" listing
/// {name, shape, offset} per tensor in payload order.
void save_weights(const ModelParams & params, const std::filesystem::path & path);
ModelParams load_weights(const std::filesystem::path & path);
std::filesystem::path weights_sidecar(const std::filesystem::path & path);

/// Binds parameters into a graph on first use so unused tensors stay off the tape.
class ParamBinder
{
public:
  ParamBinder(ad::Graph & graph, const ModelParams & params, bool trainable = true)
  : graph_(graph), params_(params), trainable_(trainable)
  {
  }

  ad::Var operator()(const std::string & name);
  const std::map<std::string, ad::Var> & bound() const { return bound_; }
  ad::Graph & graph() { return graph_; }

private:
  ad::Graph & graph_;
  const ModelParams & params_;
  bool trainable_;
  std::map<std::string, ad::Var> bound_;
};

}  // namespace partner
