#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lips/tensor.hpp"

namespace lips {

// LTSR binary tensor format:
//   "LTSR" | u32 rank | rank x u32 extents | float32 data, all little-endian.
void write_ltsr(std::ostream& out, const Tensor& tensor);
Tensor read_ltsr(std::istream& in);

void save_ltsr(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_ltsr(const std::filesystem::path& path);

/// Ordered name -> tensor collection backing every weight struct.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Writes each tensor as <index>.ltsr plus a manifest.txt of "name file" lines.
void save_weight_dir(const std::filesystem::path& dir, const NamedTensors& tensors);
NamedTensors load_weight_dir(const std::filesystem::path& dir);

// Weight structs expose
//   template <class Self, class F> static void fields(Self& self, F&& f);
// calling f(name, tensor) for every tensor, so one listing serves both
// const and mutable traversal.

template <class Weights>
NamedTensors to_named(const Weights& weights) {
  NamedTensors out;
  Weights::fields(weights, [&](const std::string& name, const Tensor& t) {
    out.emplace_back(name, t);
  });
  return out;
}

/// Fills `weights` from `named`; every listed name must be present with the
/// shape already held by `weights`.
template <class Weights>
void from_named(Weights& weights, const NamedTensors& named) {
  Weights::fields(weights, [&](const std::string& name, Tensor& t) {
    for (const auto& [n, v] : named) {
      if (n != name) continue;
      if (v.shape() != t.shape()) {
        throw InvalidInputError("weight '" + name + "' has shape " + shape_to_string(v.shape()) +
                                ", expected " + shape_to_string(t.shape()));
      }
      t = v;
      return;
    }
    throw InvalidInputError("weight '" + name + "' missing from weight directory");
  });
}

template <class Weights>
int64_t count_parameters(const Weights& weights) {
  int64_t n = 0;
  Weights::fields(weights, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

}  // namespace lips
