#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "phcp/percept/model.hpp"

namespace phcp::adapter {

/// Trainable map from a collaborator's feature space into the ego's:
/// 1x1 channel projection, channel attention (shared two-layer MLP over mean-
/// and max-pooled descriptors), spatial attention (7x7 conv over channel mean
/// and max), and a zero-initialized 1x1 output gate added residually to the
/// projection.
struct AdapterParams {
  std::size_t c_src = 0;
  std::size_t c_ego = 0;
  std::size_t reduction = 4;
  std::size_t sam_kernel = 7;

  nd::Tensor proj_w, proj_b;   // [Ce, Cs, 1, 1], [Ce]
  nd::Tensor mlp_w1, mlp_b1;   // [Ce/r, Ce], [Ce/r, 1]
  nd::Tensor mlp_w2, mlp_b2;   // [Ce, Ce/r], [Ce, 1]
  nd::Tensor sam_w, sam_b;     // [1, 2, k, k], [1]
  nd::Tensor gate_w, gate_b;   // [Ce, Ce, 1, 1], [Ce]

  std::vector<std::pair<std::string, nd::Tensor>> named() const;
  std::vector<nd::Tensor> parameters() const;
  /// Deep copy, bit-exact values, same requires_grad flags.
  AdapterParams clone() const;
};

/// Projection is the identity when c_src == c_ego, otherwise a seeded small
/// random matrix; attention weights are seeded small random; the output gate
/// is exactly zero. Throws ConfigError when r does not divide c_ego.
AdapterParams adapter_init(std::size_t c_src, std::size_t c_ego, std::size_t reduction,
                           std::uint64_t seed, std::size_t sam_kernel = 7);

/// Intermediate values of one forward pass, exposed for tests.
struct AdapterTrace {
  nd::Tensor projected;     // p
  nd::Tensor channel_gate;  // [Ce, 1, 1]
  nd::Tensor spatial_gate;  // [1, H, W]
  nd::Tensor output;
};

AdapterTrace adapter_forward_traced(nd::Tape& tape, const nd::Tensor& features,
                                    const AdapterParams& params);

/// Output is tagged with `ego_family`.
percept::FeatureMap adapter_forward(nd::Tape& tape, const percept::FeatureMap& features,
                                    const AdapterParams& params, const std::string& ego_family);

/// One adapter per collaborator id (or per family when keyed that way).
class AdapterRegistry {
 public:
  AdapterRegistry(std::size_t c_ego, std::size_t reduction, std::uint64_t seed)
      : c_ego_(c_ego), reduction_(reduction), seed_(seed) {}

  /// Creates on first use. Throws ConfigError if `c_src` differs from the
  /// dimensions recorded for an existing key.
  AdapterParams& get_or_create(const std::string& key, std::size_t c_src);
  bool contains(const std::string& key) const { return adapters_.count(key) > 0; }
  const AdapterParams& at(const std::string& key) const;
  std::pair<std::size_t, std::size_t> dims(const std::string& key) const;

  /// Clears requires_grad on every tensor of the adapter.
  void freeze(const std::string& key);
  bool frozen(const std::string& key) const;
  AdapterParams snapshot(const std::string& key) const;
  std::vector<std::string> keys() const;

 private:
  std::size_t c_ego_, reduction_;
  std::uint64_t seed_;
  std::map<std::string, AdapterParams> adapters_;
};

/// Bit-exact equality of all adapter tensors.
bool identical(const AdapterParams& a, const AdapterParams& b);

std::string encode_adapter(const AdapterParams& params, const std::string& key);
AdapterParams decode_adapter(std::string_view bytes, std::string* key = nullptr);

}  // namespace phcp::adapter
