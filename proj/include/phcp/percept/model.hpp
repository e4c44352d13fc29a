#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "phcp/ndgrad/ops.hpp"
#include "phcp/world/types.hpp"

namespace phcp::percept {

enum class Activation { Relu, ExpLin, Tanh };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// One encoder family (semantic space). Two same-convolutions and an
/// activation, then a fixed channel permutation and per-channel affine.
struct EncoderFamily {
  std::string id;
  std::size_t channels = 8;
  std::size_t kernel1 = 3;
  std::size_t kernel2 = 3;
  Activation activation = Activation::Relu;
  std::uint64_t constants_seed = 0;
  std::vector<std::size_t> permutation;
  std::vector<double> scale;
  std::vector<double> shift;
};

/// Derives permutation and affine constants from `constants_seed`.
EncoderFamily make_family(std::string id, std::size_t channels, std::size_t kernel1,
                          std::size_t kernel2, Activation activation, std::uint64_t constants_seed);

class FamilyRegistry {
 public:
  void add(EncoderFamily family);
  /// Throws ConfigError for unregistered ids.
  const EncoderFamily& get(const std::string& id) const;
  bool contains(const std::string& id) const { return families_.count(id) > 0; }
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, EncoderFamily> families_;
};

/// "lp": 8 channels, kernels 5/5, ReLU. "ls": 12 channels, kernels 5/3, ExpLin.
FamilyRegistry default_families();

struct EncoderWeights {
  nd::Tensor conv1_w, conv1_b, conv2_w, conv2_b;
};

/// Per-cell attention scoring: 1x1 convolution C -> 1.
struct FusionWeights {
  nd::Tensor score_w, score_b;
};

/// Objectness (C -> 1) and regression (C -> 6) 1x1 convolutions.
struct HeadWeights {
  nd::Tensor cls_w, cls_b, reg_w, reg_b;
};

/// Base model of one family: encoder, fusion and head.
struct ModelWeights {
  std::string family;
  EncoderWeights encoder;
  FusionWeights fusion;
  HeadWeights head;

  std::vector<std::pair<std::string, nd::Tensor>> named() const;
  std::vector<nd::Tensor> parameters() const;
  void set_trainable(bool flag);
  ModelWeights clone() const;
};

ModelWeights init_model(const EncoderFamily& family, std::uint64_t seed);

/// Frozen base models, one per family id.
using ModelZoo = std::map<std::string, ModelWeights>;

/// Throws PrerequisiteError when the family has no model.
const ModelWeights& zoo_get(const ModelZoo& zoo, const std::string& family);

struct FeatureMap {
  nd::Tensor values;  // [C, H, W]
  std::string family;
  world::GridSpec grid;

  std::size_t channels() const { return values.dim(0); }
};

inline constexpr std::size_t kRegressionChannels = 6;  // dx, dy, log l, log w, sin yaw, cos yaw

struct RawHeadOutput {
  nd::Tensor objectness;  // [1, H, W] logits
  nd::Tensor regression;  // [6, H, W]
};

FeatureMap encode(nd::Tape& tape, const world::Observation& obs, const EncoderFamily& family,
                  const EncoderWeights& weights);

/// Per-cell softmax attention over the candidates. All candidates must already
/// be in the fusion's channel space.
nd::Tensor fuse(nd::Tape& tape, std::span<const FeatureMap> candidates, const FusionWeights& weights);
nd::Tensor fuse(nd::Tape& tape, std::span<const nd::Tensor> candidates, const FusionWeights& weights);

RawHeadOutput detect_head(nd::Tape& tape, const nd::Tensor& fused, const HeadWeights& weights);

}  // namespace phcp::percept
