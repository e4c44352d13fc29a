#include "phcp/percept/model.hpp"

#include <cmath>
#include <numeric>

#include "phcp/common/error.hpp"
#include "phcp/common/rng.hpp"

namespace phcp::percept {

using nd::Tensor;

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::ExpLin: return "explin";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "explin") return Activation::ExpLin;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

EncoderFamily make_family(std::string id, std::size_t channels, std::size_t kernel1,
                          std::size_t kernel2, Activation activation, std::uint64_t constants_seed) {
  if (channels == 0) throw ConfigError("family " + id + ": zero channels");
  if (kernel1 % 2 == 0 || kernel2 % 2 == 0) throw ConfigError("family " + id + ": kernels must be odd");
  EncoderFamily f;
  f.id = std::move(id);
  f.channels = channels;
  f.kernel1 = kernel1;
  f.kernel2 = kernel2;
  f.activation = activation;
  f.constants_seed = constants_seed;
  Rng rng(derive_seed(constants_seed, {0x66616dULL}));
  f.permutation.resize(channels);
  std::iota(f.permutation.begin(), f.permutation.end(), std::size_t{0});
  for (std::size_t i = channels; i > 1; --i)
    std::swap(f.permutation[i - 1],
              f.permutation[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
  for (std::size_t c = 0; c < channels; ++c) {
    const double mag = rng.uniform(0.5, 2.0);
    f.scale.push_back(rng.uniform() < 0.5 ? -mag : mag);
    f.shift.push_back(rng.uniform(-0.5, 0.5));
  }
  return f;
}

void FamilyRegistry::add(EncoderFamily family) {
  if (family.permutation.size() != family.channels || family.scale.size() != family.channels ||
      family.shift.size() != family.channels)
    throw ConfigError("family " + family.id + ": constants do not match channel count");
  auto id = family.id;
  families_[id] = std::move(family);
}

const EncoderFamily& FamilyRegistry::get(const std::string& id) const {
  auto it = families_.find(id);
  if (it == families_.end()) throw ConfigError("unregistered encoder family '" + id + "'");
  return it->second;
}

std::vector<std::string> FamilyRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : families_) out.push_back(k);
  return out;
}

FamilyRegistry default_families() {
  FamilyRegistry reg;
  reg.add(make_family("lp", 8, 5, 5, Activation::Relu, 11));
  reg.add(make_family("ls", 12, 5, 3, Activation::ExpLin, 23));
  return reg;
}

std::vector<std::pair<std::string, Tensor>> ModelWeights::named() const {
  return {{"encoder.conv1.weight", encoder.conv1_w}, {"encoder.conv1.bias", encoder.conv1_b},
          {"encoder.conv2.weight", encoder.conv2_w}, {"encoder.conv2.bias", encoder.conv2_b},
          {"fusion.score.weight", fusion.score_w},   {"fusion.score.bias", fusion.score_b},
          {"head.cls.weight", head.cls_w},           {"head.cls.bias", head.cls_b},
          {"head.reg.weight", head.reg_w},           {"head.reg.bias", head.reg_b}};
}

std::vector<Tensor> ModelWeights::parameters() const {
  std::vector<Tensor> out;
  for (auto& [_, t] : named()) out.push_back(t);
  return out;
}

void ModelWeights::set_trainable(bool flag) {
  for (auto& t : parameters()) t.set_requires_grad(flag);
}

ModelWeights ModelWeights::clone() const {
  ModelWeights m;
  m.family = family;
  m.encoder = {encoder.conv1_w.clone(), encoder.conv1_b.clone(), encoder.conv2_w.clone(),
               encoder.conv2_b.clone()};
  m.fusion = {fusion.score_w.clone(), fusion.score_b.clone()};
  m.head = {head.cls_w.clone(), head.cls_b.clone(), head.reg_w.clone(), head.reg_b.clone()};
  return m;
}

namespace {
Tensor uniform_tensor(Rng& rng, nd::Shape shape, double bound) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}
}  // namespace

ModelWeights init_model(const EncoderFamily& fam, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {fnv1a(fam.id)}));
  const std::size_t c = fam.channels;
  ModelWeights m;
  m.family = fam.id;
  const double b1 = std::sqrt(6.0 / static_cast<double>(fam.kernel1 * fam.kernel1));
  const double b2 = std::sqrt(6.0 / static_cast<double>(c * fam.kernel2 * fam.kernel2));
  m.encoder.conv1_w = uniform_tensor(rng, {c, 1, fam.kernel1, fam.kernel1}, b1);
  m.encoder.conv1_b = Tensor({c}, 0.0);
  m.encoder.conv2_w = uniform_tensor(rng, {c, c, fam.kernel2, fam.kernel2}, b2);
  m.encoder.conv2_b = Tensor({c}, 0.0);
  const double bh = std::sqrt(1.0 / static_cast<double>(c));
  m.fusion.score_w = uniform_tensor(rng, {1, c, 1, 1}, 0.1 * bh);
  m.fusion.score_b = Tensor({1}, 0.0);
  m.head.cls_w = uniform_tensor(rng, {1, c, 1, 1}, 0.1 * bh);
  m.head.cls_b = Tensor({1}, -std::log(99.0));  // prior objectness 0.01
  m.head.reg_w = uniform_tensor(rng, {kRegressionChannels, c, 1, 1}, 0.1 * bh);
  m.head.reg_b = Tensor({kRegressionChannels},
                        std::vector<double>{0.0, 0.0, std::log(4.2), std::log(1.85), 0.0, 1.0});
  return m;
}

const ModelWeights& zoo_get(const ModelZoo& zoo, const std::string& family) {
  auto it = zoo.find(family);
  if (it == zoo.end())
    throw PrerequisiteError("no pretrained weights for encoder family '" + family + "'; run `pretrain` first");
  return it->second;
}

FeatureMap encode(nd::Tape& tape, const world::Observation& obs, const EncoderFamily& family,
                  const EncoderWeights& w) {
  if (w.conv1_w.dim(0) != family.channels)
    throw ShapeError("encoder weights have " + std::to_string(w.conv1_w.dim(0)) +
                     " channels, family " + family.id + " declares " +
                     std::to_string(family.channels));
  const auto act = [&](const Tensor& x) {
    switch (family.activation) {
      case Activation::Relu: return nd::unary(tape, x, nd::Unary::Relu);
      case Activation::ExpLin: return nd::unary(tape, x, nd::Unary::ExpLin);
      case Activation::Tanh: return nd::unary(tape, x, nd::Unary::Tanh);
    }
    return x;
  };
  auto h = act(nd::conv2d(tape, obs.occupancy, w.conv1_w, w.conv1_b, family.kernel1 / 2));
  h = act(nd::conv2d(tape, h, w.conv2_w, w.conv2_b, family.kernel2 / 2));
  h = nd::channel_affine(tape, h, family.permutation, family.scale, family.shift);
  return {h, family.id, obs.grid};
}

Tensor fuse(nd::Tape& tape, std::span<const Tensor> candidates, const FusionWeights& w) {
  if (candidates.empty()) throw ShapeError("fuse: empty candidate sequence");
  const std::size_t c = w.score_w.dim(1);
  const auto& s0 = candidates.front().shape();
  for (const auto& f : candidates) {
    if (f.rank() != 3 || f.dim(0) != c)
      throw ShapeError("fuse: candidate has " + nd::shape_str(f.shape()) + " but fusion expects " +
                       std::to_string(c) + " channels; apply the collaborator's adapter first");
    if (f.dim(1) != s0[1] || f.dim(2) != s0[2]) throw ShapeError("fuse: candidates on different grids");
  }
  if (candidates.size() == 1) return candidates.front();
  std::vector<Tensor> scores;
  for (const auto& f : candidates) scores.push_back(nd::conv2d(tape, f, w.score_w, w.score_b, 0));
  auto weights = nd::softmax(tape, nd::concat(tape, scores));
  Tensor fused;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    auto term = nd::mul(tape, candidates[j], nd::slice_channels(tape, weights, j, 1));
    fused = fused.defined() ? nd::add(tape, fused, term) : term;
  }
  return fused;
}

Tensor fuse(nd::Tape& tape, std::span<const FeatureMap> candidates, const FusionWeights& w) {
  std::vector<Tensor> values;
  for (const auto& f : candidates) values.push_back(f.values);
  return fuse(tape, values, w);
}

RawHeadOutput detect_head(nd::Tape& tape, const Tensor& fused, const HeadWeights& w) {
  return {nd::conv2d(tape, fused, w.cls_w, w.cls_b, 0), nd::conv2d(tape, fused, w.reg_w, w.reg_b, 0)};
}

}  // namespace phcp::percept
