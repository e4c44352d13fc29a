#include "phcp/adapter/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "phcp/common/error.hpp"
#include "phcp/common/rng.hpp"
#include "phcp/ndgrad/tensor_file.hpp"

namespace phcp::adapter {

using nd::Tensor;

std::vector<std::pair<std::string, Tensor>> AdapterParams::named() const {
  return {{"proj.weight", proj_w}, {"proj.bias", proj_b},   {"cam.fc1.weight", mlp_w1},
          {"cam.fc1.bias", mlp_b1}, {"cam.fc2.weight", mlp_w2}, {"cam.fc2.bias", mlp_b2},
          {"sam.weight", sam_w},    {"sam.bias", sam_b},     {"gate.weight", gate_w},
          {"gate.bias", gate_b}};
}

std::vector<Tensor> AdapterParams::parameters() const {
  return {proj_w, proj_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2, sam_w, sam_b, gate_w, gate_b};
}

AdapterParams AdapterParams::clone() const {
  AdapterParams p = *this;
  p.proj_w = proj_w.clone();
  p.proj_b = proj_b.clone();
  p.mlp_w1 = mlp_w1.clone();
  p.mlp_b1 = mlp_b1.clone();
  p.mlp_w2 = mlp_w2.clone();
  p.mlp_b2 = mlp_b2.clone();
  p.sam_w = sam_w.clone();
  p.sam_b = sam_b.clone();
  p.gate_w = gate_w.clone();
  p.gate_b = gate_b.clone();
  return p;
}

AdapterParams adapter_init(std::size_t c_src, std::size_t c_ego, std::size_t reduction,
                           std::uint64_t seed, std::size_t sam_kernel) {
  if (reduction < 1 || c_src < reduction || c_ego < reduction)
    throw ConfigError("adapter_init: need c_src, c_ego >= r >= 1");
  if (c_ego % reduction != 0)
    throw ConfigError("adapter_init: reduction " + std::to_string(reduction) +
                      " does not divide ego channels " + std::to_string(c_ego));
  if (sam_kernel % 2 == 0) throw ConfigError("adapter_init: spatial kernel must be odd");
  Rng rng(derive_seed(seed, {0x616461707465ULL, c_src, c_ego}));
  auto small = [&](nd::Shape shape, double bound) {
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
    return t;
  };
  const std::size_t hidden = c_ego / reduction;
  AdapterParams p;
  p.c_src = c_src;
  p.c_ego = c_ego;
  p.reduction = reduction;
  p.sam_kernel = sam_kernel;
  if (c_src == c_ego) {
    p.proj_w = Tensor({c_ego, c_src, 1, 1});
    for (std::size_t c = 0; c < c_ego; ++c) p.proj_w.mutable_data()[c * c_src + c] = 1.0;
  } else {
    p.proj_w = small({c_ego, c_src, 1, 1}, 1.0 / std::sqrt(static_cast<double>(c_src)));
  }
  p.proj_b = Tensor({c_ego});
  p.mlp_w1 = small({hidden, c_ego}, 0.1);
  p.mlp_b1 = Tensor({hidden, 1});
  p.mlp_w2 = small({c_ego, hidden}, 0.1);
  p.mlp_b2 = Tensor({c_ego, 1});
  p.sam_w = small({1, 2, sam_kernel, sam_kernel}, 0.05);
  p.sam_b = Tensor({1});
  p.gate_w = Tensor({c_ego, c_ego, 1, 1});
  p.gate_b = Tensor({c_ego});
  for (auto& t : p.parameters()) t.set_requires_grad(true);
  return p;
}

AdapterTrace adapter_forward_traced(nd::Tape& tape, const Tensor& f, const AdapterParams& a) {
  if (f.rank() != 3 || f.dim(0) != a.c_src)
    throw ShapeError("adapter: input " + nd::shape_str(f.shape()) + " but adapter expects " +
                     std::to_string(a.c_src) + " channels");
  const std::size_t ce = a.c_ego;
  AdapterTrace tr;
  tr.projected = nd::conv2d(tape, f, a.proj_w, a.proj_b, 0);

  // Channel attention: the MLP is shared by both pooled descriptors.
  auto mlp = [&](const Tensor& desc) {
    auto v = nd::reshape(tape, desc, {ce, 1});
    auto hdn = nd::relu(tape, nd::add(tape, nd::matmul(tape, a.mlp_w1, v), a.mlp_b1));
    return nd::add(tape, nd::matmul(tape, a.mlp_w2, hdn), a.mlp_b2);
  };
  auto avg = nd::reduce(tape, tr.projected, nd::ReduceAxis::Spatial, nd::ReduceMode::Mean);
  auto mx = nd::reduce(tape, tr.projected, nd::ReduceAxis::Spatial, nd::ReduceMode::Max);
  tr.channel_gate = nd::reshape(tape, nd::sigmoid(tape, nd::add(tape, mlp(avg), mlp(mx))), {ce, 1, 1});
  auto pc = nd::mul(tape, tr.projected, tr.channel_gate);

  // Spatial attention over channel mean and max.
  auto desc = nd::concat(tape, {nd::reduce(tape, pc, nd::ReduceAxis::Channel, nd::ReduceMode::Mean),
                                nd::reduce(tape, pc, nd::ReduceAxis::Channel, nd::ReduceMode::Max)});
  tr.spatial_gate = nd::sigmoid(tape, nd::conv2d(tape, desc, a.sam_w, a.sam_b, a.sam_kernel / 2));
  auto refined = nd::mul(tape, pc, tr.spatial_gate);

  tr.output = nd::add(tape, tr.projected, nd::conv2d(tape, refined, a.gate_w, a.gate_b, 0));
  return tr;
}

percept::FeatureMap adapter_forward(nd::Tape& tape, const percept::FeatureMap& f,
                                    const AdapterParams& params, const std::string& ego_family) {
  if (f.channels() != params.c_src)
    throw ShapeError("adapter: feature map of family " + f.family + " has " +
                     std::to_string(f.channels()) + " channels, adapter expects " +
                     std::to_string(params.c_src));
  return {adapter_forward_traced(tape, f.values, params).output, ego_family, f.grid};
}

AdapterParams& AdapterRegistry::get_or_create(const std::string& key, std::size_t c_src) {
  auto it = adapters_.find(key);
  if (it != adapters_.end()) {
    if (it->second.c_src != c_src)
      throw ConfigError("adapter '" + key + "' exists with " + std::to_string(it->second.c_src) +
                        " source channels; requested " + std::to_string(c_src));
    return it->second;
  }
  auto params = adapter_init(c_src, c_ego_, reduction_, derive_seed(seed_, {fnv1a(key)}));
  return adapters_.emplace(key, std::move(params)).first->second;
}

const AdapterParams& AdapterRegistry::at(const std::string& key) const {
  auto it = adapters_.find(key);
  if (it == adapters_.end()) throw ConfigError("no adapter for '" + key + "'");
  return it->second;
}

std::pair<std::size_t, std::size_t> AdapterRegistry::dims(const std::string& key) const {
  const auto& a = at(key);
  return {a.c_src, a.c_ego};
}

void AdapterRegistry::freeze(const std::string& key) {
  auto it = adapters_.find(key);
  if (it == adapters_.end()) throw ConfigError("no adapter for '" + key + "'");
  for (auto& t : it->second.parameters()) t.set_requires_grad(false);
}

bool AdapterRegistry::frozen(const std::string& key) const {
  const auto ps = at(key).parameters();
  return std::none_of(ps.begin(), ps.end(), [](const Tensor& t) { return t.requires_grad(); });
}

AdapterParams AdapterRegistry::snapshot(const std::string& key) const { return at(key).clone(); }

std::vector<std::string> AdapterRegistry::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : adapters_) out.push_back(k);
  return out;
}

bool identical(const AdapterParams& a, const AdapterParams& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (a.c_src != b.c_src || a.c_ego != b.c_ego) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].shape() != pb[i].shape()) return false;
    const auto x = pa[i].data(), y = pb[i].data();
    if (!std::equal(x.begin(), x.end(), y.begin(), [](double u, double v) {
          return std::memcmp(&u, &v, sizeof(double)) == 0;
        }))
      return false;
  }
  return true;
}

std::string encode_adapter(const AdapterParams& params, const std::string& key) {
  nd::TensorBundle b;
  b.kind = "adapter";
  b.tag = key;
  b.tensors = params.named();
  return nd::encode_bundle(b);
}

AdapterParams decode_adapter(std::string_view bytes, std::string* key) {
  const auto b = nd::decode_bundle(bytes);
  if (b.kind != "adapter") throw FormatError("checkpoint holds '" + b.kind + "', expected 'adapter'");
  const auto& pw = b.get("proj.weight");
  const auto& w1 = b.get("cam.fc1.weight");
  const auto& sw = b.get("sam.weight");
  AdapterParams p = adapter_init(pw.dim(1), pw.dim(0), pw.dim(0) / w1.dim(0), 0, sw.dim(2));
  p.proj_w = b.get("proj.weight").clone();
  p.proj_b = b.get("proj.bias").clone();
  p.mlp_w1 = w1.clone();
  p.mlp_b1 = b.get("cam.fc1.bias").clone();
  p.mlp_w2 = b.get("cam.fc2.weight").clone();
  p.mlp_b2 = b.get("cam.fc2.bias").clone();
  p.sam_w = sw.clone();
  p.sam_b = b.get("sam.bias").clone();
  p.gate_w = b.get("gate.weight").clone();
  p.gate_b = b.get("gate.bias").clone();
  if (key) *key = b.tag;
  return p;
}

}  // namespace phcp::adapter
