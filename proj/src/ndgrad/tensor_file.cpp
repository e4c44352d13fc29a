#include "phcp/ndgrad/tensor_file.hpp"

#include "phcp/common/bytes.hpp"

namespace phcp::nd {

namespace {
constexpr std::string_view kMagic{"PHCPTNS\0", 8};
}

const Tensor& TensorBundle::get(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("tensor bundle '" + tag + "' has no tensor named '" + std::string(name) + "'");
}

std::string encode_bundle(const TensorBundle& b) {
  ByteWriter w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kTensorFileVersion);
  w.put_string(b.kind);
  w.put_string(b.tag);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.tensors.size()));
  for (const auto& [name, t] : b.tensors) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.put<double>(v);
  }
  return w.take();
}

TensorBundle decode_bundle(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_bytes(kMagic.size()) != kMagic) throw FormatError("not a tensor bundle (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kTensorFileVersion)
    throw FormatError("unsupported tensor bundle version " + std::to_string(version));
  TensorBundle b;
  b.kind = r.get_string();
  b.tag = r.get_string();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 4) throw FormatError("tensor '" + name + "' has invalid rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.get<double>();
    b.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor bundle");
  return b;
}

}  // namespace phcp::nd
