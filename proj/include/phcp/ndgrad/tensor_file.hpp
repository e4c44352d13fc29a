#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "phcp/ndgrad/tensor.hpp"

namespace phcp::nd {

inline constexpr std::uint32_t kTensorFileVersion = 1;

/// Named tensors plus a kind and tag, in a versioned little-endian container:
///   "PHCPTNS\0" | u32 version | str kind | str tag | u32 count |
///   count x (str name | u32 rank | u32 dims[rank] | f64 data[numel])
/// where str is u32 length followed by bytes.
struct TensorBundle {
  std::string kind;
  std::string tag;
  std::vector<std::pair<std::string, Tensor>> tensors;

  /// Throws FormatError when the name is absent.
  const Tensor& get(std::string_view name) const;
};

std::string encode_bundle(const TensorBundle& bundle);
TensorBundle decode_bundle(std::string_view bytes);

}  // namespace phcp::nd
