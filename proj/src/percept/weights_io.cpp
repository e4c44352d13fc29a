#include "phcp/percept/weights_io.hpp"

#include "phcp/common/error.hpp"
#include "phcp/common/io.hpp"
#include "phcp/ndgrad/tensor_file.hpp"

namespace phcp::percept {

std::string encode_model(const ModelWeights& model) {
  nd::TensorBundle b;
  b.kind = "model";
  b.tag = model.family;
  b.tensors = model.named();
  return nd::encode_bundle(b);
}

ModelWeights decode_model(std::string_view bytes, const FamilyRegistry& families) {
  const auto b = nd::decode_bundle(bytes);
  if (b.kind != "model") throw FormatError("weights file holds '" + b.kind + "', expected 'model'");
  const auto& fam = families.get(b.tag);
  // Reference shapes come from a fresh initialization of the family.
  auto m = init_model(fam, 0);
  std::vector<nd::Tensor*> slots{&m.encoder.conv1_w, &m.encoder.conv1_b, &m.encoder.conv2_w,
                                 &m.encoder.conv2_b, &m.fusion.score_w,  &m.fusion.score_b,
                                 &m.head.cls_w,      &m.head.cls_b,      &m.head.reg_w,
                                 &m.head.reg_b};
  const auto names = m.named();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& loaded = b.get(names[i].first);
    if (loaded.shape() != slots[i]->shape())
      throw FormatError("weights '" + names[i].first + "' for family " + b.tag + " have shape " +
                        nd::shape_str(loaded.shape()) + ", expected " +
                        nd::shape_str(slots[i]->shape()));
    *slots[i] = loaded;
  }
  return m;
}

void save_model(const std::filesystem::path& path, const ModelWeights& model) {
  write_file_atomic(path, encode_model(model));
}

ModelWeights load_model(const std::filesystem::path& path, const FamilyRegistry& families) {
  return decode_model(read_file(path), families);
}

}  // namespace phcp::percept
