#include "phcp/protocol/message.hpp"

#include <limits>

#include "phcp/common/bytes.hpp"
#include "phcp/common/error.hpp"

namespace phcp::protocol {

namespace {
constexpr char kMagic[4] = {'P', 'H', 'C', 'M'};
constexpr std::size_t kDetectionBytes = 6 * sizeof(float);
constexpr std::size_t kPointBytes = 4 * sizeof(float);

void put_feature(ByteWriter& w, const percept::FeatureMap& f) {
  if (f.family.size() > 255) throw FormatError("family id longer than 255 bytes");
  const auto& s = f.values.shape();
  if (f.values.rank() != 3 || s[0] > 0xffff || s[1] > 0xffff || s[2] > 0xffff)
    throw FormatError("feature map " + nd::shape_str(s) + " cannot be encoded");
  w.put<std::uint8_t>(static_cast<std::uint8_t>(f.family.size()));
  w.put_bytes(f.family);
  for (auto d : s) w.put<std::uint16_t>(static_cast<std::uint16_t>(d));
  w.put<double>(f.grid.cell_size);
  w.put<double>(f.grid.origin_x);
  w.put<double>(f.grid.origin_y);
  for (double v : f.values.data()) w.put<float>(static_cast<float>(v));
}

percept::FeatureMap get_feature(ByteReader& r) {
  percept::FeatureMap f;
  const auto n = r.get<std::uint8_t>();
  f.family = std::string(r.get_bytes(n));
  const std::size_t c = r.get<std::uint16_t>(), h = r.get<std::uint16_t>(), w = r.get<std::uint16_t>();
  if (c == 0 || h == 0 || w == 0) throw FormatError("feature map with an empty dimension");
  f.grid.height = h;
  f.grid.width = w;
  f.grid.cell_size = r.get<double>();
  f.grid.origin_x = r.get<double>();
  f.grid.origin_y = r.get<double>();
  std::vector<double> vals(c * h * w);
  for (auto& v : vals) v = r.get<float>();
  f.values = nd::Tensor({c, h, w}, std::move(vals));
  return f;
}

void put_detections(ByteWriter& w, const percept::DetectionSet& d) {
  if (d.coords != percept::CoordFrame::Global)
    throw ProtocolError("detections must be converted to the global frame before sending");
  for (const auto& x : d.items)
    for (double v : {x.box.center_x, x.box.center_y, x.box.length, x.box.width, x.box.yaw, x.confidence})
      w.put<float>(static_cast<float>(v));
}

percept::DetectionSet get_detections(ByteReader& r, int frame) {
  if (r.remaining() % kDetectionBytes != 0) throw FormatError("detection section has a partial record");
  percept::DetectionSet d;
  d.frame = frame;
  d.coords = percept::CoordFrame::Global;
  while (!r.done()) {
    percept::Detection x;
    x.box.center_x = r.get<float>();
    x.box.center_y = r.get<float>();
    x.box.length = r.get<float>();
    x.box.width = r.get<float>();
    x.box.yaw = r.get<float>();
    x.confidence = r.get<float>();
    d.items.push_back(x);
  }
  return d;
}
}  // namespace

const char* kind_name(MessageKind k) {
  switch (k) {
    case MessageKind::StageI: return "stage1";
    case MessageKind::StageII: return "stage2";
    case MessageKind::Late: return "late";
    case MessageKind::Early: return "early";
  }
  return "?";
}

std::string encode_message(Message& msg) {
  ByteWriter body;
  switch (msg.kind) {
    case MessageKind::StageI:
    case MessageKind::StageII:
      if (!msg.feature) throw ProtocolError(std::string(kind_name(msg.kind)) + " message without a feature");
      put_feature(body, *msg.feature);
      if (msg.kind == MessageKind::StageI) put_detections(body, msg.detections);
      break;
    case MessageKind::Late: put_detections(body, msg.detections); break;
    case MessageKind::Early:
      for (const auto& p : msg.sweep.points) {
        body.put<float>(p.x);
        body.put<float>(p.y);
        body.put<float>(p.z);
        body.put<float>(p.intensity);
      }
      break;
  }
  if (body.size() > std::numeric_limits<std::uint32_t>::max()) throw FormatError("message body too large");
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint16_t>(msg.version);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(msg.kind));
  w.put<std::uint8_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(msg.sender));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(msg.frame));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(body.size()));
  w.put_bytes(body.bytes());
  msg.payload_bytes = w.size();
  return w.take();
}

Message decode_message(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_bytes(4) != std::string_view(kMagic, 4)) throw FormatError("not a PHCP message (bad magic)");
  Message m;
  m.version = r.get<std::uint16_t>();
  if (m.version != kWireVersion)
    throw FormatError("unsupported message version " + std::to_string(m.version));
  const auto kind = r.get<std::uint8_t>();
  if (kind < 1 || kind > 4) throw FormatError("unknown message kind " + std::to_string(kind));
  m.kind = static_cast<MessageKind>(kind);
  r.get<std::uint8_t>();
  m.sender = static_cast<int>(r.get<std::uint32_t>());
  m.frame = static_cast<int>(r.get<std::uint32_t>());
  const auto body_len = r.get<std::uint32_t>();
  if (r.remaining() != body_len) throw FormatError("message body length mismatch");
  ByteReader b(r.get_bytes(body_len));
  switch (m.kind) {
    case MessageKind::StageI:
    case MessageKind::StageII:
      m.feature = get_feature(b);
      if (m.kind == MessageKind::StageII && !b.done()) throw FormatError("trailing bytes in stage2 message");
      m.detections = get_detections(b, m.frame);
      break;
    case MessageKind::Late: m.detections = get_detections(b, m.frame); break;
    case MessageKind::Early:
      if (b.remaining() % kPointBytes != 0) throw FormatError("sweep section has a partial point");
      m.sweep.agent_id = m.sender;
      while (!b.done()) {
        world::LidarPoint p;
        p.x = b.get<float>();
        p.y = b.get<float>();
        p.z = b.get<float>();
        p.intensity = b.get<float>();
        m.sweep.points.push_back(p);
      }
      break;
  }
  m.detections.frame = m.frame;
  m.payload_bytes = bytes.size();
  return m;
}

Message stage_one_message(int sender, int frame, const percept::FeatureMap& f,
                          const percept::DetectionSet& global_dets) {
  Message m;
  m.sender = sender;
  m.frame = frame;
  m.kind = MessageKind::StageI;
  m.feature = f;
  m.detections = global_dets;
  return m;
}

Message stage_two_message(int sender, int frame, const percept::FeatureMap& f) {
  Message m;
  m.sender = sender;
  m.frame = frame;
  m.kind = MessageKind::StageII;
  m.feature = f;
  m.detections.coords = percept::CoordFrame::Global;
  return m;
}

Message late_message(int sender, int frame, const percept::DetectionSet& global_dets) {
  Message m;
  m.sender = sender;
  m.frame = frame;
  m.kind = MessageKind::Late;
  m.detections = global_dets;
  return m;
}

Message early_message(int sender, int frame, const world::Sweep& sweep) {
  Message m;
  m.sender = sender;
  m.frame = frame;
  m.kind = MessageKind::Early;
  m.sweep = sweep;
  return m;
}

}  // namespace phcp::protocol
