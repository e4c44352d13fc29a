#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "phcp/percept/detection.hpp"
#include "phcp/world/lidar.hpp"

namespace phcp::protocol {

inline constexpr std::uint16_t kWireVersion = 1;

enum class MessageKind : std::uint8_t {
  StageI = 1,   // feature + detections
  StageII = 2,  // feature only
  Late = 3,     // detections only
  Early = 4,    // raw sweep
};

const char* kind_name(MessageKind k);

/// Wire layout (little endian):
///   header  "PHCM" | u16 version | u8 kind | u8 reserved | u32 sender | u32 frame | u32 body_len
///   feature u8 family_len | family | u16 C | u16 H | u16 W | f64 cell | f64 origin_x | f64 origin_y
///           | C*H*W f32 values
///   detections  6 x f32 per box (x, y, length, width, yaw, confidence), global frame,
///               filling the rest of the body
///   sweep   4 x f32 per point (x, y, z, intensity), global frame, filling the body
/// A StageI body is a feature followed by detections.
struct Message {
  std::uint16_t version = kWireVersion;
  int sender = 0;
  int frame = 0;
  MessageKind kind = MessageKind::StageII;
  std::optional<percept::FeatureMap> feature;
  percept::DetectionSet detections;  // global frame
  world::Sweep sweep;
  std::size_t payload_bytes = 0;  // set by encode/decode
};

inline constexpr std::size_t kHeaderBytes = 20;

/// Serializes and records the exact length in msg.payload_bytes.
std::string encode_message(Message& msg);
/// Throws FormatError on malformed input.
Message decode_message(std::string_view bytes);

/// Constructors enforcing which sections each kind carries.
Message stage_one_message(int sender, int frame, const percept::FeatureMap& f,
                          const percept::DetectionSet& global_dets);
Message stage_two_message(int sender, int frame, const percept::FeatureMap& f);
Message late_message(int sender, int frame, const percept::DetectionSet& global_dets);
Message early_message(int sender, int frame, const world::Sweep& sweep);

}  // namespace phcp::protocol
