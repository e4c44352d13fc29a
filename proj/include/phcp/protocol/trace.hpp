#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "phcp/protocol/session.hpp"

namespace phcp::protocol {

/// Binary trace: "PHCPTRC\0" | u32 version | u32 count | per record u32 length | message bytes.
/// The JSON index sidecar ("phcp.trace-index", version 1) lists, per record,
/// its offset, length, frame, sender, kind, mode and phase.
struct TraceFiles {
  std::filesystem::path binary;
  std::filesystem::path index;
};

TraceFiles trace_paths(const std::filesystem::path& stem);

/// Requires every entry to carry its message bytes.
void write_trace(const TraceFiles& files, const std::vector<TraceEntry>& trace, const std::string& fingerprint);

struct ReplaySummary {
  std::size_t records = 0;
  std::string fingerprint;
  std::vector<TraceEntry> entries;  // rebuilt from the decoded messages
  std::vector<Message> messages;
};

/// Decodes every record and checks it against the index; throws FormatError
/// on any disagreement.
ReplaySummary replay_trace(const TraceFiles& files);

}  // namespace phcp::protocol
