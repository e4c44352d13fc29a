#include "phcp/protocol/trace.hpp"

#include <json.hpp>

#include "phcp/common/bytes.hpp"
#include "phcp/common/error.hpp"
#include "phcp/common/io.hpp"

namespace phcp::protocol {

namespace {
constexpr char kTraceMagic[8] = {'P', 'H', 'C', 'P', 'T', 'R', 'C', '\0'};
constexpr std::uint32_t kTraceVersion = 1;

Phase parse_phase(const std::string& s) {
  for (Phase p : {Phase::StageI, Phase::StageII, Phase::None})
    if (s == phase_name(p)) return p;
  throw FormatError("unknown phase '" + s + "' in trace index");
}
}  // namespace

TraceFiles trace_paths(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".trace";
  auto idx = stem;
  idx += ".trace.json";
  return {bin, idx};
}

void write_trace(const TraceFiles& files, const std::vector<TraceEntry>& trace, const std::string& fingerprint) {
  ByteWriter w;
  w.put_bytes(std::string_view(kTraceMagic, 8));
  w.put<std::uint32_t>(kTraceVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(trace.size()));
  nlohmann::ordered_json idx;
  idx["schema"] = "phcp.trace-index";
  idx["version"] = kTraceVersion;
  idx["fingerprint"] = fingerprint;
  auto& recs = idx["records"] = nlohmann::ordered_json::array();
  for (const auto& e : trace) {
    if (e.bytes.size() != e.payload_bytes)
      throw ProtocolError("trace entry without message bytes; enable keep_message_bytes");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.bytes.size()));
    nlohmann::ordered_json r;
    r["offset"] = w.size();
    r["length"] = e.bytes.size();
    r["frame"] = e.frame;
    r["sender"] = e.sender;
    r["kind"] = kind_name(e.kind);
    r["mode"] = mode_name(e.mode);
    r["phase"] = phase_name(e.phase);
    recs.push_back(std::move(r));
    w.put_bytes(e.bytes);
  }
  write_file_atomic(files.binary, w.bytes());
  write_file_atomic(files.index, idx.dump(1) + "\n");
}

namespace {

ReplaySummary replay_checked(const TraceFiles& files) {
  const auto bin = read_file(files.binary);
  nlohmann::json idx;
  try {
    idx = nlohmann::json::parse(read_file(files.index));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace index: ") + e.what());
  }
  if (idx.value("schema", "") != "phcp.trace-index" || idx.value("version", 0) != 1)
    throw FormatError("trace index has an unsupported schema or version");
  ByteReader r(bin);
  if (r.get_bytes(8) != std::string_view(kTraceMagic, 8)) throw FormatError("not a PHCP trace file");
  if (r.get<std::uint32_t>() != kTraceVersion) throw FormatError("unsupported trace version");
  const auto count = r.get<std::uint32_t>();
  const auto& recs = idx.at("records");
  if (recs.size() != count) throw FormatError("trace index lists " + std::to_string(recs.size()) +
                                              " records, binary holds " + std::to_string(count));
  ReplaySummary out;
  out.fingerprint = idx.value("fingerprint", "");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    const auto& rec = recs[i];
    if (rec.at("offset").get<std::size_t>() != r.position() || rec.at("length").get<std::size_t>() != len)
      throw FormatError("trace record " + std::to_string(i) + " disagrees with the index");
    auto msg = decode_message(r.get_bytes(len));
    TraceEntry e;
    e.frame = msg.frame;
    e.sender = msg.sender;
    e.kind = msg.kind;
    e.payload_bytes = msg.payload_bytes;
    e.mode = parse_mode(rec.at("mode").get<std::string>());
    e.phase = parse_phase(rec.at("phase").get<std::string>());
    if (rec.at("frame").get<int>() != e.frame || rec.at("sender").get<int>() != e.sender ||
        rec.at("kind").get<std::string>() != kind_name(e.kind))
      throw FormatError("trace record " + std::to_string(i) + " header disagrees with the index");
    out.entries.push_back(e);
    out.messages.push_back(std::move(msg));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last trace record");
  out.records = count;
  return out;
}

}  // namespace

ReplaySummary replay_trace(const TraceFiles& files) {
  try {
    return replay_checked(files);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace index: ") + e.what());
  }
}

}  // namespace phcp::protocol
