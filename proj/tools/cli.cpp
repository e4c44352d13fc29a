#include "cli.hpp"

#include <CLI11.hpp>
#include <optional>

#include "phcp/common/error.hpp"
#include "phcp/experiment/commands.hpp"
#include "phcp/protocol/trace.hpp"

namespace phcp::cli {

namespace {

using namespace phcp::experiment;

std::string iou_label(double iou) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", iou);
  return buf;
}

void print_summary(std::ostream& out, const SuiteResult& r) {
  out << r.label << ":";
  for (const auto& [iou, v] : r.msap) out << "  mSAP@" << iou_label(iou) << " " << eval::format_number(v);
  out << "  wSAP@0.7 " << eval::format_number(r.wsap.at(0.7)) << "\n";
}

void print_files(std::ostream& out, const CommandOutput& o) {
  out << "wrote " << o.files.size() << " file(s) under " << o.dir.string() << "\n";
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive heterogeneous collaborative perception simulator"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  app.add_option("-c,--config", config_path, "experiment config (JSON); defaults apply when omitted");
  app.add_option("-o,--out", out_dir, "output root (overrides output_dir and $PHCP_OUT)");

  auto* gen = app.add_subcommand("gen-data", "generate and save the scenario suite");
  auto* pre = app.add_subcommand("pretrain", "pretrain every encoder family on homogeneous scenarios");
  auto* run = app.add_subcommand("run", "evaluate collaboration modes on the suite");
  std::vector<std::string> mode_names;
  bool traces = false;
  run->add_option("-m,--mode", mode_names, "phcp, direct, late, early or homog (default: the config's modes)")
      ->check(CLI::IsMember({"phcp", "direct", "late", "early", "homog"}));
  run->add_flag("--trace", traces, "also write a message trace per scenario");
  auto* shots = app.add_subcommand("ablate-shots", "sweep k over 0, 1, 5 and 10");
  auto* thresh = app.add_subcommand("ablate-threshold", "sweep the pseudo-label threshold (0.2, 0.5, 0.7, soft)");
  auto* cross = app.add_subcommand("cross-matrix", "cross-scenario adapter generalization matrix");
  auto* bw = app.add_subcommand("bandwidth", "per-frame payload by mode and message kind");
  auto* replay = app.add_subcommand("replay", "decode a message trace and check it against its index");
  std::string trace_stem;
  replay->add_option("stem", trace_stem, "trace path without the .trace/.trace.json suffix")->required();
  auto* show = app.add_subcommand("config", "print the effective config with every default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    auto cfg = config_path.empty() ? default_config() : load_config(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    const auto root = output_root(cfg);

    if (*show) {
      out << config_to_json(cfg);
    } else if (*gen) {
      print_files(out, gen_data(cfg, root));
    } else if (*pre) {
      print_files(out, pretrain(cfg, root));
    } else if (*run) {
      std::vector<protocol::Mode> modes;
      for (const auto& m : mode_names) modes.push_back(protocol::parse_mode(m));
      if (modes.empty()) modes = cfg.modes;
      std::map<std::string, SuiteResult> results;
      const auto o = run_modes(cfg, root, modes, traces, &results);
      for (auto m : modes) print_summary(out, results.at(protocol::mode_name(m)));
      print_files(out, o);
    } else if (*shots) {
      std::map<int, SuiteResult> results;
      const auto o = ablate_shots(cfg, root, &results);
      for (int k : kShotSweep) print_summary(out, results.at(k));
      print_files(out, o);
    } else if (*thresh) {
      std::map<std::string, SuiteResult> results;
      const auto o = ablate_threshold(cfg, root, &results);
      for (const auto& [col, r] : results) print_summary(out, r);
      print_files(out, o);
    } else if (*cross) {
      CrossMatrixResult r;
      const auto o = cross_matrix(cfg, root, &r);
      out << "off-diagonal median " << eval::format_number(r.median) << "\n";
      print_files(out, o);
    } else if (*bw) {
      std::vector<protocol::PayloadRow> rows;
      const auto o = bandwidth(cfg, root, &rows);
      for (const auto& row : rows)
        out << row.mode << " " << row.kind << ": " << eval::format_number(row.bytes_per_frame) << " bytes/frame\n";
      print_files(out, o);
    } else if (*replay) {
      const auto s = protocol::replay_trace(protocol::trace_paths(trace_stem));
      out << s.records << " record(s), fingerprint " << s.fingerprint << "\n";
      for (const auto& row : protocol::payload_report(s.entries))
        out << row.mode << " " << row.phase << " " << row.kind << ": " << row.messages << " message(s), "
            << row.total_bytes << " bytes\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const PrerequisiteError& e) {
    err << "missing prerequisite: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace phcp::cli
