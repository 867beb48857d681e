#pragma once

// Command implementations behind the temploc executable. Each returns a
// process exit code and writes diagnostics to `err`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "temploc/io.hpp"
#include "temploc/pipeline.hpp"
#include "temploc/simulator.hpp"

namespace temploc::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfigError = 2, kIoError = 3, kPipelineError = 4 };

struct Options {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<Mode> mode;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::Io, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  require(!in.bad(), Errc::Io, "error reading '" + path + "'");
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::Io, "cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  require(static_cast<bool>(out), Errc::Io, "error writing '" + path.string() + "'");
}

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), Errc::Io, "cannot create output directory '" + dir + "'");
  return dir;
}

inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::InvalidConfig:
    case Errc::Parse: return kConfigError;
    case Errc::Io: return kIoError;
    default: return kPipelineError;
  }
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kPipelineError;
  }
}

struct LoadedSequence {
  std::vector<ScanFrame> frames;
  std::vector<FilePrediction> predictions;  // empty unless every record carries one
};

inline LoadedSequence load_sequence(const std::string& path) {
  std::istringstream in(read_file(path));
  auto records = read_sequence(in);
  require(!records.empty(), Errc::Parse, "sequence '" + path + "' has no frames");
  LoadedSequence seq;
  const bool all_pred = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.prediction.has_value(); });
  for (auto& r : records) {
    seq.frames.push_back(std::move(r.frame));
    if (all_pred) seq.predictions.push_back(std::move(*r.prediction));
  }
  return seq;
}

inline json summary_json(const std::optional<ErrorSummary>& s) {
  if (!s) return nullptr;
  return {{"mean_t", s->mean_t}, {"mean_r", s->mean_r}, {"median_t", s->median_t}, {"median_r", s->median_r}};
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json report_json(const TrajectoryReport& r) {
  json frames = json::array();
  for (const auto& f : r.per_frame) {
    frames.push_back({{"frame", f.t},
                      {"failed", f.failed},
                      {"failure", f.failure},
                      {"trans_err_m", number_or_null(f.error.translation_m)},
                      {"rot_err_deg", number_or_null(f.error.rotation_deg)},
                      {"inlier_count", f.inlier_count},
                      {"dropped_rows", f.dropped_rows},
                      {"n_points", f.n_points},
                      {"has_prior", f.has_prior}});
  }
  return {{"seed", r.seed}, {"frames", frames}, {"aggregates", summary_json(r.aggregates)}, {"failed_frames", r.failed_frames}};
}

inline PipelineResult run_mode(const LoadedSequence& seq, PipelineConfig pc, Mode mode, std::uint64_t seed, bool keep) {
  pc.mode = mode;
  return run_pipeline(seq.frames, pc, seed, seq.predictions, keep);
}

}  // namespace detail

/// Reads the config (defaults if no path) and applies command-line overrides.
inline RunConfig load_config(const Options& opt) {
  RunConfig cfg = opt.config_path ? parse_config_text(detail::read_file(*opt.config_path)) : parse_config(json::object());
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.mode) cfg.pipeline.mode = *opt.mode;
  cfg.validate();
  return cfg;
}

inline int cmd_simulate(const Options& opt, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const RunConfig cfg = load_config(opt);
    require(opt.out.has_value(), Errc::Io, "simulate requires --out <path>");
    const auto frames = simulate_sequence(cfg.world, cfg.trajectory, cfg.sensor, cfg.seed);
    std::ostringstream os;
    write_sequence(os, frames);
    detail::write_file(*opt.out, os.str());
    return int(kOk);
  });
}

inline int cmd_run(const Options& opt, const std::string& sequence_path, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const RunConfig cfg = load_config(opt);
    require(opt.out.has_value(), Errc::Io, "run requires --out <dir>");
    const auto seq = detail::load_sequence(sequence_path);
    const auto dir = detail::ensure_dir(*opt.out);
    const auto res = detail::run_mode(seq, cfg.pipeline, cfg.pipeline.mode, cfg.seed, true);

    json report = detail::report_json(res.report);
    report["config"] = config_to_json(cfg);
    report["mode"] = std::string(to_string(cfg.pipeline.mode));
    json losses = nullptr;
    if (cfg.pipeline.mode == Mode::Full) {
      try {
        losses = json::array();
        for (const auto& l : compute_losses(res, cfg.pipeline))
          losses.push_back({{"frame", l.t}, {"l_gce", l.l_gce}, {"l_pcg", l.l_pcg}, {"l_fuse", l.l_fuse}, {"l_full", l.l_full}});
      } catch (const Error& e) {
        if (e.code() != Errc::MissingIntermediates && e.code() != Errc::MissingGroundTruth) throw;
        losses = nullptr;
      }
    }
    report["losses"] = losses;

    std::ostringstream traj, pts;
    write_trajectory_table(traj, res.report.per_frame);
    write_points_table(pts, res.report.per_frame, res.frames);
    detail::write_file(dir / "report.json", report.dump(2) + "\n");
    detail::write_file(dir / "trajectory.csv", traj.str());
    detail::write_file(dir / "points.csv", pts.str());

    if (res.report.failed_frames == res.report.per_frame.size()) {
      err << "error: pose estimation failed on every frame\n";
      return int(kPipelineError);
    }
    return int(kOk);
  });
}

/// Runs all three modes on the same sequence and seed. Without a sequence
/// path the sequence is simulated from the config.
inline int cmd_ablate(const Options& opt, const std::optional<std::string>& sequence_path, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    RunConfig cfg = load_config(opt);
    require(opt.out.has_value(), Errc::Io, "ablate requires --out <dir>");
    detail::LoadedSequence seq;
    if (sequence_path) seq = detail::load_sequence(*sequence_path);
    else seq.frames = simulate_sequence(cfg.world, cfg.trajectory, cfg.sensor, cfg.seed);
    const auto dir = detail::ensure_dir(*opt.out);

    std::ostringstream table;
    table << "mode,seed,mean_t,mean_r,median_t,median_r\n";
    json reports = json::object();
    bool any_total_failure = false;
    for (Mode m : {Mode::MeasurementOnly, Mode::MeasurementConf, Mode::Full}) {
      const auto res = detail::run_mode(seq, cfg.pipeline, m, cfg.seed, false);
      const auto& a = res.report.aggregates;
      table << to_string(m) << ',' << cfg.seed << ',';
      if (a)
        table << format_double(a->mean_t) << ',' << format_double(a->mean_r) << ',' << format_double(a->median_t) << ','
              << format_double(a->median_r);
      else
        table << ",,,";
      table << '\n';
      reports[std::string(to_string(m))] = detail::report_json(res.report);
      any_total_failure = any_total_failure || !a;
    }
    json report{{"config", config_to_json(cfg)}, {"seed", cfg.seed}, {"modes", reports},
                {"sequence", sequence_path ? json(*sequence_path) : json("simulated")}};
    detail::write_file(dir / "ablation.csv", table.str());
    detail::write_file(dir / "ablation.json", report.dump(2) + "\n");
    if (any_total_failure) {
      err << "error: pose estimation failed on every frame in at least one mode\n";
      return int(kPipelineError);
    }
    return int(kOk);
  });
}

namespace detail {

inline std::vector<PoseError> successful_errors(const std::vector<TrajectoryRow>& rows) {
  std::vector<PoseError> out;
  for (const auto& r : rows)
    if (!r.failed) out.push_back(r.error);
  return out;
}

inline void print_summary(std::ostream& out, const std::string& label, const std::vector<TrajectoryRow>& rows) {
  const auto ok = successful_errors(rows);
  out << label << " frames " << rows.size() << " failed " << rows.size() - ok.size() << '\n';
  if (ok.empty()) {
    out << label << " no successful frames\n";
    return;
  }
  const auto s = aggregate_errors(ok);
  out << label << " mean_t " << format_double(s.mean_t) << " mean_r " << format_double(s.mean_r) << " median_t "
      << format_double(s.median_t) << " median_r " << format_double(s.median_r) << '\n';
}

inline std::vector<TrajectoryRow> load_table(const std::string& path) {
  std::istringstream in(read_file(path));
  try {
    return read_trajectory_table(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace detail

/// Aggregates one trajectory table, or compares two frame by frame. Deltas
/// are b minus a; a frame counts as a win for the table with the smaller
/// translation error and ties give each side half.
inline int cmd_eval(const std::string& path_a, const std::optional<std::string>& path_b, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const auto a = detail::load_table(path_a);
    detail::print_summary(out, "a", a);
    if (!path_b) return int(kOk);
    const auto b = detail::load_table(*path_b);
    detail::print_summary(out, "b", b);

    std::map<std::size_t, const TrajectoryRow*> by_frame;
    for (const auto& r : b) by_frame[r.frame] = &r;
    out << "frame,delta_t,delta_r\n";
    double wins_a = 0.0;
    std::size_t compared = 0;
    for (const auto& ra : a) {
      const auto it = by_frame.find(ra.frame);
      if (it == by_frame.end() || ra.failed || it->second->failed) continue;
      const auto& rb = *it->second;
      out << ra.frame << ',' << format_double(rb.error.translation_m - ra.error.translation_m) << ','
          << format_double(rb.error.rotation_deg - ra.error.rotation_deg) << '\n';
      if (ra.error.translation_m < rb.error.translation_m) wins_a += 1.0;
      else if (ra.error.translation_m == rb.error.translation_m) wins_a += 0.5;
      ++compared;
    }
    out << "compared " << compared << '\n';
    if (compared > 0) {
      out << "win_rate_a " << format_double(wins_a / static_cast<double>(compared)) << '\n';
      out << "win_rate_b " << format_double(1.0 - wins_a / static_cast<double>(compared)) << '\n';
    }
    return int(kOk);
  });
}

}  // namespace temploc::cli
