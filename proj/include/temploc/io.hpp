#pragma once

// Text formats: point clouds, line-delimited JSON sequences, the JSON
// configuration document, and comma-separated result tables. Every double
// is printed in shortest round-trip form.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Geometry>
#include <json.hpp>

#include "temploc/error.hpp"
#include "temploc/geometry.hpp"
#include "temploc/pipeline.hpp"
#include "temploc/scan_frame.hpp"
#include "temploc/simulator.hpp"

namespace temploc {

using json = nlohmann::json;

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// ---------------------------------------------------------------- point clouds

inline void write_point_cloud(std::ostream& os, std::span<const Point3> cloud) {
  os << "x y z\n";
  for (const auto& p : cloud) os << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
}

inline PointCloud read_point_cloud(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && line == "x y z", Errc::Parse,
          "point cloud: first line must be 'x y z'");
  PointCloud out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ' ');
    std::optional<double> x, y, z;
    if (f.size() == 3) {
      x = parse_double(f[0]);
      y = parse_double(f[1]);
      z = parse_double(f[2]);
    }
    require(x && y && z, Errc::Parse, "point cloud: malformed line " + std::to_string(lineno));
    Point3 p(*x, *y, *z);
    require(is_finite(p), Errc::Parse, "point cloud: non-finite value on line " + std::to_string(lineno));
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------- sequences
//
// One JSON object per line:
//   {"t": 0, "pose": {"rotation": [9 row-major], "translation": [3]},
//    "points": [3N], "gt_global": [3N],
//    "pred": [3N], "pred_u": [N]}          <- optional, file-backed predictor

namespace detail {

inline json flatten(std::span<const Point3> pts) {
  json a = json::array();
  for (const auto& p : pts) {
    a.push_back(p.x());
    a.push_back(p.y());
    a.push_back(p.z());
  }
  return a;
}

inline PointCloud unflatten(const json& a, const std::string& what) {
  require(a.is_array() && a.size() % 3 == 0, Errc::Parse, what + " must be a flat array of 3N numbers");
  PointCloud out;
  out.reserve(a.size() / 3);
  for (std::size_t i = 0; i < a.size(); i += 3) {
    require(a[i].is_number() && a[i + 1].is_number() && a[i + 2].is_number(), Errc::Parse, what + " has a non-number");
    out.emplace_back(a[i].get<double>(), a[i + 1].get<double>(), a[i + 2].get<double>());
  }
  return out;
}

}  // namespace detail

struct SequenceRecord {
  ScanFrame frame;
  std::optional<FilePrediction> prediction;
};

inline std::string sequence_line(const ScanFrame& f, const FilePrediction* pred = nullptr) {
  json j;
  j["t"] = f.index;
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(f.gt_pose.rotation(r, c));
  j["pose"] = {{"rotation", rot},
               {"translation", {f.gt_pose.translation.x(), f.gt_pose.translation.y(), f.gt_pose.translation.z()}}};
  j["points"] = detail::flatten(f.local_points);
  j["gt_global"] = detail::flatten(f.gt_global);
  if (pred) {
    j["pred"] = detail::flatten(pred->coords);
    j["pred_u"] = pred->uncertainty;
  }
  return j.dump();
}

inline void write_sequence(std::ostream& os, std::span<const ScanFrame> frames) {
  for (const auto& f : frames) os << sequence_line(f) << '\n';
}

inline SequenceRecord parse_sequence_line(std::string_view line, std::size_t lineno) {
  const std::string where = "sequence line " + std::to_string(lineno);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(Errc::Parse, where + ": " + e.what());
  }
  require(j.is_object(), Errc::Parse, where + ": not an object");
  static const std::set<std::string> known{"t", "pose", "points", "gt_global", "pred", "pred_u"};
  for (auto it = j.begin(); it != j.end(); ++it)
    require(known.count(it.key()) > 0, Errc::Parse, where + ": unknown field '" + it.key() + "'");
  for (const char* k : {"t", "pose", "points", "gt_global"})
    require(j.contains(k), Errc::Parse, where + ": missing field '" + std::string(k) + "'");
  require(j["t"].is_number_unsigned(), Errc::Parse, where + ": t must be a nonnegative integer");

  SequenceRecord rec;
  rec.frame.index = j["t"].get<std::size_t>();
  const auto& pose = j["pose"];
  require(pose.is_object() && pose.size() == 2 && pose.contains("rotation") && pose.contains("translation"), Errc::Parse,
          where + ": pose needs exactly rotation and translation");
  const auto& rot = pose["rotation"];
  const auto& tr = pose["translation"];
  require(rot.is_array() && rot.size() == 9 && tr.is_array() && tr.size() == 3, Errc::Parse,
          where + ": pose needs 9 rotation and 3 translation numbers");
  try {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rec.frame.gt_pose.rotation(r, c) = rot[static_cast<std::size_t>(r * 3 + c)].get<double>();
    for (int i = 0; i < 3; ++i) rec.frame.gt_pose.translation(i) = tr[static_cast<std::size_t>(i)].get<double>();
  } catch (const json::exception& e) {
    throw Error(Errc::Parse, where + ": " + e.what());
  }
  rec.frame.local_points = detail::unflatten(j["points"], where + ": points");
  rec.frame.gt_global = detail::unflatten(j["gt_global"], where + ": gt_global");
  require(rec.frame.gt_global.empty() || rec.frame.gt_global.size() == rec.frame.local_points.size(), Errc::Parse,
          where + ": gt_global length differs from points");
  if (j.contains("pred")) {
    FilePrediction p;
    p.coords = detail::unflatten(j["pred"], where + ": pred");
    require(j.contains("pred_u") && j["pred_u"].is_array(), Errc::Parse, where + ": pred requires pred_u");
    for (const auto& u : j["pred_u"]) {
      require(u.is_number(), Errc::Parse, where + ": pred_u has a non-number");
      p.uncertainty.push_back(u.get<double>());
    }
    require(p.coords.size() == rec.frame.local_points.size() && p.uncertainty.size() == p.coords.size(), Errc::Parse,
            where + ": prediction length differs from points");
    rec.prediction = std::move(p);
  }
  return rec;
}

inline std::vector<SequenceRecord> read_sequence(std::istream& is) {
  std::vector<SequenceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(parse_sequence_line(line, lineno));
  }
  return out;
}

// ---------------------------------------------------------------- config

struct RunConfig {
  std::uint64_t seed = 1;
  WorldConfig world;
  SensorConfig sensor;
  TrajectoryConfig trajectory;
  PipelineConfig pipeline;

  void validate() const {
    world.validate();
    sensor.validate();
    trajectory.validate();
    pipeline.validate();
  }
};

namespace detail {

/// Reads fields out of one JSON object, remembering which keys were used so
/// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    require(obj_.is_object(), Errc::InvalidConfig, key_path("") + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!obj_.contains(key)) return;
    const auto& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        require(v.is_boolean(), Errc::InvalidConfig, key_path(key) + " must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        require(v.is_number_integer(), Errc::InvalidConfig, key_path(key) + " must be an integer");
        if constexpr (std::is_unsigned_v<T>)
          require(v.is_number_unsigned(), Errc::InvalidConfig, key_path(key) + " must be nonnegative");
      } else if constexpr (std::is_floating_point_v<T>) {
        require(v.is_number(), Errc::InvalidConfig, key_path(key) + " must be a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        require(v.is_string(), Errc::InvalidConfig, key_path(key) + " must be a string");
      }
      out = v.get<T>();
    } catch (const json::exception&) {
      throw Error(Errc::InvalidConfig, key_path(key) + " has the wrong type");
    }
  }

  void get_radii(const char* key, std::vector<double>& out) {
    used_.insert(key);
    if (!obj_.contains(key)) return;
    const auto& v = obj_.at(key);
    require(v.is_array() && !v.empty(), Errc::InvalidConfig, key_path(key) + " must be a nonempty array of numbers");
    out.clear();
    for (const auto& e : v) {
      require(e.is_number(), Errc::InvalidConfig, key_path(key) + " must be a nonempty array of numbers");
      out.push_back(e.get<double>());
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    used_.insert(key);
    if (!obj_.contains(key)) return;
    const auto& v = obj_.at(key);
    if (v.is_null()) {
      out.reset();
      return;
    }
    require(v.is_number(), Errc::InvalidConfig, key_path(key) + " must be a number or null");
    out = v.get<double>();
  }

  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    used_.insert(key);
    if (!obj_.contains(key)) return;
    ObjectReader sub(obj_.at(key), key_path(key));
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      require(used_.count(it.key()) > 0, Errc::InvalidConfig, "unknown config key '" + key_path(it.key()) + "'");
  }

 private:
  std::string key_path(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename E, typename Parse>
void get_enum(ObjectReader& r, const char* key, const std::string& path, E& out, Parse&& parse) {
  std::string s;
  bool present = false;
  {
    std::string probe = "\x01";
    r.get(key, probe);
    present = probe != "\x01";
    s = probe;
  }
  if (!present) return;
  const auto v = parse(s);
  require(v.has_value(), Errc::InvalidConfig, "config key '" + path + "' has invalid value '" + s + "'");
  out = *v;
}

}  // namespace detail

inline RunConfig parse_config(const json& doc) {
  RunConfig c;
  detail::ObjectReader root(doc, "");
  root.get("seed", c.seed);
  root.section("world", [&](detail::ObjectReader& r) {
    auto& w = c.world;
    r.get("extent", w.extent);
    r.get("n_buildings", w.n_buildings);
    r.get("building_size_min", w.building_size_min);
    r.get("building_size_max", w.building_size_max);
    r.get("building_height_min", w.building_height_min);
    r.get("building_height_max", w.building_height_max);
    r.get("ground_density", w.ground_density);
    r.get("wall_density", w.wall_density);
    r.get("clutter_fraction", w.clutter_fraction);
    r.get("clutter_pool", w.clutter_pool);
  });
  root.section("sensor", [&](detail::ObjectReader& r) {
    r.get("max_range", c.sensor.max_range);
    r.get("points_per_scan", c.sensor.points_per_scan);
    r.get("scan_noise_sigma", c.sensor.scan_noise_sigma);
  });
  root.section("trajectory", [&](detail::ObjectReader& r) {
    auto& t = c.trajectory;
    r.get("n_frames", t.n_frames);
    r.get("step", t.step);
    r.get("turn_rate_deg", t.turn_rate_deg);
    r.get("heading_noise_deg", t.heading_noise_deg);
    r.get("start_x", t.start_x);
    r.get("start_y", t.start_y);
    r.get("height", t.height);
  });
  root.section("pipeline", [&](detail::ObjectReader& r) {
    auto& p = c.pipeline;
    detail::get_enum(r, "mode", "pipeline.mode", p.mode, parse_mode);
    r.get("voxel_size", p.voxel_size);
    r.get("k_neighbors", p.k_neighbors);
    r.get_radii("feature_radii", p.feature_radii);
    r.get("prior_gamma", p.prior_gamma);
    r.get("loss_epoch", p.loss_epoch);
    detail::get_enum(r, "predictor", "pipeline.predictor", p.predictor, [](const std::string& s) -> std::optional<Predictor> {
      if (s == "synthetic") return Predictor::Synthetic;
      if (s == "file") return Predictor::File;
      return std::nullopt;
    });
    detail::get_enum(r, "prior_source", "pipeline.prior_source", p.prior_source,
                     [](const std::string& s) -> std::optional<PriorSource> {
                       if (s == "fused") return PriorSource::Fused;
                       if (s == "measurement") return PriorSource::Measurement;
                       return std::nullopt;
                     });
    r.section("features", [&](detail::ObjectReader& f) {
      detail::get_enum(f, "backbone", "pipeline.features.backbone", p.backbone,
                       [](const std::string& s) -> std::optional<FeatureBackbone> {
                         if (s == "geometric") return FeatureBackbone::Geometric;
                         if (s == "synthetic") return FeatureBackbone::Synthetic;
                         return std::nullopt;
                       });
      f.get("dim", p.synthetic_features.dim);
      f.get("noise", p.synthetic_features.noise);
      f.get("mismatch_rate", p.synthetic_features.mismatch_rate);
      f.get("seed", p.synthetic_features.seed);
    });
    r.section("loss_weights", [&](detail::ObjectReader& f) {
      f.get("lambda1", p.loss_weights.lambda1);
      f.get("lambda2", p.loss_weights.lambda2);
      f.get("lambda3", p.loss_weights.lambda3);
    });
    r.section("tau_schedule", [&](detail::ObjectReader& f) {
      f.get("tau0", p.tau_schedule.tau0);
      f.get("decay_factor", p.tau_schedule.decay_factor);
      f.get("period_epochs", p.tau_schedule.period_epochs);
    });
    r.section("ransac", [&](detail::ObjectReader& f) {
      f.get("iterations", p.ransac.iterations);
      f.get("inlier_threshold", p.ransac.inlier_threshold);
      f.get("min_sample", p.ransac.min_sample);
      f.get("seed", p.ransac.seed);
      f.get_optional("uncertainty_filter", p.ransac.uncertainty_filter);
      f.get("refine_with_inliers", p.ransac.refine_with_inliers);
      f.get("uncertainty_weighting", p.ransac.uncertainty_weighting);
    });
    r.section("noise", [&](detail::ObjectReader& f) {
      f.get("sigma", p.noise.sigma);
      f.get("outlier_rate", p.noise.outlier_rate);
      f.get("outlier_offset", p.noise.outlier_offset);
      f.get("calibration", p.noise.calibration);
    });
  });
  root.finish();
  c.validate();
  return c;
}

inline RunConfig parse_config_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

/// The effective configuration, with every default filled in. Parsing the
/// result yields the same configuration.
inline json config_to_json(const RunConfig& c) {
  const auto& p = c.pipeline;
  json j;
  j["seed"] = c.seed;
  j["world"] = {{"extent", c.world.extent},
                {"n_buildings", c.world.n_buildings},
                {"building_size_min", c.world.building_size_min},
                {"building_size_max", c.world.building_size_max},
                {"building_height_min", c.world.building_height_min},
                {"building_height_max", c.world.building_height_max},
                {"ground_density", c.world.ground_density},
                {"wall_density", c.world.wall_density},
                {"clutter_fraction", c.world.clutter_fraction},
                {"clutter_pool", c.world.clutter_pool}};
  j["sensor"] = {{"max_range", c.sensor.max_range},
                 {"points_per_scan", c.sensor.points_per_scan},
                 {"scan_noise_sigma", c.sensor.scan_noise_sigma}};
  j["trajectory"] = {{"n_frames", c.trajectory.n_frames},       {"step", c.trajectory.step},
                     {"turn_rate_deg", c.trajectory.turn_rate_deg}, {"heading_noise_deg", c.trajectory.heading_noise_deg},
                     {"start_x", c.trajectory.start_x},         {"start_y", c.trajectory.start_y},
                     {"height", c.trajectory.height}};
  json pj;
  pj["mode"] = std::string(to_string(p.mode));
  pj["voxel_size"] = p.voxel_size;
  pj["k_neighbors"] = p.k_neighbors;
  pj["feature_radii"] = p.feature_radii;
  pj["prior_gamma"] = p.prior_gamma;
  pj["loss_epoch"] = p.loss_epoch;
  pj["predictor"] = std::string(to_string(p.predictor));
  pj["prior_source"] = std::string(to_string(p.prior_source));
  pj["features"] = {{"backbone", std::string(to_string(p.backbone))},
                    {"dim", p.synthetic_features.dim},
                    {"noise", p.synthetic_features.noise},
                    {"mismatch_rate", p.synthetic_features.mismatch_rate},
                    {"seed", p.synthetic_features.seed}};
  pj["loss_weights"] = {{"lambda1", p.loss_weights.lambda1}, {"lambda2", p.loss_weights.lambda2}, {"lambda3", p.loss_weights.lambda3}};
  pj["tau_schedule"] = {{"tau0", p.tau_schedule.tau0}, {"decay_factor", p.tau_schedule.decay_factor}, {"period_epochs", p.tau_schedule.period_epochs}};
  pj["ransac"] = {{"iterations", p.ransac.iterations},
                  {"inlier_threshold", p.ransac.inlier_threshold},
                  {"min_sample", p.ransac.min_sample},
                  {"seed", p.ransac.seed},
                  {"uncertainty_filter", p.ransac.uncertainty_filter ? json(*p.ransac.uncertainty_filter) : json(nullptr)},
                  {"refine_with_inliers", p.ransac.refine_with_inliers},
                  {"uncertainty_weighting", p.ransac.uncertainty_weighting}};
  pj["noise"] = {{"sigma", p.noise.sigma},
                 {"outlier_rate", p.noise.outlier_rate},
                 {"outlier_offset", p.noise.outlier_offset},
                 {"calibration", p.noise.calibration}};
  j["pipeline"] = pj;
  return j;
}

// ---------------------------------------------------------------- tables

inline Eigen::Quaterniond canonical_quaternion(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

inline constexpr std::string_view kTrajectoryHeader =
    "frame,tx,ty,tz,qw,qx,qy,qz,gt_tx,gt_ty,gt_tz,gt_qw,gt_qx,gt_qy,gt_qz,trans_err_m,rot_err_deg";
inline constexpr std::string_view kPointsHeader = "frame,x,y,z,u_meas,u_prior,u_fused";

/// Failed frames keep their ground truth but leave estimate and error cells empty.
inline void write_trajectory_table(std::ostream& os, std::span<const FrameRecord> frames) {
  os << kTrajectoryHeader << '\n';
  auto pose_cells = [&](const Se3Pose& p) {
    const auto q = canonical_quaternion(p.rotation);
    os << format_double(p.translation.x()) << ',' << format_double(p.translation.y()) << ','
       << format_double(p.translation.z()) << ',' << format_double(q.w()) << ',' << format_double(q.x()) << ','
       << format_double(q.y()) << ',' << format_double(q.z());
  };
  for (const auto& f : frames) {
    os << f.t << ',';
    if (f.failed) os << ",,,,,,";
    else pose_cells(f.estimate);
    os << ',';
    pose_cells(f.gt_pose);
    os << ',';
    if (!f.failed) os << format_double(f.error.translation_m) << ',' << format_double(f.error.rotation_deg);
    else os << ',';
    os << '\n';
  }
}

inline void write_points_table(std::ostream& os, std::span<const FrameRecord> records, std::span<const FrameOutput> frames) {
  os << kPointsHeader << '\n';
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& f = frames[k];
    for (std::size_t i = 0; i < f.local.size(); ++i) {
      os << records[k].t << ',' << format_double(f.local[i].x()) << ',' << format_double(f.local[i].y()) << ','
         << format_double(f.local[i].z()) << ',' << format_double(f.measurement.uncertainty()[i]) << ',';
      if (f.prior) os << format_double(f.prior->uncertainty()[i]) << ',' << format_double(f.fused.uncertainty()[i]);
      else os << ',';
      os << '\n';
    }
  }
}

struct TrajectoryRow {
  std::size_t frame = 0;
  bool failed = false;
  Se3Pose estimate;
  Se3Pose gt;
  PoseError error;
};

/// Parses a trajectory table; errors name the offending line.
inline std::vector<TrajectoryRow> read_trajectory_table(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && line == kTrajectoryHeader, Errc::Parse,
          "line 1: unexpected trajectory table header");
  std::vector<TrajectoryRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    const auto cells = split(line, ',');
    require(cells.size() == 17, Errc::Parse, where + ": expected 17 columns, got " + std::to_string(cells.size()));
    TrajectoryRow row;
    std::size_t frame = 0;
    const auto fr = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), frame);
    require(fr.ec == std::errc() && fr.ptr == cells[0].data() + cells[0].size(), Errc::Parse, where + ": bad frame index");
    row.frame = frame;
    auto num = [&](std::size_t c) {
      const auto v = parse_double(cells[c]);
      require(v.has_value(), Errc::Parse, where + ": column " + std::to_string(c + 1) + " is not a number");
      return *v;
    };
    auto pose_at = [&](std::size_t c) {
      Se3Pose p;
      p.translation = Point3(num(c), num(c + 1), num(c + 2));
      Eigen::Quaterniond q(num(c + 3), num(c + 4), num(c + 5), num(c + 6));
      p.rotation = q.normalized().toRotationMatrix();
      return p;
    };
    row.failed = cells[1].empty();
    if (row.failed) {
      for (std::size_t c : {1, 2, 3, 4, 5, 6, 7, 15, 16})
        require(cells[c].empty(), Errc::Parse, where + ": partially empty estimate");
    } else {
      row.estimate = pose_at(1);
      row.error = {num(15), num(16)};
    }
    row.gt = pose_at(8);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace temploc
