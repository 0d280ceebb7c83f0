#include "graspadapt/collect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "graspadapt/errors.hpp"

namespace graspadapt {

namespace {

constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

bool within_range(const Pose& displacement, const SampleRange& range) {
  const double slack_pos = 1e-9;
  const double slack_deg = 1e-7;
  if (displacement.translation.cwiseAbs().maxCoeff() >
      range.position_halfwidth + slack_pos) {
    return false;
  }
  const Eigen::Vector3d angles = euler_xyz_degrees(displacement);
  return angles.cwiseAbs().maxCoeff() <= range.orientation_halfwidth + slack_deg;
}

nlohmann::json entry_to_json(const DatasetEntry& e) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : e.observation.points_C) pts.push_back({p.x(), p.y(), p.z()});
  nlohmann::json j{{"label", pose_to_json(e.label)}, {"points_C", pts}};
  if (e.observation.appearance) {
    j["appearance"] = *e.observation.appearance;
  } else {
    j["appearance"] = nullptr;
  }
  return j;
}

DatasetEntry entry_from_json(const nlohmann::json& j) {
  DatasetEntry e;
  e.label = pose_from_json(j.at("label"));
  for (const auto& p : j.at("points_C")) {
    if (p.size() != 3) throw FormatError("dataset entry point needs 3 components");
    e.observation.points_C.emplace_back(p[0].get<double>(), p[1].get<double>(),
                                        p[2].get<double>());
  }
  if (j.contains("appearance") && !j.at("appearance").is_null()) {
    e.observation.appearance = j.at("appearance").get<std::vector<double>>();
  }
  if (e.observation.points_C.empty()) throw FormatError("dataset entry has no points");
  return e;
}

}  // namespace

GraspDataset collect_dataset(const WorldState& world_at_reference,
                             const SampleRange& range, int m, RandomSource& rng) {
  if (m < 1) throw std::invalid_argument("collect_dataset: m must be >= 1");

  // Visibility precheck: at the reference view, with dropout disabled, at
  // least half of the object must be in view.
  {
    WorldState probe = world_at_reference;
    probe.camera.noise_sigma = 0.0;
    probe.camera.dropout_uniform = 0.0;
    probe.camera.dropout_region.reset();
    RandomSource probe_rng(0);
    std::size_t visible = 0;
    try {
      visible = observe(probe, probe_rng).points_C.size();
    } catch (const EmptyObservation&) {
    }
    if (2 * visible < world_at_reference.object.points.size()) {
      throw CollectionFailed("collect_dataset: object not visible at the reference");
    }
  }

  GraspDataset d;
  d.range = range;
  d.reference_eef = world_at_reference.eef_pose;
  d.object_name = world_at_reference.object.name;
  d.entries.reserve(m);

  const long max_attempts = 10L * m;
  long attempt = 0;
  while (static_cast<int>(d.entries.size()) < m) {
    if (attempt >= max_attempts) {
      throw CollectionFailed("collect_dataset: too many empty or unreachable views");
    }
    RandomSource entry_rng = rng.fork(static_cast<std::uint64_t>(attempt));
    ++attempt;
    const Pose displacement = sample_displacement(range, entry_rng);
    try {
      const WorldState moved = move_eef(world_at_reference, displacement);
      DatasetEntry e;
      e.observation = observe(moved, entry_rng);
      e.label = inverse(displacement);
      d.entries.push_back(std::move(e));
    } catch (const EmptyObservation&) {
      continue;
    } catch (const WorkspaceLimit&) {
      continue;
    }
  }
  return d;
}

GraspDataset subset_by_range(const GraspDataset& d, const SampleRange& sub) {
  if (!d.range.contains(sub)) {
    throw std::invalid_argument("subset_by_range: sub exceeds the dataset range");
  }
  GraspDataset out;
  out.range = sub;
  out.reference_eef = d.reference_eef;
  out.object_name = d.object_name;
  for (const auto& e : d.entries) {
    if (within_range(inverse(e.label), sub)) out.entries.push_back(e);
  }
  if (out.entries.empty()) {
    throw EmptySubset("subset_by_range: no entries inside the requested range");
  }
  return out;
}

void save_dataset(const GraspDataset& d, const std::filesystem::path& path) {
  std::vector<std::string> lines;
  lines.reserve(d.entries.size());
  std::uint64_t checksum = kFnvOffset;
  for (const auto& e : d.entries) {
    lines.push_back(entry_to_json(e).dump());
    checksum = fnv1a(checksum, lines.back());
  }

  nlohmann::json header{{"version", kFormatVersion},
                        {"object", d.object_name},
                        {"range", range_to_json(d.range)},
                        {"reference_eef", pose_to_json(d.reference_eef)},
                        {"m", d.entries.size()},
                        {"checksum", hex64(checksum)}};

  std::ofstream f(path);
  if (!f) throw IoError("save_dataset: cannot open " + path.string());
  f << header.dump() << '\n';
  for (const auto& line : lines) f << line << '\n';
  if (!f) throw IoError("save_dataset: write failed for " + path.string());
}

GraspDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_dataset: cannot open " + path.string());

  std::string line;
  if (!std::getline(f, line)) throw FormatError("load_dataset: missing header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_dataset: bad header: ") + e.what());
  }

  GraspDataset d;
  std::size_t expected = 0;
  std::string expected_checksum;
  try {
    if (header.at("version").get<int>() != kFormatVersion) {
      throw FormatError("load_dataset: unsupported version");
    }
    d.object_name = header.at("object").get<std::string>();
    d.range = range_from_json(header.at("range"));
    d.reference_eef = pose_from_json(header.at("reference_eef"));
    expected = header.at("m").get<std::size_t>();
    expected_checksum = header.at("checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_dataset: bad header: ") + e.what());
  }

  std::uint64_t checksum = kFnvOffset;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    checksum = fnv1a(checksum, line);
    try {
      d.entries.push_back(entry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("load_dataset: bad entry: ") + e.what());
    }
  }

  if (d.entries.size() != expected) {
    throw FormatError("load_dataset: entry count differs from header (truncated?)");
  }
  if (hex64(checksum) != expected_checksum) {
    throw FormatError("load_dataset: checksum mismatch");
  }
  for (const auto& e : d.entries) {
    if (!within_range(inverse(e.label), d.range)) {
      throw FormatError("load_dataset: label outside the declared range");
    }
  }
  return d;
}

PoseError median_label_spacing(const GraspDataset& d) {
  const std::size_t n = d.entries.size();
  if (n < 2) throw std::invalid_argument("median_label_spacing: need >= 2 entries");
  std::vector<double> pos(n), ang(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const PoseError e = error_between(d.entries[i].label, d.entries[j].label);
      // Combined metric weighing rotation at 0.1 meters per radian, the same
      // trade the retrieval lookup uses.
      const double pos_m = e.position_mm / 1000.0;
      const double rot_m = 0.1 * e.orientation_deg * (M_PI / 180.0);
      const double score = pos_m * pos_m + rot_m * rot_m;
      if (score < best) {
        best = score;
        best_j = j;
      }
    }
    const PoseError e = error_between(d.entries[i].label, d.entries[best_j].label);
    pos[i] = e.position_mm;
    ang[i] = e.orientation_deg;
  }
  auto median = [](std::vector<double>& v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  return PoseError{median(pos), median(ang)};
}

}  // namespace graspadapt
