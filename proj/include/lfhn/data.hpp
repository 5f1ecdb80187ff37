#ifndef LFHN_DATA_HPP
#define LFHN_DATA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "image_io.hpp"
#include "network.hpp"

namespace lfhn {

// ---------------------------------------------------------------------------
// Reflectance templates
// ---------------------------------------------------------------------------

/// Geometric primitive painted into a reflectance map. Coordinates are
/// normalized: u (horizontal) and v (vertical, downwards) span [-1, 1].
struct Primitive {
  enum class Kind { ellipse, bar };
  Kind kind = Kind::ellipse;
  double cx = 0, cy = 0, rx = 0, ry = 0, angle = 0;
  std::array<double, 3> albedo{};

  bool contains(double u, double v) const {
    const double du = u - cx, dv = v - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double x = c * du + s * dv, y = -s * du + c * dv;
    if (kind == Kind::ellipse) return (x / rx) * (x / rx) + (y / ry) * (y / ry) <= 1.0;
    return std::abs(x) <= rx && std::abs(y) <= ry;
  }

  friend bool operator==(const Primitive&, const Primitive&) = default;
};

/// Per-identity reflectance map R(u, v): a face ellipse with hair, eyes,
/// brows, nose, mouth and a few identity marks, all drawn from the seed.
/// Later primitives paint over earlier ones.
struct IdentityTemplate {
  std::size_t identity = 0;
  std::size_t height = 0, width = 0, channels = 3;
  std::array<double, 3> background{0.1, 0.1, 0.1};
  std::vector<Primitive> primitives;

  /// Albedo at normalized (u, v); single-channel templates use the RGB mean.
  double reflectance(double u, double v, std::size_t channel) const {
    double value = channel_value(background, channel);
    for (const Primitive& p : primitives)
      if (p.contains(u, v)) value = channel_value(p.albedo, channel);
    return value;
  }

  double background_value(std::size_t channel) const { return channel_value(background, channel); }

  double channel_value(const std::array<double, 3>& rgb, std::size_t channel) const {
    return channels == 1 ? (rgb[0] + rgb[1] + rgb[2]) / 3.0 : rgb[channel];
  }

  Tensor rasterize() const;
};

namespace detail {

inline double pixel_coord(std::size_t i, std::size_t extent) {
  return (static_cast<double>(i) + 0.5) / static_cast<double>(extent) * 2.0 - 1.0;
}

inline std::mt19937_64 seeded_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

}  // namespace detail

inline Tensor IdentityTemplate::rasterize() const {
  Tensor r({height, width, channels});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        r(y, x, c) = reflectance(detail::pixel_coord(x, width), detail::pixel_coord(y, height), c);
  return r;
}

inline IdentityTemplate make_template(std::uint64_t seed, std::size_t identity, std::size_t height, std::size_t width,
                                      std::size_t channels = 3) {
  if (channels != 1 && channels != 3) detail::raise<config_error>("template: channels must be 1 or 3");
  auto rng = detail::seeded_stream(seed, identity, 0x7e41a7e);
  auto U = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  using Kind = Primitive::Kind;

  IdentityTemplate t;
  t.identity = identity;
  t.height = height;
  t.width = width;
  t.channels = channels;

  const double hair_base = U(0.05, 0.5);
  const std::array<double, 3> hair{hair_base, hair_base * U(0.6, 1.0), hair_base * U(0.4, 0.9)};
  const double skin_base = U(0.5, 0.95);
  const std::array<double, 3> skin{skin_base, skin_base * U(0.7, 0.95), skin_base * U(0.5, 0.85)};

  t.primitives.push_back({Kind::ellipse, U(-0.05, 0.05), U(-0.3, -0.15), U(0.6, 0.78), U(0.55, 0.75), 0, hair});
  t.primitives.push_back({Kind::ellipse, U(-0.04, 0.04), U(0.02, 0.12), U(0.48, 0.62), U(0.66, 0.8), 0, skin});

  const double eye_x = U(0.17, 0.3), eye_y = U(-0.2, -0.05);
  const double eye_rx = U(0.06, 0.11), eye_ry = U(0.03, 0.06);
  const std::array<double, 3> iris{U(0.02, 0.4), U(0.02, 0.4), U(0.02, 0.4)};
  const double brow_y = eye_y - U(0.1, 0.16), brow_tilt = U(-0.25, 0.25), brow_w = U(0.07, 0.13);
  for (double side : {-1.0, 1.0}) {
    t.primitives.push_back({Kind::ellipse, side * eye_x, eye_y, eye_rx, eye_ry, 0, iris});
    t.primitives.push_back({Kind::bar, side * eye_x, brow_y, brow_w, 0.02, side * brow_tilt, hair});
  }
  const double nose_shade = U(0.6, 0.85);
  t.primitives.push_back({Kind::bar, 0, U(0.05, 0.15), U(0.03, 0.06), U(0.08, 0.16), 0,
                          {skin[0] * nose_shade, skin[1] * nose_shade, skin[2] * nose_shade}});
  t.primitives.push_back({Kind::bar, 0, U(0.32, 0.45), U(0.12, 0.22), U(0.025, 0.05), U(-0.1, 0.1),
                          {U(0.4, 0.8), U(0.1, 0.35), U(0.1, 0.35)}});
  // Identity marks, two per half-face so a profile view keeps some of them.
  for (int i = 0; i < 4; ++i) {
    const double side = i < 2 ? -1.0 : 1.0;
    t.primitives.push_back({Kind::ellipse, side * U(0.12, 0.42), U(-0.35, 0.5), U(0.04, 0.09), U(0.04, 0.09),
                            U(0.0, std::numbers::pi), {U(0.0, 1.0), U(0.0, 1.0), U(0.0, 1.0)}});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Pose and lighting
// ---------------------------------------------------------------------------

/// Yaw in degrees, [-90, 90]. Realized as horizontal compression plus a
/// lateral shift; past 45 degrees the far half-face is occluded.
struct PoseSpec {
  double yaw_deg = 0.0;
};

/// Linear ramp lighting L(u, v) = ambient + (1 - ambient) * ramp, where the
/// ramp runs from 0 to 1 along the azimuth direction. L is in [ambient, 1].
struct LightSpec {
  double azimuth_deg = 0.0;
  double ambient = 1.0;
};

inline std::vector<double> default_yaw_roster() {
  std::vector<double> yaws;
  for (int i = 0; i <= 12; ++i) yaws.push_back(-90.0 + 15.0 * i);
  return yaws;
}

inline std::vector<LightSpec> default_light_roster() {
  std::vector<LightSpec> lights;
  for (int i = 0; i < 8; ++i) lights.push_back({45.0 * i, i % 2 == 0 ? 0.2 : 0.4});
  return lights;
}

inline void validate(const PoseSpec& pose) {
  if (!(pose.yaw_deg >= -90.0 && pose.yaw_deg <= 90.0))
    detail::raise<config_error>("pose: yaw ", pose.yaw_deg, " outside [-90, 90]");
}

inline void validate(const LightSpec& light) {
  if (!(light.ambient >= 0.1 && light.ambient <= 1.0))
    detail::raise<config_error>("light: ambient ", light.ambient, " outside [0.1, 1]");
}

inline Tensor light_field(const LightSpec& light, std::size_t height, std::size_t width) {
  validate(light);
  const double a = light.azimuth_deg * std::numbers::pi / 180.0;
  const double du = std::cos(a), dv = std::sin(a);
  Tensor field({height, width, 1});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double along = du * detail::pixel_coord(x, width) + dv * detail::pixel_coord(y, height);
      const double ramp = 0.5 + 0.5 * along / std::numbers::sqrt2;
      field(y, x, 0) = light.ambient + (1.0 - light.ambient) * ramp;
    }
  return field;
}

/// Reflectance map seen from `pose`.
inline Tensor project_reflectance(const IdentityTemplate& t, const PoseSpec& pose) {
  validate(pose);
  const double theta = pose.yaw_deg * std::numbers::pi / 180.0;
  const double squeeze = 1.0 - 0.55 * (1.0 - std::cos(theta));
  const double shift = 0.3 * std::sin(theta);
  const bool occluded = std::abs(pose.yaw_deg) > 45.0;
  const double near_side = pose.yaw_deg > 0 ? 1.0 : -1.0;
  Tensor r({t.height, t.width, t.channels});
  for (std::size_t y = 0; y < t.height; ++y) {
    const double v = detail::pixel_coord(y, t.height);
    for (std::size_t x = 0; x < t.width; ++x) {
      const double u_src = (detail::pixel_coord(x, t.width) - shift) / squeeze;
      const bool hidden = occluded && near_side * u_src < 0.0;
      for (std::size_t c = 0; c < t.channels; ++c)
        r(y, x, c) = hidden ? t.background_value(c) : t.reflectance(u_src, v, c);
    }
  }
  return r;
}

/// I = R * L with L broadcast over channels; no clamping.
inline Tensor lambertian_product(const Tensor& reflectance, const Tensor& light) {
  if (reflectance.rank() != 3 || light.rank() != 3 || light.dim(2) != 1 || reflectance.dim(0) != light.dim(0) ||
      reflectance.dim(1) != light.dim(1))
    detail::raise<shape_error>("lambertian_product: reflectance ", to_string(reflectance.shape()), " vs light ",
                               to_string(light.shape()));
  Tensor out = reflectance;
  const std::size_t c = reflectance.dim(2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= light[i / c];
  return out;
}

/// I(x, y) = clamp(R_pose(x, y) * L(x, y), 0, 1).
inline Tensor render(const IdentityTemplate& t, const PoseSpec& pose, const LightSpec& light) {
  Tensor image = lambertian_product(project_reflectance(t, pose), light_field(light, t.height, t.width));
  for (double& v : image.data()) v = std::clamp(v, 0.0, 1.0);
  return image;
}

// ---------------------------------------------------------------------------
// Corpus generation and loading
// ---------------------------------------------------------------------------

struct CorpusSpec {
  std::size_t identities = 10;
  std::vector<double> yaws = default_yaw_roster();
  std::vector<LightSpec> lights = default_light_roster();
  std::size_t height = 76;
  std::size_t width = 76;
  std::size_t channels = 3;
  std::uint64_t seed = 0;
};

struct ManifestRow {
  std::string filename;
  std::size_t identity = 0;
  std::size_t pose_id = 0;
  std::size_t light_id = 0;
  double yaw_deg = 0.0;

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

inline constexpr const char* manifest_name = "manifest.csv";
inline constexpr const char* manifest_header = "filename,identity,pose_id,light_id,yaw_deg";

inline std::string sample_filename(std::size_t identity, std::size_t pose, std::size_t light, std::size_t channels) {
  return "id" + std::to_string(identity) + "_p" + std::to_string(pose) + "_l" + std::to_string(light) +
         (channels == 1 ? ".pgm" : ".ppm");
}

/// Writes one image per (identity, pose, light) plus manifest.csv. Output
/// bytes depend only on the spec.
inline std::vector<ManifestRow> generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
  for (double yaw : spec.yaws) validate(PoseSpec{yaw});
  for (const LightSpec& l : spec.lights) validate(l);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    detail::raise<data_error>("generate_corpus: cannot create directory '", out_dir.string(), "'");

  std::vector<Tensor> fields;
  for (const LightSpec& l : spec.lights) fields.push_back(light_field(l, spec.height, spec.width));

  std::vector<ManifestRow> rows;
  for (std::size_t id = 0; id < spec.identities; ++id) {
    const IdentityTemplate t = make_template(spec.seed, id, spec.height, spec.width, spec.channels);
    for (std::size_t p = 0; p < spec.yaws.size(); ++p) {
      const Tensor reflectance = project_reflectance(t, PoseSpec{spec.yaws[p]});
      for (std::size_t l = 0; l < spec.lights.size(); ++l) {
        Tensor image = lambertian_product(reflectance, fields[l]);
        for (double& v : image.data()) v = std::clamp(v, 0.0, 1.0);
        ManifestRow row{sample_filename(id, p, l, spec.channels), id, p, l, spec.yaws[p]};
        write_pnm(out_dir / row.filename, image);
        rows.push_back(std::move(row));
      }
    }
  }

  std::ofstream manifest(out_dir / manifest_name, std::ios::binary | std::ios::trunc);
  if (!manifest) detail::raise<data_error>("generate_corpus: cannot write manifest in '", out_dir.string(), "'");
  manifest << manifest_header << '\n';
  for (const ManifestRow& r : rows)
    manifest << r.filename << ',' << r.identity << ',' << r.pose_id << ',' << r.light_id << ','
             << detail::format_double(r.yaw_deg) << '\n';
  return rows;
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) detail::raise<data_error>("manifest: cannot read '", path.string(), "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != manifest_header)
    detail::raise<format_error>("manifest: missing header in '", path.string(), "'");
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5) detail::raise<format_error>("manifest: malformed row '", line, "'");
    rows.push_back({fields[0], detail::parse_size("identity", fields[1]), detail::parse_size("pose_id", fields[2]),
                    detail::parse_size("light_id", fields[3]), detail::parse_double("yaw_deg", fields[4])});
  }
  return rows;
}

/// Yaw per pose id taken from a corpus manifest.
inline std::map<std::size_t, double> yaw_by_pose(const std::vector<ManifestRow>& rows) {
  std::map<std::size_t, double> yaws;
  for (const ManifestRow& r : rows) yaws[r.pose_id] = r.yaw_deg;
  return yaws;
}

struct LabeledSample {
  Tensor image;  // H x W x C, values in [0,1]
  std::size_t identity = 0;
  std::size_t pose_id = 0;
  std::size_t light_id = 0;
  std::string filename;
};

struct ParsedName {
  std::size_t identity, pose_id, light_id;
};

inline std::optional<ParsedName> parse_sample_filename(const std::string& name) {
  static const std::regex pattern(R"(id(\d+)_p(\d+)_l(\d+)\.(pgm|ppm))");
  std::smatch m;
  if (!std::regex_match(name, m, pattern)) return std::nullopt;
  try {
    return ParsedName{std::stoul(m[1]), std::stoul(m[2]), std::stoul(m[3])};
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

/// Loads every .pgm/.ppm file in `dir`, ordered lexicographically by file
/// name. Labels come from the `id{I}_p{P}_l{L}` naming convention.
inline std::vector<LabeledSample> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) detail::raise<data_error>("load_corpus: '", dir.string(), "' is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());

  std::vector<std::string> malformed;
  for (const std::string& n : names)
    if (!parse_sample_filename(n)) malformed.push_back(n);
  if (!malformed.empty()) {
    std::string list;
    for (const std::string& n : malformed) list += (list.empty() ? "" : ", ") + n;
    detail::raise<data_error>("load_corpus: file names do not follow id{I}_p{P}_l{L}.(pgm|ppm): ", list);
  }

  std::vector<LabeledSample> samples;
  samples.reserve(names.size());
  for (const std::string& n : names) {
    const ParsedName parsed = *parse_sample_filename(n);
    samples.push_back({read_pnm(dir / n), parsed.identity, parsed.pose_id, parsed.light_id, n});
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Train/test protocols
// ---------------------------------------------------------------------------

struct SplitProtocol {
  enum class Kind { all, random, holdout_light, holdout_pose };
  Kind kind = Kind::all;
  double fraction = 0.9;          // random: share of samples in train
  std::uint64_t seed = 0;         // random
  std::vector<std::size_t> ids;   // holdout: light or pose ids placed in test
};

inline SplitProtocol::Kind parse_split_kind(std::string_view name) {
  if (name == "all" || name == "none") return SplitProtocol::Kind::all;
  if (name == "random") return SplitProtocol::Kind::random;
  if (name == "holdout-light") return SplitProtocol::Kind::holdout_light;
  if (name == "holdout-pose") return SplitProtocol::Kind::holdout_pose;
  detail::raise<config_error>("split: unknown protocol '", name, "' (expected all, random, holdout-light, holdout-pose)");
}

struct SplitResult {
  std::vector<std::size_t> train;  // indices into the sample list, ascending
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;
};

template <typename Sample>
SplitResult split(const std::vector<Sample>& samples, const SplitProtocol& protocol) {
  if (samples.empty()) detail::raise<data_error>("split: empty sample list");
  SplitResult r;
  switch (protocol.kind) {
    case SplitProtocol::Kind::all:
      for (std::size_t i = 0; i < samples.size(); ++i) r.train.push_back(i);
      break;
    case SplitProtocol::Kind::random: {
      if (!(protocol.fraction >= 0.0 && protocol.fraction <= 1.0))
        detail::raise<config_error>("split: fraction ", protocol.fraction, " outside [0, 1]");
      std::vector<std::size_t> order(samples.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::mt19937_64 rng(protocol.seed);
      std::shuffle(order.begin(), order.end(), rng);
      const auto n_train = static_cast<std::size_t>(std::llround(protocol.fraction * static_cast<double>(samples.size())));
      r.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
      r.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
      std::sort(r.train.begin(), r.train.end());
      std::sort(r.test.begin(), r.test.end());
      break;
    }
    case SplitProtocol::Kind::holdout_light:
    case SplitProtocol::Kind::holdout_pose: {
      const bool by_light = protocol.kind == SplitProtocol::Kind::holdout_light;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::size_t id = by_light ? samples[i].light_id : samples[i].pose_id;
        const bool held = std::find(protocol.ids.begin(), protocol.ids.end(), id) != protocol.ids.end();
        (held ? r.test : r.train).push_back(i);
      }
      break;
    }
  }
  if (r.test.empty() && protocol.kind != SplitProtocol::Kind::all)
    r.warnings.push_back("split: test set is empty");
  if (r.train.empty()) r.warnings.push_back("split: train set is empty");
  return r;
}

}  // namespace lfhn

#endif  // LFHN_DATA_HPP
