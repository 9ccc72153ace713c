#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lotr/container.hpp"
#include "lotr/landmarks.hpp"
#include "lotr/rng.hpp"
#include "lotr/tensor.hpp"

namespace lotr {

/// Synthetic face generator settings.
struct GeneratorConfig {
  std::size_t width = 96;
  std::size_t height = 96;
  std::size_t landmarks = 10;
  bool perturb = true;
  double max_rotation_deg = 20.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_translation = 0.05;  // fraction of the image size

  void validate() const {
    if (landmarks < 5) throw ConfigError("generator needs at least 5 landmarks");
    if (width < 16 || height < 16) throw ConfigError("generator images must be at least 16x16");
    if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 20.0))
      throw ConfigError("rotation range must be within [0, 20] degrees");
    if (!(min_scale >= 0.9 && min_scale <= max_scale && max_scale <= 1.1))
      throw ConfigError("scale range must lie within [0.9, 1.1]");
    if (!(max_translation >= 0.0 && max_translation <= 0.05))
      throw ConfigError("translation range must be within [0, 0.05]");
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"width", c.width},
       {"height", c.height},
       {"landmarks", c.landmarks},
       {"perturb", c.perturb},
       {"max_rotation_deg", c.max_rotation_deg},
       {"min_scale", c.min_scale},
       {"max_scale", c.max_scale},
       {"max_translation", c.max_translation}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c = GeneratorConfig{};
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("width", c.width);
  take("height", c.height);
  take("landmarks", c.landmarks);
  take("perturb", c.perturb);
  take("max_rotation_deg", c.max_rotation_deg);
  take("min_scale", c.min_scale);
  take("max_scale", c.max_scale);
  take("max_translation", c.max_translation);
}

struct Sample {
  Tensor image;  // 3 x H x W in [0, 1]
  LandmarkSet landmarks;
  std::vector<std::string> tags;
  std::uint64_t seed = 0;
};

/// Landmark order: 0 left eye, 1 right eye, 2 nose tip, 3 left mouth corner,
/// 4 right mouth corner, then contour points from left to right along the jaw.
/// "Left" means smaller x in the image.
inline SwapMap face_swap_map(std::size_t n) {
  if (n < 5) throw ConfigError("face layout needs at least 5 landmarks");
  std::vector<std::size_t> p(n);
  p[0] = 1, p[1] = 0, p[2] = 2, p[3] = 4, p[4] = 3;
  const std::size_t k = n - 5;
  for (std::size_t i = 0; i < k; ++i) p[5 + i] = 5 + (k - 1 - i);
  return SwapMap(std::move(p));
}

inline constexpr std::size_t kLeftEye = 0;
inline constexpr std::size_t kRightEye = 1;

/// Pose and colors of one face.
struct FaceParams {
  double rotation = 0.0;  // radians
  double scale = 1.0;
  double tx = 0.0, ty = 0.0;  // pixels
  double background[3] = {0.2, 0.2, 0.2};
  double skin[3] = {0.7, 0.6, 0.5};
  double feature_shade = 0.15;
};

namespace detail {

struct Point {
  double x, y;
};

/// Offsets from the image center before the pose transform.
struct Layout {
  double face_rx, face_ry;
  double eye_radius, nose_radius, mouth_halfwidth, dot_radius;
  std::vector<Point> points;  // landmark offsets in canonical orientation
};

// Snaps an offset to a 2^-20 pixel grid, symmetric about zero, so that
// center + offset and its mirror are exact in binary floating point.
inline double snap(double v) { return std::round(v * 0x1.0p20) * 0x1.0p-20; }

inline Layout canonical_layout(const GeneratorConfig& c) {
  const double w = static_cast<double>(c.width), h = static_cast<double>(c.height);
  Layout l;
  l.face_rx = 0.28125 * w;
  l.face_ry = 0.34375 * h;
  l.eye_radius = 0.03125 * w;
  l.nose_radius = 0.025 * w;
  l.mouth_halfwidth = 0.015625 * h;
  l.dot_radius = 0.015625 * w;
  l.points = {{-0.125 * w, -0.09375 * h},
              {0.125 * w, -0.09375 * h},
              {0.0, 0.03125 * h},
              {-0.109375 * w, 0.1875 * h},
              {0.109375 * w, 0.1875 * h}};
  const std::size_t k = c.landmarks - 5;
  std::vector<Point> contour(k);
  // angles on the lower half of the face ellipse, image y pointing down
  const double lo = std::numbers::pi / 9.0, hi = std::numbers::pi - lo;
  for (std::size_t i = 0; i < (k + 1) / 2; ++i) {
    const double a = k == 1 ? std::numbers::pi / 2.0 : hi - (hi - lo) * static_cast<double>(i) / static_cast<double>(k - 1);
    Point p{snap(l.face_rx * std::cos(a)), snap(l.face_ry * std::sin(a))};
    if (2 * i + 1 == k) p.x = 0.0;
    contour[i] = p;
    contour[k - 1 - i] = {-p.x, p.y};
  }
  l.points.insert(l.points.end(), contour.begin(), contour.end());
  return l;
}

inline double center_x(const GeneratorConfig& c) { return (static_cast<double>(c.width) - 1.0) / 2.0; }
inline double center_y(const GeneratorConfig& c) { return (static_cast<double>(c.height) - 1.0) / 2.0; }

inline double soft_disc(double dist, double radius) {
  // 1 inside, 0 outside, a 1-pixel linear ramp at the rim
  return std::clamp(radius - dist + 0.5, 0.0, 1.0);
}

// Distance to the horizontal segment from (-half, y) to (half, y).
inline double centered_segment_distance(Point p, double half, double y) {
  return std::hypot(std::max(0.0, std::abs(p.x) - half), p.y - y);
}

}  // namespace detail

/// Pose-transformed landmark positions in pixels.
inline LandmarkSet face_landmarks(const FaceParams& f, const GeneratorConfig& c) {
  const auto layout = detail::canonical_layout(c);
  const double cs = std::cos(f.rotation), sn = std::sin(f.rotation);
  const double cx = detail::center_x(c), cy = detail::center_y(c);
  Tensor coords({c.landmarks, 2});
  auto d = coords.mutable_data();
  for (std::size_t i = 0; i < c.landmarks; ++i) {
    const auto p = layout.points[i];
    const double ox = f.scale * (cs * p.x - sn * p.y) + f.tx;
    const double oy = f.scale * (sn * p.x + cs * p.y) + f.ty;
    d[2 * i] = cx + detail::snap(ox);
    d[2 * i + 1] = cy + detail::snap(oy);
  }
  return {coords, c.width, c.height};
}

/// Rasterizes the face. Every pixel is mapped back to the canonical frame and
/// shaded from the layout; features combine through max so the result does not
/// depend on evaluation order.
inline Tensor render_face(const FaceParams& f, const GeneratorConfig& c) {
  const auto layout = detail::canonical_layout(c);
  const double cs = std::cos(f.rotation), sn = std::sin(f.rotation);
  const double cx = detail::center_x(c), cy = detail::center_y(c);
  const std::size_t w = c.width, h = c.height;
  const auto& pts = layout.points;
  Tensor image({3, h, w});
  auto img = image.mutable_data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double ox = static_cast<double>(x) - cx - f.tx, oy = static_cast<double>(y) - cy - f.ty;
      const detail::Point u{(cs * ox + sn * oy) / f.scale, (-sn * ox + cs * oy) / f.scale};
      const double r = std::hypot(u.x / layout.face_rx, u.y / layout.face_ry);
      const double face = std::clamp((1.0 - r) * layout.face_rx + 0.5, 0.0, 1.0);
      double dark = 0.0;
      for (std::size_t i : {std::size_t{0}, std::size_t{1}})
        dark = std::max(dark, detail::soft_disc(std::hypot(u.x - pts[i].x, u.y - pts[i].y), layout.eye_radius));
      dark = std::max(dark, detail::soft_disc(detail::centered_segment_distance(u, pts[4].x, pts[4].y),
                                               layout.mouth_halfwidth));
      double bright = detail::soft_disc(std::hypot(u.x - pts[2].x, u.y - pts[2].y), layout.nose_radius);
      for (std::size_t i = 5; i < pts.size(); ++i)
        bright = std::max(bright, detail::soft_disc(std::hypot(u.x - pts[i].x, u.y - pts[i].y), layout.dot_radius));
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = f.background[ch] * (1.0 - face) + f.skin[ch] * face;
        v = v * (1.0 - dark) + f.feature_shade * dark;
        v = v * (1.0 - bright) + 1.0 * bright;
        img[(ch * h + y) * w + x] = v;
      }
    }
  }
  return image;
}

/// The face mirrored about the vertical image axis.
inline FaceParams mirrored(const FaceParams& f) {
  FaceParams m = f;
  m.rotation = -f.rotation;
  m.tx = -f.tx;
  return m;
}

inline bool landmarks_in_bounds(const LandmarkSet& s, double margin = 2.0) {
  for (std::size_t i = 0; i < s.count(); ++i) {
    if (s.x(i) < margin || s.x(i) > static_cast<double>(s.width) - 1.0 - margin) return false;
    if (s.y(i) < margin || s.y(i) > static_cast<double>(s.height) - 1.0 - margin) return false;
  }
  return true;
}

inline constexpr int kMaxLayoutTries = 10;

/// Draws a pose and colors from `seed`; poses that push a landmark within
/// 2 px of the border are redrawn, up to kMaxLayoutTries times.
inline FaceParams sample_face(std::uint64_t seed, const GeneratorConfig& c) {
  c.validate();
  Rng rng(seed);
  for (int attempt = 0; attempt < kMaxLayoutTries; ++attempt) {
    FaceParams f;
    for (auto& v : f.background) v = rng.uniform(0.05, 0.35);
    for (auto& v : f.skin) v = rng.uniform(0.5, 0.85);
    f.feature_shade = rng.uniform(0.0, 0.2);
    if (c.perturb) {
      const double max_rot = c.max_rotation_deg * std::numbers::pi / 180.0;
      f.rotation = rng.uniform(-max_rot, max_rot);
      f.scale = rng.uniform(c.min_scale, c.max_scale);
      f.tx = rng.uniform(-c.max_translation, c.max_translation) * static_cast<double>(c.width);
      f.ty = rng.uniform(-c.max_translation, c.max_translation) * static_cast<double>(c.height);
    }
    if (landmarks_in_bounds(face_landmarks(f, c))) return f;
  }
  throw ConfigError("face layout stays out of bounds after " + std::to_string(kMaxLayoutTries) + " tries (seed " +
                    std::to_string(seed) + ")");
}

inline std::vector<std::string> pose_tags(const FaceParams& f) {
  const double deg = std::abs(f.rotation) * 180.0 / std::numbers::pi;
  return {"synthetic", deg > 10.0 ? "pose:rotated" : "pose:frontal"};
}

inline Sample generate_sample(std::uint64_t seed, const GeneratorConfig& c) {
  const FaceParams f = sample_face(seed, c);
  return {render_face(f, c), face_landmarks(f, c), pose_tags(f), seed};
}

/// Mirrored image, x <- (W - 1) - x, indices permuted by `swap`.
inline Sample horizontal_flip(const Sample& s, const SwapMap& swap) {
  Sample out = s;
  out.image = flip_image_horizontal(s.image);
  out.landmarks = flip_landmarks(s.landmarks, swap);
  return out;
}

/// Worker count for data generation: hardware threads, capped by LOTR_THREADS.
inline std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LOTR_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return n;
}

/// Samples for seeds derive_seed(seed, i), i in [0, count).
inline std::vector<Sample> generate_dataset(std::size_t count, std::uint64_t seed, const GeneratorConfig& c,
                                            std::size_t threads = worker_threads()) {
  c.validate();
  std::vector<Sample> out(count);
  std::vector<std::exception_ptr> errors(std::max<std::size_t>(threads, 1));
  auto work = [&](std::size_t worker, std::size_t stride) {
    try {
      for (std::size_t i = worker; i < count; i += stride) out[i] = generate_sample(derive_seed(seed, i), c);
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (threads <= 1 || count < 2) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct Dataset {
  GeneratorConfig config;
  std::vector<Sample> samples;
};

inline std::string image_entry_name(std::size_t i) {
  std::ostringstream s;
  s << "image/" << std::setw(6) << std::setfill('0') << i;
  return s.str();
}

/// Writes images.lotr, samples.jsonl and config.json under `dir`.
inline void write_dataset(const std::string& dir, const Dataset& d) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  TensorContainer images;
  const std::filesystem::path root(dir);
  std::ofstream side(root / "samples.jsonl", std::ios::trunc);
  if (!side) throw IoError("cannot write '" + (root / "samples.jsonl").string() + "'");
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    images.add(image_entry_name(i), s.image);
    nlohmann::json lm = nlohmann::json::array();
    for (std::size_t k = 0; k < s.landmarks.count(); ++k) lm.push_back({s.landmarks.x(k), s.landmarks.y(k)});
    side << nlohmann::json{{"index", i}, {"landmarks", lm}, {"tags", s.tags}, {"seed", s.seed}}.dump() << '\n';
  }
  if (!side) throw IoError("write failed for samples.jsonl");
  images.save((root / "images.lotr").string());
  std::ofstream cfg(root / "config.json", std::ios::trunc);
  cfg << nlohmann::json(d.config).dump(2) << '\n';
  if (!cfg) throw IoError("write failed for config.json");
}

inline Dataset read_dataset(const std::string& dir) {
  const std::filesystem::path root(dir);
  if (!std::filesystem::is_directory(root)) throw IoError("dataset directory '" + dir + "' not found");
  Dataset d;
  {
    std::ifstream cfg(root / "config.json");
    if (!cfg) throw IoError("dataset '" + dir + "' has no config.json");
    try {
      d.config = nlohmann::json::parse(cfg).get<GeneratorConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("corrupt config.json: " + std::string(e.what()));
    }
  }
  const TensorContainer images = TensorContainer::load((root / "images.lotr").string());
  std::ifstream side(root / "samples.jsonl");
  if (!side) throw IoError("dataset '" + dir + "' has no samples.jsonl");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(side, line)) {
    ++lineno;
    if (line.empty()) continue;
    Sample s;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto index = j.at("index").get<std::size_t>();
      if (index != d.samples.size())
        throw IoError("samples.jsonl line " + std::to_string(lineno) + ": index " + std::to_string(index) +
                      " out of order");
      const auto& lm = j.at("landmarks");
      Tensor coords({lm.size(), 2});
      auto c = coords.mutable_data();
      for (std::size_t k = 0; k < lm.size(); ++k) {
        c[2 * k] = lm.at(k).at(0).get<double>();
        c[2 * k + 1] = lm.at(k).at(1).get<double>();
      }
      s.landmarks = {coords, d.config.width, d.config.height};
      s.tags = j.at("tags").get<std::vector<std::string>>();
      s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("corrupt samples.jsonl line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ShapeError& e) {
      throw IoError("corrupt samples.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string name = image_entry_name(d.samples.size());
    if (!images.contains(name))
      throw IoError("count mismatch: samples.jsonl has more records than images.lotr (" +
                    std::to_string(images.size()) + " images)");
    s.image = images.get(name);
    require_shape(s.image, {3, d.config.height, d.config.width}, "dataset image");
    d.samples.push_back(std::move(s));
  }
  if (d.samples.size() != images.size())
    throw IoError("count mismatch: images.lotr has " + std::to_string(images.size()) + " images, samples.jsonl has " +
                  std::to_string(d.samples.size()) + " records");
  return d;
}

}  // namespace lotr
