#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lotr/landmarks.hpp"

namespace lotr {

/// (1/N) sum_i ||z_i - zhat_i|| / d.
inline double nme(const LandmarkSet& truth, const LandmarkSet& predicted, double d) {
  if (!(d > 0.0)) throw ConfigError("normalization factor must be > 0");
  if (truth.count() != predicted.count())
    throw ShapeError("nme: " + std::to_string(truth.count()) + " ground-truth landmarks vs " +
                     std::to_string(predicted.count()) + " predicted");
  double total = 0.0;
  for (std::size_t i = 0; i < truth.count(); ++i)
    total += std::hypot(truth.x(i) - predicted.x(i), truth.y(i) - predicted.y(i));
  return total / static_cast<double>(truth.count()) / d;
}

enum class NormMode { kBoundingBox, kInterOcular, kImage };

inline NormMode parse_norm_mode(const std::string& s) {
  if (s == "bbox") return NormMode::kBoundingBox;
  if (s == "interocular") return NormMode::kInterOcular;
  if (s == "image") return NormMode::kImage;
  throw ConfigError("unknown normalization '" + s + "' (expected bbox, interocular, image)");
}

inline std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::kBoundingBox: return "bbox";
    case NormMode::kInterOcular: return "interocular";
    case NormMode::kImage: return "image";
  }
  return "?";
}

/// Ground-truth scale: sqrt(w h) of the tight landmark box, the distance between
/// two eye landmarks, or sqrt(W H) of the image.
inline double norm_factor(const LandmarkSet& truth, NormMode mode, std::size_t eye_a = 0, std::size_t eye_b = 1) {
  switch (mode) {
    case NormMode::kBoundingBox: {
      double x0 = truth.x(0), x1 = x0, y0 = truth.y(0), y1 = y0;
      for (std::size_t i = 1; i < truth.count(); ++i) {
        x0 = std::min(x0, truth.x(i));
        x1 = std::max(x1, truth.x(i));
        y0 = std::min(y0, truth.y(i));
        y1 = std::max(y1, truth.y(i));
      }
      const double area = (x1 - x0) * (y1 - y0);
      if (!(area > 0.0)) throw ConfigError("degenerate landmark bounding box (zero area)");
      return std::sqrt(area);
    }
    case NormMode::kInterOcular: {
      if (eye_a == eye_b || eye_a >= truth.count() || eye_b >= truth.count())
        throw ConfigError("inter-ocular normalization needs two distinct valid landmark indices");
      const double d = std::hypot(truth.x(eye_a) - truth.x(eye_b), truth.y(eye_a) - truth.y(eye_b));
      if (!(d > 0.0)) throw ConfigError("coincident eye landmarks");
      return d;
    }
    case NormMode::kImage: {
      const double area = static_cast<double>(truth.width) * static_cast<double>(truth.height);
      if (!(area > 0.0)) throw ConfigError("image size unknown for image normalization");
      return std::sqrt(area);
    }
  }
  throw ConfigError("invalid normalization mode");
}

struct CedPoint {
  double nme;
  double fraction;  // share of images with error <= nme
};

struct MetricsReport {
  std::vector<double> nmes;
  double threshold = 0.0;
  double mean_nme = 0.0;
  double failure_rate = 0.0;
  double auc = 0.0;
  std::vector<CedPoint> ced;
};

/// Failure rate is the share of NMEs strictly above T. AUC is the exact area
/// under the empirical CED on [0, T] divided by T: sum_i max(0, T - e_i) / (M T).
inline MetricsReport evaluate(std::vector<double> nmes, double threshold) {
  if (nmes.empty()) throw ConfigError("cannot evaluate an empty NME list");
  if (!(threshold > 0.0)) throw ConfigError("failure threshold must be > 0");
  for (double e : nmes)
    if (!(e >= 0.0)) throw ConfigError("NME values must be non-negative and finite");
  MetricsReport r;
  r.threshold = threshold;
  const double m = static_cast<double>(nmes.size());
  std::size_t failures = 0;
  double area = 0.0, total = 0.0;
  for (double e : nmes) {
    failures += e > threshold;
    area += std::max(0.0, threshold - e);
    total += e;
  }
  r.failure_rate = static_cast<double>(failures) / m;
  r.auc = area / (m * threshold);
  r.mean_nme = total / m;
  std::vector<double> sorted = nmes;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    r.ced.push_back({sorted[i], static_cast<double>(i + 1) / m});
  }
  r.nmes = std::move(nmes);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"count", r.nmes.size()},     {"threshold", r.threshold}, {"mean_nme", r.mean_nme},
          {"failure_rate", r.failure_rate}, {"auc", r.auc},          {"nme", r.nmes}};
}

inline void write_ced_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "nme_threshold,fraction\n" << std::setprecision(17);
  for (const auto& p : r.ced) f << p.nme << ',' << p.fraction << '\n';
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace lotr
