#pragma once

// Disparity-space partitioning and plane placement strategies.
//
// Planes are indexed front to back: index 0 is the nearest plane and carries
// the largest disparity. Every strategy returns strictly decreasing
// disparities inside (d_far, d_near].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "planesynth/errors.hpp"

namespace planesynth {

inline double logistic(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

struct DisparityBins {
  double near{1.0};  // d_n, largest disparity
  double far{0.1};   // d_f, smallest disparity, > 0
  std::size_t count{1};

  double width() const { return (near - far) / double(count); }
  // Disparity interval of bin i (0-based): (near_edge - width, near_edge].
  double near_edge(std::size_t i) const { return near - double(i) * width(); }
  double far_edge(std::size_t i) const { return near - double(i + 1) * width(); }
  double center(std::size_t i) const { return near - (double(i) + 0.5) * width(); }

  // Bin index a disparity falls into, or count when outside [far, near].
  std::size_t bin_of(double d) const {
    if (!(d <= near) || !(d >= far)) return count;
    const auto i = std::size_t(std::floor((near - d) / width()));
    return std::min(i, count - 1);
  }

  // Placement formulas only need d_n > d_f >= 0; d_f = 0 is handy for
  // illustration but has no finite depth, so scenes and fits use validate().
  void validate_partition() const {
    if (count < 1) throw InvalidRange("disparity bins need at least one bin");
    if (!(far >= 0.0) || !(near > far))
      throw InvalidRange("disparity bins need d_near > d_far >= 0 (got d_near=" + std::to_string(near) +
                         ", d_far=" + std::to_string(far) + ")");
  }

  void validate() const {
    if (count < 1) throw InvalidRange("disparity bins need at least one bin");
    if (!(far > 0.0) || !(near > far))
      throw InvalidRange("disparity bins need d_near > d_far > 0 (got d_near=" + std::to_string(near) +
                         ", d_far=" + std::to_string(far) + ")");
  }
};

// d_n = 1 / z_min, d_f = 1 / z_max.
inline std::pair<double, double> near_far_from_depth_range(double z_min, double z_max) {
  if (!(z_min > 0.0) || !(z_max > z_min))
    throw InvalidRange("depth range needs 0 < z_min < z_max (got " + std::to_string(z_min) + ", " +
                       std::to_string(z_max) + ")");
  return {1.0 / z_min, 1.0 / z_max};
}

inline DisparityBins bins_from_depth_range(double z_min, double z_max, std::size_t count) {
  const auto [dn, df] = near_far_from_depth_range(z_min, z_max);
  DisparityBins bins{dn, df, count};
  bins.validate();
  return bins;
}

// Learnable in-bin offsets v_i = logistic(a_i), always inside (0, 1).
struct OffsetVector {
  std::vector<double> logits;

  static OffsetVector centered(std::size_t n) { return {std::vector<double>(n, 0.0)}; }

  std::size_t size() const { return logits.size(); }
  std::vector<double> values() const {
    std::vector<double> v(logits.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = logistic(logits[i]);
    return v;
  }
};

// d_i = d_n + (v_i + i - 1)(d_f - d_n)/N with 1-based i; here i is 0-based.
inline std::vector<double> locations_from_offsets(const DisparityBins& bins, std::span<const double> v) {
  bins.validate_partition();
  if (v.size() != bins.count) throw DimensionMismatch("offset count does not match bin count");
  const double step = (bins.far - bins.near) / double(bins.count);
  std::vector<double> d(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) d[i] = bins.near + (v[i] + double(i)) * step;
  return d;
}

inline std::vector<double> locations_from_offsets(const DisparityBins& bins, const OffsetVector& offsets) {
  const auto v = offsets.values();
  return locations_from_offsets(bins, v);
}

// d d_i / d v_i; the Jacobian is diagonal.
inline double offset_location_slope(const DisparityBins& bins) {
  return (bins.far - bins.near) / double(bins.count);
}

// ---------------------------------------------------------------------------
// Globally learned placement.
//
// N+1 logits split [d_f, d_n] into a leading gap, N-1 gaps between planes and
// a trailing gap: q = softmax(g + log prior) with prior (1/2, 1, ..., 1, 1/2),
// and plane i sits at d_n - (q_0 + ... + q_i)(d_n - d_f). Equal logits give
// bin centers. Skewed logits can push every plane into one bin.

inline std::vector<double> global_gap_fractions(std::span<const double> logits) {
  const std::size_t m = logits.size();
  if (m < 2) throw DimensionMismatch("global placement needs N+1 >= 2 logits");
  std::vector<double> s(m);
  double mx = -INFINITY;
  for (std::size_t j = 0; j < m; ++j) {
    const double prior = (j == 0 || j + 1 == m) ? std::log(0.5) : 0.0;
    s[j] = logits[j] + prior;
    mx = std::max(mx, s[j]);
  }
  double z = 0.0;
  for (auto& x : s) {
    x = std::exp(x - mx);
    z += x;
  }
  for (auto& x : s) x /= z;
  return s;
}

inline std::vector<double> global_locations(const DisparityBins& bins, std::span<const double> logits) {
  bins.validate_partition();
  if (logits.size() != bins.count + 1)
    throw DimensionMismatch("global placement needs N+1 logits for N planes");
  const auto q = global_gap_fractions(logits);
  const double range = bins.near - bins.far;
  std::vector<double> d(bins.count);
  double cum = 0.0;
  for (std::size_t i = 0; i < bins.count; ++i) {
    cum += q[i];
    d[i] = bins.near - cum * range;
  }
  return d;
}

// Vector-Jacobian product of global_locations w.r.t. the logits.
inline std::vector<double> global_locations_backward(const DisparityBins& bins, std::span<const double> logits,
                                                     std::span<const double> grad_d) {
  const auto q = global_gap_fractions(logits);
  const double range = bins.near - bins.far;
  const std::size_t m = q.size();
  // dL/dq_j = -range * sum_{i >= j, i < N} grad_d[i]
  std::vector<double> gq(m, 0.0);
  double tail = 0.0;
  for (std::size_t j = bins.count; j-- > 0;) {
    tail += grad_d[j];
    gq[j] = -range * tail;
  }
  double dot = 0.0;
  for (std::size_t j = 0; j < m; ++j) dot += gq[j] * q[j];
  std::vector<double> g(m);
  for (std::size_t j = 0; j < m; ++j) g[j] = q[j] * (gq[j] - dot);
  return g;
}

// ---------------------------------------------------------------------------
// Strategies

struct RandomInBin {
  std::mt19937_64 rng;
  explicit RandomInBin(std::uint64_t seed = 0) : rng(seed) {}
};
struct EquallyDivided {};
struct GloballyLearned {
  std::vector<double> logits;  // N+1 entries
};
struct LocallyLearned {
  OffsetVector offsets;
};

using PlacementStrategy = std::variant<RandomInBin, EquallyDivided, GloballyLearned, LocallyLearned>;

enum class PlacementKind { Random, Equal, Global, Local };

inline std::string_view to_string(PlacementKind k) {
  switch (k) {
    case PlacementKind::Random: return "random";
    case PlacementKind::Equal: return "equal";
    case PlacementKind::Global: return "global";
    case PlacementKind::Local: return "local";
  }
  return "?";
}

inline PlacementKind parse_placement(std::string_view s) {
  if (s == "random") return PlacementKind::Random;
  if (s == "equal") return PlacementKind::Equal;
  if (s == "global") return PlacementKind::Global;
  if (s == "local") return PlacementKind::Local;
  throw InvalidArgument("unknown placement '" + std::string(s) + "' (expected random|equal|global|local)");
}

inline PlacementStrategy make_strategy(PlacementKind kind, std::size_t planes, std::uint64_t seed) {
  switch (kind) {
    case PlacementKind::Random: return RandomInBin(seed);
    case PlacementKind::Equal: return EquallyDivided{};
    case PlacementKind::Global: return GloballyLearned{std::vector<double>(planes + 1, 0.0)};
    case PlacementKind::Local: return LocallyLearned{OffsetVector::centered(planes)};
  }
  throw InvalidArgument("unknown placement kind");
}

// RandomInBin advances the generator it carries; the other strategies are pure.
inline std::vector<double> place(PlacementStrategy& strategy, const DisparityBins& bins) {
  bins.validate_partition();
  return std::visit(
      [&](auto& s) -> std::vector<double> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, RandomInBin>) {
          std::uniform_real_distribution<double> u(0.0, 1.0);
          std::vector<double> v(bins.count);
          for (auto& x : v) {
            do {
              x = u(s.rng);
            } while (x <= 0.0);  // open interval (0, 1)
          }
          return locations_from_offsets(bins, v);
        } else if constexpr (std::is_same_v<S, EquallyDivided>) {
          return locations_from_offsets(bins, std::vector<double>(bins.count, 0.5));
        } else if constexpr (std::is_same_v<S, GloballyLearned>) {
          return global_locations(bins, s.logits);
        } else {
          return locations_from_offsets(bins, s.offsets);
        }
      },
      strategy);
}

}  // namespace planesynth
