#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "datt/tensor.hpp"

namespace datt {

inline constexpr std::size_t kSoilFeatures = 6;

// Column names of the normative CSV schema, in feature order.
inline constexpr std::array<std::string_view, kSoilFeatures> kFeatureNames = {
    "pd_g_cm3", "w_pct", "F200_pct", "Gs", "LL_pct", "PL_pct"};
inline constexpr std::string_view kTargetName = "resistivity_ohm_m";

struct SoilSample {
  double rho_d = 0.0;  // dry density, g/cm^3
  double w = 0.0;      // water content, %
  double f200 = 0.0;   // fines passing No. 200 sieve, %
  double gs = 0.0;     // specific gravity
  double ll = 0.0;     // liquid limit, %
  double pl = 0.0;     // plastic limit, %
  std::optional<double> resistivity;  // ohm*m

  std::array<double, kSoilFeatures> features() const { return {rho_d, w, f200, gs, ll, pl}; }
  static SoilSample from_features(std::span<const double> f);
};

struct InvariantViolation {
  std::string field;  // CSV column name
  std::string message;
};

// rho_d > 0, w >= 0, 0 <= F200 <= 100, Gs > 0, LL >= PL >= 0, finite values,
// resistivity > 0 when present.
std::optional<InvariantViolation> check_invariants(const SoilSample& s);

// Feature matrix [n, 6] plus resistivity targets.
struct Dataset {
  Tensor features;
  std::vector<double> targets;

  std::size_t size() const noexcept { return targets.size(); }
  Dataset subset(std::span<const std::size_t> rows) const;
};

// Every sample must carry a resistivity.
Dataset to_dataset(std::span<const SoilSample> samples);
Tensor feature_matrix(std::span<const SoilSample> samples);

// Deterministic synthetic soils. Features are drawn uniformly from ranges
// centred on typical compacted lateritic/sandy soils (rho_d 1.52, w 13.23,
// F200 7.39, Gs 2.68, LL 24.99, PL 18.06 on average) and resistivity follows
// ground_truth_resistivity() plus N(0, noise^2) ohm*m.
std::vector<SoilSample> gen_synthetic(std::size_t n, std::uint64_t seed, double noise);

// Noise-free generator formula. See docs/synthetic-data.md.
double ground_truth_resistivity(const SoilSample& s);

}  // namespace datt
