#include <cmath>
#include <string>

#include "datt/dataset.hpp"
#include "datt/errors.hpp"
#include "datt/rng.hpp"

namespace datt {

SoilSample SoilSample::from_features(std::span<const double> f) {
  if (f.size() != kSoilFeatures) {
    throw DimensionError("soil sample needs 6 features, got " + std::to_string(f.size()));
  }
  SoilSample s;
  s.rho_d = f[0];
  s.w = f[1];
  s.f200 = f[2];
  s.gs = f[3];
  s.ll = f[4];
  s.pl = f[5];
  return s;
}

std::optional<InvariantViolation> check_invariants(const SoilSample& s) {
  const auto f = s.features();
  for (std::size_t i = 0; i < kSoilFeatures; ++i) {
    if (!std::isfinite(f[i])) {
      return InvariantViolation{std::string(kFeatureNames[i]), "must be finite"};
    }
  }
  if (!(s.rho_d > 0.0)) return InvariantViolation{"pd_g_cm3", "dry density must be > 0"};
  if (!(s.w >= 0.0)) return InvariantViolation{"w_pct", "water content must be >= 0"};
  if (!(s.f200 >= 0.0 && s.f200 <= 100.0)) {
    return InvariantViolation{"F200_pct", "fines content must lie in [0, 100]"};
  }
  if (!(s.gs > 0.0)) return InvariantViolation{"Gs", "specific gravity must be > 0"};
  if (!(s.pl >= 0.0)) return InvariantViolation{"PL_pct", "plastic limit must be >= 0"};
  if (!(s.ll >= s.pl)) return InvariantViolation{"LL_pct", "liquid limit must be >= plastic limit"};
  if (s.resistivity && !(std::isfinite(*s.resistivity) && *s.resistivity > 0.0)) {
    return InvariantViolation{std::string(kTargetName), "resistivity must be finite and > 0"};
  }
  return std::nullopt;
}

Tensor feature_matrix(std::span<const SoilSample> samples) {
  if (samples.empty()) throw DataError("no samples");
  Tensor x(Shape{samples.size(), kSoilFeatures});
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const auto f = samples[r].features();
    for (std::size_t j = 0; j < kSoilFeatures; ++j) x.at(r, j) = f[j];
  }
  return x;
}

Dataset to_dataset(std::span<const SoilSample> samples) {
  Dataset d;
  d.features = feature_matrix(samples);
  d.targets.reserve(samples.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (!samples[r].resistivity) {
      throw DataError("sample " + std::to_string(r) + " has no resistivity target");
    }
    d.targets.push_back(*samples[r].resistivity);
  }
  return d;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset d;
  d.features = features.take_rows(rows);
  d.targets.reserve(rows.size());
  for (std::size_t r : rows) d.targets.push_back(targets[r]);
  return d;
}

double ground_truth_resistivity(const SoilSample& s) {
  // Scaled deviations from the mean soil.
  const double d = (s.rho_d - 1.52) / 0.10;
  const double w = (s.w - 13.23) / 4.2;
  const double f = (s.f200 - 7.39) / 4.3;
  const double l = (s.ll - 24.99) / 3.5;
  const double p = (s.pl - 18.06) / 3.5;
  // Moisture acts through a saturating (Archie-like) term whose strength
  // depends on fines content; density raises resistivity until pores close.
  // Specific gravity has no effect.
  const double moisture = -0.22 * std::tanh(0.9 * w) * (1.0 + 0.35 * std::tanh(f));
  const double fines = -0.13 * f + 0.04 * f * f;
  const double density = 0.09 * d - 0.03 * d * w;
  const double plasticity = -0.06 * p + 0.035 * l + 0.025 * std::sin(1.3 * l);
  return 560.0 * std::exp(moisture + fines + density + plasticity);
}

std::vector<SoilSample> gen_synthetic(std::size_t n, std::uint64_t seed, double noise) {
  if (n == 0) throw ContractError("gen_synthetic: n must be positive");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ContractError("gen_synthetic: noise must be >= 0");
  Rng rng(seed);
  std::vector<SoilSample> out;
  out.reserve(n);
  while (out.size() < n) {
    SoilSample s;
    s.rho_d = rng.uniform(1.35, 1.69);
    s.w = rng.uniform(6.0, 20.46);
    s.f200 = rng.uniform(0.0, 14.78);
    s.gs = rng.uniform(2.62, 2.74);
    s.ll = rng.uniform(19.0, 30.98);
    s.pl = s.ll - rng.uniform(2.5, 11.36);
    double rho = ground_truth_resistivity(s);
    if (noise > 0.0) rho += noise * rng.normal();
    if (!(rho > 0.0)) continue;
    s.resistivity = rho;
    out.push_back(s);
  }
  return out;
}

}  // namespace datt
