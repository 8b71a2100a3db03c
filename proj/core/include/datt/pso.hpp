#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datt/dataset.hpp"
#include "datt/model.hpp"
#include "datt/preprocess.hpp"
#include "datt/train.hpp"

namespace datt {

enum class DimKind { kContinuous, kInteger };

struct Dimension {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  DimKind kind = DimKind::kContinuous;
};

struct SearchSpace {
  std::vector<Dimension> dims;
  // Indices of the (embed_dim, heads) pair bound by divisibility; -1 if the
  // space carries no such constraint.
  int embed_index = -1;
  int heads_index = -1;

  // embed_dim [16,64], heads [1,8], loops [2,12], h1 [32,256], h2 [16,128],
  // h3 [8,64], batch_size [8,32] (integers), learning_rate [1e-5,1e-2].
  static SearchSpace table2();

  std::size_t size() const noexcept { return dims.size(); }
  void validate() const;
};

// Clamps to bounds, rounds integer dimensions half away from zero, then moves
// embed_dim down to the nearest multiple of heads. When that multiple falls
// below embed_dim's lower bound the smallest multiple inside the bounds is
// used instead.
std::vector<double> constrain(std::span<const double> raw, const SearchSpace& space);

struct Particle {
  std::vector<double> position;
  std::vector<double> velocity;
  std::vector<double> best_position;
  double best_fitness = 0.0;  // +inf until first evaluation
};

struct Swarm {
  std::vector<Particle> particles;
  std::vector<double> global_best;
  double global_best_fitness = 0.0;
};

struct PsoCoefficients {
  double inertia = 0.5;
  double cognitive = 1.5;
  double social = 1.5;
};

// Source of uniform draws on [0, 1).
using UniformSource = std::function<double()>;

// v <- w v + c1 r1 (p - x) + c2 r2 (g - x); x <- constrain(x + v). For each
// particle and each dimension r1 is drawn, then r2. Velocities are kept as
// computed when the position is clamped.
void pso_step(Swarm& swarm, const SearchSpace& space, const PsoCoefficients& coeffs,
              const UniformSource& uniform);

struct Evaluation {
  double fitness = 0.0;   // minimised
  double val_loss = 0.0;  // NaN when not applicable
};

using Objective = std::function<Evaluation(std::span<const double> position)>;

struct TraceEntry {
  int iteration = 0;  // 1-based
  double best_fitness = 0.0;
  double best_val_loss = 0.0;
  std::vector<double> best_position;
};

struct SwarmTrace {
  std::vector<TraceEntry> entries;
};

struct SearchOptions {
  std::size_t particles = 10;
  std::size_t iterations = 15;
  std::uint64_t seed = 42;
  PsoCoefficients coeffs;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct SearchResult {
  std::vector<double> best_position;
  double best_fitness = 0.0;
  SwarmTrace trace;
};

// Positions start uniform in bounds (then constrained) with zero velocity.
// Each iteration evaluates every particle, updates personal and global bests,
// records a trace entry, and steps the swarm.
SearchResult search(const SearchSpace& space, const Objective& objective,
                    const SearchOptions& options);

// Sum of squared distances from the midpoint of the unit-mapped space.
double sphere_objective(std::span<const double> position, const SearchSpace& space);

// Table 2 position -> model config and train spec (other fields from base).
void apply_position(std::span<const double> position, ModelConfig& config, TrainSpec& spec);

// -(best validation R^2) after inner_epochs of training with a fixed seed.
// Divergence or an undefined R^2 yields +inf.
Evaluation hyperparameter_fitness(std::span<const double> position, const Dataset& data,
                                  const DatasetSplit& split, const ModelConfig& base_config,
                                  const TrainSpec& base_spec, int inner_epochs);

// "iteration,best_R2,best_val_loss,<dimension names...>"
std::string trace_csv(const SwarmTrace& trace, const SearchSpace& space);

}  // namespace datt
