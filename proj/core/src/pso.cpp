#include "datt/pso.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "datt/errors.hpp"
#include "datt/io.hpp"
#include "datt/parallel.hpp"
#include "datt/rng.hpp"

namespace datt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

SearchSpace SearchSpace::table2() {
  SearchSpace s;
  s.dims = {{"embed_dim", 16, 64, DimKind::kInteger},   {"heads", 1, 8, DimKind::kInteger},
            {"loops", 2, 12, DimKind::kInteger},        {"h1", 32, 256, DimKind::kInteger},
            {"h2", 16, 128, DimKind::kInteger},         {"h3", 8, 64, DimKind::kInteger},
            {"batch_size", 8, 32, DimKind::kInteger},   {"learning_rate", 1e-5, 1e-2, DimKind::kContinuous}};
  s.embed_index = 0;
  s.heads_index = 1;
  return s;
}

void SearchSpace::validate() const {
  if (dims.empty()) throw ConfigError("search space has no dimensions");
  for (const Dimension& d : dims) {
    if (!(d.lower < d.upper)) throw ConfigError("dimension '" + d.name + "': lower must be < upper");
    if (d.kind == DimKind::kInteger && (d.lower != std::round(d.lower) || d.upper != std::round(d.upper))) {
      throw ConfigError("dimension '" + d.name + "': integer bounds required");
    }
  }
  const int n = static_cast<int>(dims.size());
  if ((embed_index < 0) != (heads_index < 0)) throw ConfigError("divisibility needs both embed and heads");
  if (embed_index >= 0) {
    if (embed_index >= n || heads_index >= n || embed_index == heads_index) {
      throw ConfigError("divisibility indices out of range");
    }
    const Dimension& e = dims[static_cast<std::size_t>(embed_index)];
    const Dimension& h = dims[static_cast<std::size_t>(heads_index)];
    if (e.kind != DimKind::kInteger || h.kind != DimKind::kInteger || h.lower < 1) {
      throw ConfigError("divisibility needs integer embed/heads dimensions with heads >= 1");
    }
    // Every heads value must admit a multiple inside embed's bounds.
    for (double k = h.lower; k <= h.upper; k += 1.0) {
      if (std::ceil(e.lower / k) * k > e.upper) {
        throw ConfigError("no embed_dim in bounds is divisible by heads " + std::to_string(static_cast<int>(k)));
      }
    }
  }
}

std::vector<double> constrain(std::span<const double> raw, const SearchSpace& space) {
  if (raw.size() != space.size()) {
    throw DimensionError("constrain: position has " + std::to_string(raw.size()) +
                         " entries, space has " + std::to_string(space.size()));
  }
  std::vector<double> x(raw.begin(), raw.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Dimension& d = space.dims[i];
    double v = std::isnan(x[i]) ? d.lower : x[i];
    v = std::clamp(v, d.lower, d.upper);
    if (d.kind == DimKind::kInteger) v = std::round(v);
    x[i] = v;
  }
  if (space.embed_index >= 0) {
    const std::size_t ei = static_cast<std::size_t>(space.embed_index);
    const double heads = x[static_cast<std::size_t>(space.heads_index)];
    const double lower = space.dims[ei].lower;
    double embed = std::floor(x[ei] / heads) * heads;
    if (embed < lower || embed < heads) embed = std::ceil(std::max(lower, heads) / heads) * heads;
    x[ei] = embed;
  }
  return x;
}

void pso_step(Swarm& swarm, const SearchSpace& space, const PsoCoefficients& coeffs,
              const UniformSource& uniform) {
  const std::size_t n = space.size();
  if (swarm.global_best.size() != n) throw ContractError("pso_step: swarm has no global best");
  for (Particle& p : swarm.particles) {
    if (p.position.size() != n || p.velocity.size() != n || p.best_position.size() != n) {
      throw DimensionError("pso_step: particle dimension mismatch");
    }
    std::vector<double> next(n);
    for (std::size_t d = 0; d < n; ++d) {
      const double r1 = uniform();
      const double r2 = uniform();
      const double x = p.position[d];
      p.velocity[d] = coeffs.inertia * p.velocity[d] + coeffs.cognitive * r1 * (p.best_position[d] - x) +
                      coeffs.social * r2 * (swarm.global_best[d] - x);
      next[d] = x + p.velocity[d];
    }
    p.position = constrain(next, space);
  }
}

SearchResult search(const SearchSpace& space, const Objective& objective,
                    const SearchOptions& options) {
  space.validate();
  if (options.particles < 1 || options.iterations < 1) {
    throw ConfigError("search needs at least one particle and one iteration");
  }
  const std::size_t n = space.size();
  Rng rng(options.seed);
  Swarm swarm;
  swarm.global_best_fitness = kInf;
  double global_val_loss = kNaN;
  swarm.particles.resize(options.particles);
  for (Particle& p : swarm.particles) {
    std::vector<double> raw(n);
    for (std::size_t d = 0; d < n; ++d) raw[d] = rng.uniform(space.dims[d].lower, space.dims[d].upper);
    p.position = constrain(raw, space);
    p.velocity.assign(n, 0.0);
    p.best_position = p.position;
    p.best_fitness = kInf;
  }
  swarm.global_best = swarm.particles.front().position;

  SearchResult result;
  std::vector<Evaluation> evals(options.particles);
  const UniformSource uniform = [&rng] { return rng.uniform(); };
  for (std::size_t it = 1; it <= options.iterations; ++it) {
    parallel_for(
        options.particles,
        [&](std::size_t i) {
          Evaluation e = objective(swarm.particles[i].position);
          if (std::isnan(e.fitness)) e.fitness = kInf;
          evals[i] = e;
        },
        options.threads);
    for (std::size_t i = 0; i < options.particles; ++i) {
      Particle& p = swarm.particles[i];
      if (evals[i].fitness < p.best_fitness) {
        p.best_fitness = evals[i].fitness;
        p.best_position = p.position;
      }
      if (evals[i].fitness < swarm.global_best_fitness) {
        swarm.global_best_fitness = evals[i].fitness;
        swarm.global_best = p.position;
        global_val_loss = evals[i].val_loss;
      }
    }
    result.trace.entries.push_back(
        {static_cast<int>(it), swarm.global_best_fitness, global_val_loss, swarm.global_best});
    if (it < options.iterations) pso_step(swarm, space, options.coeffs, uniform);
  }
  result.best_position = swarm.global_best;
  result.best_fitness = swarm.global_best_fitness;
  return result;
}

double sphere_objective(std::span<const double> position, const SearchSpace& space) {
  if (position.size() != space.size()) throw DimensionError("sphere_objective: dimension mismatch");
  double total = 0.0;
  for (std::size_t d = 0; d < position.size(); ++d) {
    const Dimension& dim = space.dims[d];
    const double u = (position[d] - dim.lower) / (dim.upper - dim.lower) - 0.5;
    total += u * u;
  }
  return total;
}

void apply_position(std::span<const double> position, ModelConfig& config, TrainSpec& spec) {
  if (position.size() != 8) throw DimensionError("Table 2 position needs 8 entries");
  auto as_int = [](double v) { return static_cast<int>(std::lround(v)); };
  config.embed_dim = as_int(position[0]);
  config.heads = as_int(position[1]);
  config.loops = as_int(position[2]);
  config.hidden = {as_int(position[3]), as_int(position[4]), as_int(position[5])};
  spec.batch_size = as_int(position[6]);
  spec.learning_rate = position[7];
}

Evaluation hyperparameter_fitness(std::span<const double> position, const Dataset& data,
                                  const DatasetSplit& split, const ModelConfig& base_config,
                                  const TrainSpec& base_spec, int inner_epochs) {
  ModelConfig config = base_config;
  TrainSpec spec = base_spec;
  apply_position(position, config, spec);
  spec.epochs = inner_epochs;
  DatasetSplit selection = split;
  selection.test.clear();  // never touched during selection
  try {
    const FitResult fit = fit_model(data, selection, config, spec);
    const double r2 = fit.report.best_val_r2();
    if (!std::isfinite(r2)) return {kInf, fit.report.best_val_loss};
    return {-r2, fit.report.best_val_loss};
  } catch (const NumericError&) {
    return {kInf, kNaN};
  }
}

std::string trace_csv(const SwarmTrace& trace, const SearchSpace& space) {
  std::ostringstream out;
  out << "iteration,best_R2,best_val_loss";
  for (const Dimension& d : space.dims) out << ',' << d.name;
  out << '\n';
  for (const TraceEntry& e : trace.entries) {
    out << e.iteration << ',' << format_number(-e.best_fitness) << ',' << format_number(e.best_val_loss);
    for (double v : e.best_position) out << ',' << format_number(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace datt
