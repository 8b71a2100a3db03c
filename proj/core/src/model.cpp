#include "datt/model.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "datt/errors.hpp"
#include "datt/rng.hpp"

namespace datt {

using ag::Var;

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kFeatureOnly:
      return "feature-only";
    case Variant::kMlpOnly:
      return "mlp-only";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::kFull;
  if (name == "feature-only") return Variant::kFeatureOnly;
  if (name == "mlp-only") return Variant::kMlpOnly;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected full, feature-only or mlp-only)");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ConfigError(std::string(what) + " must be >= 1, got " + std::to_string(v));
  };
  positive(n_features, "n_features");
  positive(embed_dim, "embed_dim");
  positive(heads, "heads");
  positive(loops, "loops");
  positive(hidden[0], "hidden[0]");
  positive(hidden[1], "hidden[1]");
  positive(hidden[2], "hidden[2]");
  positive(out_dim, "out_dim");
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim (" + std::to_string(embed_dim) +
                      ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_features", c.n_features},
                     {"embed_dim", c.embed_dim},
                     {"heads", c.heads},
                     {"loops", c.loops},
                     {"hidden", c.hidden},
                     {"out_dim", c.out_dim},
                     {"variant", std::string(variant_name(c.variant))},
                     {"tie_loops", c.tie_loops},
                     {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_features = j.value("n_features", d.n_features);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.heads = j.value("heads", d.heads);
  c.loops = j.value("loops", d.loops);
  c.hidden = j.value("hidden", d.hidden);
  c.out_dim = j.value("out_dim", d.out_dim);
  c.variant = parse_variant(j.value("variant", std::string("full")));
  c.tie_loops = j.value("tie_loops", d.tie_loops);
  c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
}

// ---- ParamStore ------------------------------------------------------------

void ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const Tensor& ParamStore::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return tensors_[it->second];
}

Tensor& ParamStore::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return tensors_[it->second];
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

namespace {

std::string attn_prefix(const char* branch, int loop) {
  return std::string(branch) + "." + std::to_string(loop) + ".";
}

void add_attention_layout(std::vector<std::pair<std::string, Shape>>& out, const char* branch,
                          const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.embed_dim);
  const int blocks = c.tie_loops ? 1 : c.loops;
  for (int l = 0; l < blocks; ++l) {
    const std::string p = attn_prefix(branch, l);
    out.emplace_back(p + "Wq", Shape{d, d});
    out.emplace_back(p + "Wk", Shape{d, d});
    out.emplace_back(p + "Wv", Shape{d, d});
    out.emplace_back(p + "Wo", Shape{d, d});
    out.emplace_back(p + "ln_gain", Shape{d});
    out.emplace_back(p + "ln_bias", Shape{d});
  }
}

void add_mlp_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                    std::size_t in, const ModelConfig& c) {
  const std::size_t h1 = static_cast<std::size_t>(c.hidden[0]);
  const std::size_t h2 = static_cast<std::size_t>(c.hidden[1]);
  const std::size_t h3 = static_cast<std::size_t>(c.hidden[2]);
  const std::size_t o = static_cast<std::size_t>(c.out_dim);
  out.emplace_back(prefix + "W1", Shape{h1, in});
  out.emplace_back(prefix + "b1", Shape{h1});
  out.emplace_back(prefix + "W2", Shape{h2, h1});
  out.emplace_back(prefix + "b2", Shape{h2});
  out.emplace_back(prefix + "W3", Shape{h3, h2});
  out.emplace_back(prefix + "b3", Shape{h3});
  out.emplace_back(prefix + "W4", Shape{o, h3});
  out.emplace_back(prefix + "b4", Shape{o});
}

bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = name.substr(dot + 1);
  return leaf[0] == 'b' || leaf == "ln_bias";
}

}  // namespace

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t d = static_cast<std::size_t>(c.embed_dim);
  if (c.variant == Variant::kMlpOnly) {
    add_mlp_layout(out, "mlp.", static_cast<std::size_t>(c.n_features), c);
    return out;
  }
  for (int i = 0; i < c.n_features; ++i) {
    const std::string p = "embed." + std::to_string(i) + ".";
    out.emplace_back(p + "W1", Shape{d, 1});
    out.emplace_back(p + "b1", Shape{d});
    out.emplace_back(p + "W2", Shape{d, d});
    out.emplace_back(p + "b2", Shape{d});
  }
  add_attention_layout(out, "feature_attn", c);
  if (c.variant == Variant::kFull) add_attention_layout(out, "sample_attn", c);
  out.emplace_back("combine.W", Shape{d, c.variant == Variant::kFull ? 2 * d : d});
  out.emplace_back("combine.b", Shape{d});
  add_mlp_layout(out, "head.", d, c);
  return out;
}

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  for (auto& [name, shape] : param_layout(config)) {
    if (name.ends_with("ln_gain")) {
      store.add(name, Tensor(shape, 1.0));
    } else if (is_bias(name)) {
      store.add(name, Tensor(shape, 0.0));
    } else {
      Tensor w(shape);
      const double bound = std::sqrt(1.0 / static_cast<double>(shape[1]));
      for (double& v : w.values()) v = rng.uniform(-bound, bound);
      store.add(name, std::move(w));
    }
  }
  return store;
}

void check_layout(const ParamStore& params, const ModelConfig& config) {
  const auto layout = param_layout(config);
  if (layout.size() != params.size()) {
    throw ConfigError("parameter count mismatch: config expects " + std::to_string(layout.size()) +
                      " tensors, store has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params.name(i) != layout[i].first) {
      throw ConfigError("parameter " + std::to_string(i) + " is '" + params.name(i) +
                        "', expected '" + layout[i].first + "'");
    }
    if (params.tensor(i).shape() != layout[i].second) {
      throw ConfigError("parameter '" + params.name(i) + "' has shape " +
                        shape_string(params.tensor(i).shape()) + ", expected " +
                        shape_string(layout[i].second));
    }
  }
}

// ---- BoundParams -----------------------------------------------------------

BoundParams BoundParams::trainable(const ParamStore& params) {
  BoundParams b;
  for (std::size_t i = 0; i < params.size(); ++i) {
    b.index_.emplace(params.name(i), i);
    b.names_.push_back(params.name(i));
    b.vars_.push_back(ag::parameter(params.tensor(i)));
  }
  return b;
}

BoundParams BoundParams::frozen(const ParamStore& params) {
  BoundParams b;
  for (std::size_t i = 0; i < params.size(); ++i) {
    b.index_.emplace(params.name(i), i);
    b.names_.push_back(params.name(i));
    b.vars_.push_back(ag::constant(params.tensor(i)));
  }
  return b;
}

const Var& BoundParams::operator[](std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return vars_[it->second];
}

ParamStore BoundParams::snapshot() const {
  ParamStore s;
  for (std::size_t i = 0; i < vars_.size(); ++i) s.add(names_[i], vars_[i].value());
  return s;
}

void BoundParams::zero_grads() {
  for (Var& v : vars_) v.zero_grad();
}

// ---- forward ---------------------------------------------------------------

namespace {

struct AttnParams {
  const Var* wq;
  const Var* wk;
  const Var* wv;
  const Var* wo;
  const Var* gain;
  const Var* bias;
};

AttnParams attn_params(const BoundParams& p, const char* branch, int loop, const ModelConfig& c) {
  const std::string pre = attn_prefix(branch, c.tie_loops ? 0 : loop);
  return AttnParams{&p[pre + "Wq"], &p[pre + "Wk"],      &p[pre + "Wv"],
                    &p[pre + "Wo"], &p[pre + "ln_gain"], &p[pre + "ln_bias"]};
}

// [G, T, D] -> [G * H, T, D / H]
Var split_heads(const Var& x, std::size_t heads) {
  const Shape& s = x.shape();
  const std::size_t g = s[0], t = s[1], d = s[2] / heads;
  Var r = ag::reshape(x, Shape{g, t, heads, d});
  r = ag::permute(r, {0, 2, 1, 3});
  return ag::reshape(r, Shape{g * heads, t, d});
}

// [G * H, T, d] -> [G, T, H * d]
Var merge_heads(const Var& x, std::size_t groups, std::size_t heads) {
  const Shape& s = x.shape();
  const std::size_t t = s[1], d = s[2];
  Var r = ag::reshape(x, Shape{groups, heads, t, d});
  r = ag::permute(r, {0, 2, 1, 3});
  return ag::reshape(r, Shape{groups, t, heads * d});
}

double score_scale(const ModelConfig& c) {
  return 1.0 / std::sqrt(static_cast<double>(c.embed_dim) / static_cast<double>(c.heads));
}

// One residual + layer-norm block of multi-head self-attention over axis 1
// of x [G, T, D].
Var self_attention_block(const Var& x, const AttnParams& p, const ModelConfig& c,
                         std::vector<Tensor>* weights) {
  const std::size_t heads = static_cast<std::size_t>(c.heads);
  const std::size_t groups = x.shape()[0];
  Var q = split_heads(ag::linear(x, *p.wq), heads);
  Var k = split_heads(ag::linear(x, *p.wk), heads);
  Var v = split_heads(ag::linear(x, *p.wv), heads);
  Var scores = ag::scale(ag::matmul(q, ag::permute(k, {0, 2, 1})), score_scale(c));
  Var attn = ag::softmax_lastdim(scores);
  if (weights) weights->push_back(attn.value());
  Var mixed = merge_heads(ag::matmul(attn, v), groups, heads);
  Var out = ag::linear(mixed, *p.wo);
  return ag::layer_norm(ag::add(x, out), *p.gain, *p.bias, c.layer_norm_eps);
}

// No-grad form of the context attention below, one head group at a time.
// q, k, v [GH, Bq, d], keys_t [GH, d, Bc], values [GH, Bc, d] -> [GH, Bq, d].
Tensor fused_context_mix(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& keys_t,
                         const Tensor& values, double scale, std::vector<Tensor>* weights) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  const auto gh = static_cast<Eigen::Index>(q.shape()[0]);
  const auto bq = static_cast<Eigen::Index>(q.shape()[1]);
  const auto d = static_cast<Eigen::Index>(q.shape()[2]);
  const auto bc = static_cast<Eigen::Index>(keys_t.shape()[2]);
  Tensor out = Tensor::uninitialized(q.shape());
  Tensor attn;
  if (weights) attn = Tensor::uninitialized(Shape{q.shape()[0], q.shape()[1], keys_t.shape()[2] + 1});
  RowMat s(bq, bc + 1);
  for (Eigen::Index g = 0; g < gh; ++g) {
    const CMap qg(q.data() + g * bq * d, bq, d);
    const CMap kg(k.data() + g * bq * d, bq, d);
    const CMap vg(v.data() + g * bq * d, bq, d);
    const CMap kt(keys_t.data() + g * d * bc, d, bc);
    const CMap vc(values.data() + g * bc * d, bc, d);
    s.leftCols(bc).noalias() = qg * kt;
    s.col(bc) = qg.cwiseProduct(kg).rowwise().sum();
    s *= scale;
    for (Eigen::Index r = 0; r < bq; ++r) {
      auto row = s.row(r).array();
      row = (row - row.maxCoeff()).exp();
      row *= 1.0 / row.sum();
    }
    Eigen::Map<RowMat> og(out.data() + g * bq * d, bq, d);
    og.noalias() = s.leftCols(bc) * vc;
    og.array() += vg.array().colwise() * s.col(bc).array();
    if (weights) Eigen::Map<RowMat>(attn.data() + g * bq * (bc + 1), bq, bc + 1) = s;
  }
  if (weights) weights->push_back(std::move(attn));
  return out;
}

// Query rows attend to the frozen context of this loop plus themselves.
Var context_attention_block(const Var& x, const AttnParams& p, const ModelConfig& c,
                            const Var& keys_t, const Var& values,
                            std::vector<Tensor>* weights) {
  const std::size_t heads = static_cast<std::size_t>(c.heads);
  const std::size_t groups = x.shape()[0];
  const std::size_t bc = keys_t.shape()[2];
  const std::size_t d = keys_t.shape()[1];
  Var q = split_heads(ag::linear(x, *p.wq), heads);
  Var k = split_heads(ag::linear(x, *p.wk), heads);
  Var v = split_heads(ag::linear(x, *p.wv), heads);
  if (!ag::grad_enabled()) {
    Tensor mixed = fused_context_mix(q.value(), k.value(), v.value(), keys_t.value(), values.value(),
                                     score_scale(c), weights);
    Var out = ag::linear(merge_heads(ag::constant(std::move(mixed)), groups, heads), *p.wo);
    return ag::layer_norm(ag::add(x, out), *p.gain, *p.bias, c.layer_norm_eps);
  }
  Var to_context = ag::matmul(q, keys_t);           // [GH, Bq, Bc]
  Var to_self = ag::sum_lastdim(ag::mul(q, k));      // [GH, Bq, 1]
  Var scores = ag::scale(ag::concat_lastdim(to_context, to_self), score_scale(c));
  Var attn = ag::softmax_lastdim(scores);
  if (weights) weights->push_back(attn.value());
  Var from_context = ag::matmul(ag::slice(attn, -1, 0, bc), values);
  Var from_self = ag::mul(ag::broadcast_lastdim(ag::slice(attn, -1, bc, bc + 1), d), v);
  Var mixed = merge_heads(ag::add(from_context, from_self), groups, heads);
  Var out = ag::linear(mixed, *p.wo);
  return ag::layer_norm(ag::add(x, out), *p.gain, *p.bias, c.layer_norm_eps);
}

void require_rows(const Shape& s, const ModelConfig& c, const char* what) {
  if (s.size() != 2 || s[1] != static_cast<std::size_t>(c.n_features)) {
    throw DimensionError(std::string(what) + ": expected [B, " + std::to_string(c.n_features) +
                         "], got " + shape_string(s));
  }
}

void require_embedded(const Shape& s, const ModelConfig& c, const char* what) {
  if (s.size() != 3 || s[0] != static_cast<std::size_t>(c.n_features) ||
      s[2] != static_cast<std::size_t>(c.embed_dim)) {
    throw DimensionError(std::string(what) + ": expected [" + std::to_string(c.n_features) +
                         ", B, " + std::to_string(c.embed_dim) + "], got " + shape_string(s));
  }
}

Var mlp_head(const Var& x, const BoundParams& p, const std::string& prefix) {
  Var h = ag::relu(ag::linear(x, p[prefix + "W1"], p[prefix + "b1"]));
  h = ag::relu(ag::linear(h, p[prefix + "W2"], p[prefix + "b2"]));
  h = ag::relu(ag::linear(h, p[prefix + "W3"], p[prefix + "b3"]));
  return ag::linear(h, p[prefix + "W4"], p[prefix + "b4"]);
}

}  // namespace

Var embed(const Var& x, const BoundParams& params, const ModelConfig& config) {
  require_rows(x.shape(), config, "embed");
  if (config.variant == Variant::kMlpOnly) throw ConfigError("embed: mlp-only variant has no embedding");
  std::vector<Var> parts;
  parts.reserve(static_cast<std::size_t>(config.n_features));
  for (int i = 0; i < config.n_features; ++i) {
    const std::string p = "embed." + std::to_string(i) + ".";
    const std::size_t col = static_cast<std::size_t>(i);
    Var column = ag::slice(x, 1, col, col + 1);
    Var h = ag::relu(ag::linear(column, params[p + "W1"], params[p + "b1"]));
    parts.push_back(ag::linear(h, params[p + "W2"], params[p + "b2"]));
  }
  return ag::stack(parts);
}

Var feature_attention(const Var& embedded, const BoundParams& params, const ModelConfig& config,
                      ForwardTrace* trace) {
  require_embedded(embedded.shape(), config, "feature_attention");
  std::vector<Tensor>* weights = trace && trace->keep_weights ? &trace->feature_weights : nullptr;
  Var f = ag::permute(embedded, {1, 0, 2});  // [B, N_f, D_e]
  for (int l = 0; l < config.loops; ++l) {
    f = self_attention_block(f, attn_params(params, "feature_attn", l, config), config, weights);
    if (trace) ++trace->feature_blocks;
  }
  return ag::permute(f, {1, 0, 2});
}

Var sample_attention(const Var& embedded, const BoundParams& params, const ModelConfig& config,
                     const ContextState* context, ForwardTrace* trace) {
  require_embedded(embedded.shape(), config, "sample_attention");
  if (context && context->keys_t.size() != static_cast<std::size_t>(config.loops)) {
    throw ContractError("sample_attention: context encoded for a different loop count");
  }
  std::vector<Tensor>* weights = trace && trace->keep_weights ? &trace->sample_weights : nullptr;
  Var s = embedded;  // [N_f, B, D_e]: each feature slot attends over the batch
  for (int l = 0; l < config.loops; ++l) {
    const AttnParams p = attn_params(params, "sample_attn", l, config);
    if (context) {
      const std::size_t li = static_cast<std::size_t>(l);
      s = context_attention_block(s, p, config, context->keys_t[li], context->values[li], weights);
    } else {
      s = self_attention_block(s, p, config, weights);
    }
    if (trace) ++trace->sample_blocks;
  }
  return s;
}

ContextState encode_context(const Tensor& context_rows, const BoundParams& params,
                            const ModelConfig& config) {
  config.validate();
  if (config.variant != Variant::kFull) {
    throw ConfigError("a frozen context is only meaningful for the full variant");
  }
  require_rows(context_rows.shape(), config, "encode_context");
  const std::size_t heads = static_cast<std::size_t>(config.heads);
  ContextState state;
  state.rows = context_rows.rows();
  Var s = embed(ag::constant(context_rows), params, config);
  for (int l = 0; l < config.loops; ++l) {
    const AttnParams p = attn_params(params, "sample_attn", l, config);
    state.keys_t.push_back(ag::permute(split_heads(ag::linear(s, *p.wk), heads), {0, 2, 1}));
    state.values.push_back(split_heads(ag::linear(s, *p.wv), heads));
    s = self_attention_block(s, p, config, nullptr);
  }
  return state;
}

Var forward(const Var& x, const BoundParams& params, const ModelConfig& config,
            const ContextState* context, ForwardTrace* trace) {
  require_rows(x.shape(), config, "forward");
  if (context && config.variant != Variant::kFull) {
    throw ConfigError("context rows given for the " + std::string(variant_name(config.variant)) +
                      " variant, which has no sample attention");
  }
  if (config.variant == Variant::kMlpOnly) return mlp_head(x, params, "mlp.");

  Var e = embed(x, params, config);
  Var f_pooled = ag::mean_axis(feature_attention(e, params, config, trace), 0);  // [B, D_e]
  Var combined;
  if (config.variant == Variant::kFull) {
    Var s_pooled = ag::mean_axis(sample_attention(e, params, config, context, trace), 0);
    combined = ag::concat_lastdim(f_pooled, s_pooled);
  } else {
    combined = f_pooled;
  }
  Var c = ag::relu(ag::linear(combined, params["combine.W"], params["combine.b"]));
  return mlp_head(c, params, "head.");
}

Tensor forward(const Tensor& x, const ParamStore& params, const ModelConfig& config,
               const Tensor* context) {
  ag::NoGradGuard no_grad;
  config.validate();
  BoundParams bound = BoundParams::frozen(params);
  if (context) {
    if (config.variant != Variant::kFull) {
      throw ConfigError("context rows given for the " +
                        std::string(variant_name(config.variant)) + " variant");
    }
    const ContextState state = encode_context(*context, bound, config);
    return forward(ag::constant(x), bound, config, &state).value();
  }
  return forward(ag::constant(x), bound, config).value();
}

}  // namespace datt
