#pragma once

// Dual-attention tabular transformer.
//
//   x [B, N_f] --embed--> E [N_f, B, D_e]
//     feature branch: L blocks of  F <- LayerNorm(F + MHA(F)), attention over
//                     the N_f features of each sample independently
//     sample branch:  L blocks of  S <- LayerNorm(S + MHA(S)), attention over
//                     the B samples, each feature slot independently
//   mean over features of each branch -> [B, D_e] twice
//   C = ReLU(W_c [F_pooled, S_pooled] + b_c)
//   Y = W_4 ReLU(W_3 ReLU(W_2 ReLU(W_1 C + b_1) + b_2) + b_3) + b_4
//
// Attention projections carry no bias; the attention score scale is
// 1/sqrt(D_e / H). Blocks have no feed-forward sublayer.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "datt/autograd.hpp"
#include "datt/tensor.hpp"

namespace datt {

enum class Variant {
  kFull,         // feature + sample attention
  kFeatureOnly,  // sample branch removed, D_e -> D_e combiner
  kMlpOnly,      // standardised features straight into the MLP head
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  int n_features = 6;
  int embed_dim = 36;
  int heads = 4;
  int loops = 4;  // L_f == L_s
  std::array<int, 3> hidden{128, 64, 32};
  int out_dim = 1;
  Variant variant = Variant::kFull;
  // One parameter set shared by every loop of a branch.
  bool tie_loops = false;
  double layer_norm_eps = 1e-5;

  // Throws ConfigError.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Named tensors in a fixed enumeration order (see param_layout).
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t parameter_count() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Names and shapes of every tensor, in serialisation order:
//   embed.{i}.W1 [D_e,1], .b1 [D_e], .W2 [D_e,D_e], .b2 [D_e]   for each feature i
//   feature_attn.{l}.Wq/Wk/Wv/Wo [D_e,D_e], .ln_gain/.ln_bias [D_e]
//   sample_attn.{l}.*   (full variant only)
//   combine.W [D_e, 2*D_e] (full) or [D_e, D_e] (feature-only), combine.b [D_e]
//   head.W1 [h1,D_e] .. head.W4 [D_o,h3] with biases
// The mlp-only variant has only mlp.W1 [h1,N_f] .. mlp.W4 [D_o,h3] with biases.
// With tie_loops a single l = 0 block exists per branch.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& config);

// Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases 0, layer-norm gain 1.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

// Checks that a store matches the layout of a config exactly.
void check_layout(const ParamStore& params, const ModelConfig& config);

// Graph leaves for a ParamStore.
class BoundParams {
 public:
  static BoundParams trainable(const ParamStore& params);
  static BoundParams frozen(const ParamStore& params);

  const ag::Var& operator[](std::string_view name) const;
  std::size_t size() const noexcept { return vars_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  ag::Var& var(std::size_t i) { return vars_[i]; }
  const ag::Var& var(std::size_t i) const { return vars_[i]; }

  ParamStore snapshot() const;
  void zero_grads();

 private:
  std::vector<std::string> names_;
  std::vector<ag::Var> vars_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Optional instrumentation of one forward pass.
struct ForwardTrace {
  int feature_blocks = 0;
  int sample_blocks = 0;
  bool keep_weights = false;
  // Softmax outputs per block, [groups * H, T, T'] each.
  std::vector<Tensor> feature_weights;
  std::vector<Tensor> sample_weights;
};

// Sample-branch keys and values of a fixed set of context rows, one entry per
// loop. Context rows attend only among themselves; every query row attends to
// all context rows plus itself, so a query's output does not depend on which
// other queries share its batch.
struct ContextState {
  std::size_t rows = 0;
  std::vector<ag::Var> keys_t;  // [N_f * H, d, B_c]
  std::vector<ag::Var> values;  // [N_f * H, B_c, d]
};

// x [B, N_f] -> [N_f, B, D_e]. Column i only feeds slice i.
ag::Var embed(const ag::Var& x, const BoundParams& params, const ModelConfig& config);

// [N_f, B, D_e] -> [N_f, B, D_e].
ag::Var feature_attention(const ag::Var& embedded, const BoundParams& params,
                          const ModelConfig& config, ForwardTrace* trace = nullptr);
ag::Var sample_attention(const ag::Var& embedded, const BoundParams& params,
                         const ModelConfig& config, const ContextState* context = nullptr,
                         ForwardTrace* trace = nullptr);

// context_rows are standardised features [B_c, N_f]. Full variant only.
ContextState encode_context(const Tensor& context_rows, const BoundParams& params,
                            const ModelConfig& config);

// x [B, N_f] standardised features -> [B, D_o] standardised prediction.
// Without a context the batch itself is the sample-attention sequence.
ag::Var forward(const ag::Var& x, const BoundParams& params, const ModelConfig& config,
                const ContextState* context = nullptr, ForwardTrace* trace = nullptr);

// Gradient-free convenience wrapper. context, if given, is [B_c, N_f].
Tensor forward(const Tensor& x, const ParamStore& params, const ModelConfig& config,
               const Tensor* context = nullptr);

}  // namespace datt
