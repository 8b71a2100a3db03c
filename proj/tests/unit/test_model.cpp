#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "datt/errors.hpp"
#include "datt/model.hpp"
#include "datt/pipeline.hpp"
#include "datt/preprocess.hpp"
#include "gradcheck.hpp"

namespace datt {
namespace {

using testing::random_tensor;

ModelConfig small_config(Variant v = Variant::kFull) {
  ModelConfig c;
  c.embed_dim = 8;
  c.heads = 2;
  c.loops = 2;
  c.hidden = {6, 5, 4};
  c.variant = v;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Count derived from the layer list by hand, independent of param_layout.
std::size_t expected_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, l = c.loops, f = c.n_features;
  const std::size_t h1 = c.hidden[0], h2 = c.hidden[1], h3 = c.hidden[2];
  const std::size_t head = h1 * d + h1 + h2 * h1 + h2 + h3 * h2 + h3 + h3 + 1;
  const std::size_t emb = f * (d + d + d * d + d);
  const std::size_t block = 4 * d * d + 2 * d;
  if (c.variant == Variant::kFeatureOnly) return emb + l * block + d * d + d + head;
  return emb + 2 * l * block + 2 * d * d + d + head;
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.embed_dim = 35;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(init_params(c, 1), ConfigError);
  c = ModelConfig{};
  c.loops = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_variant("transformer"), ConfigError);
  EXPECT_EQ(parse_variant("feature-only"), Variant::kFeatureOnly);
}

TEST(ModelConfig, JsonRoundTrip) {
  ModelConfig c = small_config(Variant::kFeatureOnly);
  c.tie_loops = true;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
}

TEST(Params, DeterministicInit) {
  const ModelConfig c;
  EXPECT_EQ(init_params(c, 3), init_params(c, 3));
  EXPECT_FALSE(init_params(c, 3) == init_params(c, 4));
}

TEST(Params, DocumentedShapes) {
  const ParamStore p = init_params(ModelConfig{}, 1);
  EXPECT_EQ(p.at("embed.0.W1").shape(), (Shape{36, 1}));
  EXPECT_EQ(p.at("head.W4").shape(), (Shape{1, 32}));
  EXPECT_EQ(p.at("combine.W").shape(), (Shape{36, 72}));
  EXPECT_EQ(p.at("sample_attn.3.Wq").shape(), (Shape{36, 36}));
}

TEST(Params, CountMatchesHandDerivation) {
  EXPECT_EQ(init_params(ModelConfig{}, 1).parameter_count(), 68205u);
  for (Variant v : {Variant::kFull, Variant::kFeatureOnly}) {
    ModelConfig c = small_config(v);
    EXPECT_EQ(init_params(c, 1).parameter_count(), expected_count(c));
  }
}

TEST(Params, InitRanges) {
  const ParamStore p = init_params(ModelConfig{}, 2);
  const double bound = std::sqrt(1.0 / 36.0);
  for (double v : p.at("feature_attn.0.Wq").values()) EXPECT_LE(std::abs(v), bound);
  for (double v : p.at("head.b1").values()) EXPECT_EQ(v, 0.0);
  for (double v : p.at("feature_attn.0.ln_gain").values()) EXPECT_EQ(v, 1.0);
}

TEST(Params, AblationNameSets) {
  auto names = [](Variant v) {
    ModelConfig c;
    c.variant = v;
    std::set<std::string> s;
    for (const auto& [n, shape] : param_layout(c)) s.insert(n);
    return s;
  };
  const auto full = names(Variant::kFull), feat = names(Variant::kFeatureOnly),
             mlp = names(Variant::kMlpOnly);
  EXPECT_TRUE(std::includes(full.begin(), full.end(), feat.begin(), feat.end()));
  EXPECT_LT(feat.size(), full.size());
  for (const auto& n : mlp) EXPECT_FALSE(full.contains(n)) << n;
}

TEST(Params, TiedLoopsHaveOneBlockPerBranch) {
  ModelConfig c;
  c.tie_loops = true;
  const ParamStore p = init_params(c, 1);
  EXPECT_TRUE(p.contains("feature_attn.0.Wq"));
  EXPECT_FALSE(p.contains("feature_attn.1.Wq"));
  const Tensor x = random_tensor({3, 6}, 1);
  EXPECT_EQ(forward(x, p, c).shape(), (Shape{3, 1}));
}

TEST(Params, LayoutCheckRejectsMismatch) {
  ParamStore p = init_params(small_config(), 1);
  EXPECT_NO_THROW(check_layout(p, small_config()));
  EXPECT_THROW(check_layout(p, ModelConfig{}), ConfigError);
}

TEST(Embed, ZeroParamsGiveZero) {
  const ModelConfig c = small_config();
  ParamStore p = init_params(c, 1);
  for (std::size_t i = 0; i < p.size(); ++i) p.tensor(i).fill(0.0);
  const auto b = BoundParams::frozen(p);
  const Tensor e = embed(ag::constant(random_tensor({4, 6}, 2)), b, c).value();
  EXPECT_EQ(e.shape(), (Shape{6, 4, 8}));
  for (double v : e.values()) EXPECT_EQ(v, 0.0);
}

TEST(Embed, ShapeAtPaperBatch) {
  const ModelConfig c;
  const auto b = BoundParams::frozen(init_params(c, 1));
  EXPECT_EQ(embed(ag::constant(random_tensor({55, 6}, 3)), b, c).shape(), (Shape{6, 55, 36}));
}

TEST(Embed, ColumnLocality) {
  const ModelConfig c = small_config();
  const auto b = BoundParams::frozen(init_params(c, 4));
  Tensor x = random_tensor({3, 6}, 5);
  const Tensor e0 = embed(ag::constant(x), b, c).value();
  for (std::size_t r = 0; r < 3; ++r) x.at(r, 2) += 0.7;
  const Tensor e1 = embed(ag::constant(x), b, c).value();
  for (std::size_t f = 0; f < 6; ++f) {
    double diff = 0.0;
    for (std::size_t i = 0; i < 3 * 8; ++i) diff = std::max(diff, std::abs(e0[f * 24 + i] - e1[f * 24 + i]));
    if (f == 2) {
      EXPECT_GT(diff, 0.0);
    } else {
      EXPECT_EQ(diff, 0.0) << "feature " << f;
    }
  }
  EXPECT_THROW(embed(ag::constant(random_tensor({3, 5}, 6)), b, c), DimensionError);
}

TEST(Forward, OutputShapes) {
  for (Variant v : {Variant::kFull, Variant::kFeatureOnly, Variant::kMlpOnly}) {
    ModelConfig c;
    c.variant = v;
    const ParamStore p = init_params(c, 7);
    for (std::size_t b : {1u, 2u, 7u, 55u}) {
      EXPECT_EQ(forward(random_tensor({b, 6}, b), p, c).shape(), (Shape{b, 1}));
    }
  }
}

TEST(Forward, TracesEveryLoopAndStochasticWeights) {
  const ModelConfig c;
  const auto b = BoundParams::frozen(init_params(c, 8));
  ForwardTrace trace;
  trace.keep_weights = true;
  forward(ag::constant(random_tensor({5, 6}, 9, -3, 3)), b, c, nullptr, &trace);
  EXPECT_EQ(trace.feature_blocks, 4);
  EXPECT_EQ(trace.sample_blocks, 4);
  ASSERT_EQ(trace.feature_weights.size(), 4u);
  EXPECT_EQ(trace.feature_weights[0].shape(), (Shape{5 * 4, 6, 6}));
  EXPECT_EQ(trace.sample_weights[0].shape(), (Shape{6 * 4, 5, 5}));
  for (const auto* set : {&trace.feature_weights, &trace.sample_weights}) {
    for (const Tensor& w : *set) {
      const std::size_t n = w.shape().back();
      for (std::size_t r = 0; r < w.size() / n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += w[r * n + j];
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(Forward, SingleSampleAttentionIsTrivial) {
  const ModelConfig c = small_config();
  const auto b = BoundParams::frozen(init_params(c, 10));
  ForwardTrace trace;
  trace.keep_weights = true;
  forward(ag::constant(random_tensor({1, 6}, 11)), b, c, nullptr, &trace);
  for (const Tensor& w : trace.sample_weights) {
    for (double v : w.values()) EXPECT_EQ(v, 1.0);
  }
}

// Reorders axis `axis` of a rank-3 tensor by perm.
Tensor permute_axis(const Tensor& t, int axis, const std::vector<std::size_t>& perm) {
  const Shape& s = t.shape();
  Tensor out(s);
  for (std::size_t a = 0; a < s[0]; ++a)
    for (std::size_t b = 0; b < s[1]; ++b)
      for (std::size_t c = 0; c < s[2]; ++c) {
        std::size_t src[3] = {a, b, c};
        src[axis] = perm[src[axis]];
        out[(a * s[1] + b) * s[2] + c] = t[(src[0] * s[1] + src[1]) * s[2] + src[2]];
      }
  return out;
}

TEST(Forward, FeatureBranchEquivariantToSamplePermutation) {
  const ModelConfig c;
  const auto b = BoundParams::frozen(init_params(c, 12));
  const Tensor e = random_tensor({6, 7, 36}, 13);
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  const Tensor y = feature_attention(ag::constant(e), b, c).value();
  const Tensor yp = feature_attention(ag::constant(permute_axis(e, 1, perm)), b, c).value();
  EXPECT_LT(max_abs_diff(yp, permute_axis(y, 1, perm)), 1e-9);
}

TEST(Forward, SampleBranchEquivariantToFeaturePermutation) {
  const ModelConfig c;
  const auto b = BoundParams::frozen(init_params(c, 14));
  const Tensor e = random_tensor({6, 5, 36}, 15);
  const std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
  const Tensor y = sample_attention(ag::constant(e), b, c).value();
  const Tensor yp = sample_attention(ag::constant(permute_axis(e, 0, perm)), b, c).value();
  EXPECT_LT(max_abs_diff(yp, permute_axis(y, 0, perm)), 1e-9);
}

TEST(Forward, SamplesInteractWithoutContext) {
  const ModelConfig c = small_config();
  const ParamStore p = init_params(c, 16);
  Tensor x = random_tensor({3, 6}, 17);
  const Tensor y0 = forward(x, p, c);
  Tensor dup(Shape{4, 6});
  std::copy(x.data(), x.data() + 18, dup.data());
  std::copy(x.data() + 12, x.data() + 18, dup.data() + 18);
  const Tensor y1 = forward(dup, p, c);
  EXPECT_GT(std::abs(y1[0] - y0[0]), 0.0);
}

TEST(Forward, FrozenContextMakesRowsIndependent) {
  const ModelConfig c;
  const ParamStore p = init_params(c, 18);
  const Tensor ctx = random_tensor({20, 6}, 19);
  const Tensor ab = random_tensor({2, 6}, 20);
  const Tensor a = ab.take_rows(std::vector<std::size_t>{0});
  const Tensor y_ab = forward(ab, p, c, &ctx);
  const Tensor y_a = forward(a, p, c, &ctx);
  EXPECT_NEAR(y_ab[0], y_a[0], 1e-9);
  // The context is actually used.
  const Tensor other = random_tensor({20, 6}, 21);
  EXPECT_GT(std::abs(forward(a, p, c, &other)[0] - y_a[0]), 0.0);
}

TEST(Forward, NoGradContextPathMatchesGraph) {
  const ModelConfig c;
  const BoundParams b = BoundParams::trainable(init_params(c, 18));
  const ContextState state = encode_context(random_tensor({20, 6}, 19), b, c);
  const ag::Var x = ag::constant(random_tensor({7, 6}, 20));
  ForwardTrace graph_trace, fused_trace;
  graph_trace.keep_weights = fused_trace.keep_weights = true;
  const Tensor graph = forward(x, b, c, &state, &graph_trace).value();
  Tensor fused;
  {
    ag::NoGradGuard guard;
    fused = forward(x, b, c, &state, &fused_trace).value();
  }
  for (std::size_t i = 0; i < graph.size(); ++i) EXPECT_NEAR(graph[i], fused[i], 1e-12);
  ASSERT_EQ(graph_trace.sample_weights.size(), fused_trace.sample_weights.size());
  for (std::size_t l = 0; l < graph_trace.sample_weights.size(); ++l) {
    const Tensor& gw = graph_trace.sample_weights[l];
    const Tensor& fw = fused_trace.sample_weights[l];
    ASSERT_EQ(gw.shape(), fw.shape());
    for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_NEAR(gw[i], fw[i], 1e-13);
  }
}

TEST(Forward, ContextOnlyForFullVariant) {
  const ModelConfig c = small_config(Variant::kFeatureOnly);
  const ParamStore p = init_params(c, 22);
  const Tensor ctx = random_tensor({4, 6}, 23);
  EXPECT_THROW(forward(random_tensor({2, 6}, 24), p, c, &ctx), ConfigError);
}

TEST(Forward, GradientsMatchFiniteDifferences) {
  for (Variant v : {Variant::kFull, Variant::kFeatureOnly, Variant::kMlpOnly}) {
    const ModelConfig c = small_config(v);
    BoundParams b = BoundParams::trainable(init_params(c, 25));
    const ag::Var x = ag::parameter(random_tensor({3, 6}, 26));
    std::vector<ag::Var> leaves{x};
    for (std::size_t i = 0; i < b.size(); ++i) leaves.push_back(b.var(i));
    const auto r = testing::check_gradients(
        [&] { return testing::weighted_sum(forward(x, b, c), 27); }, leaves);
    EXPECT_LT(r.max_rel_error, 1e-4) << variant_name(v) << " worst " << r.worst;
  }
}

TEST(Forward, GradientsThroughContext) {
  const ModelConfig c = small_config();
  BoundParams b = BoundParams::trainable(init_params(c, 28));
  const Tensor ctx = random_tensor({5, 6}, 29);
  const ag::Var x = ag::constant(random_tensor({2, 6}, 30));
  std::vector<ag::Var> leaves;
  for (std::size_t i = 0; i < b.size(); ++i) leaves.push_back(b.var(i));
  const auto r = testing::check_gradients(
      [&] {
        const ContextState state = encode_context(ctx, b, c);
        return testing::weighted_sum(forward(x, b, c, &state), 31);
      },
      leaves);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(TrainedModel, ZeroHeadPredictsTargetMean) {
  const ModelConfig c = small_config();
  ParamStore p = init_params(c, 32);
  for (const char* n : {"head.W4", "head.b4"}) p.at(n).fill(0.0);
  const Tensor raw = random_tensor({30, 6}, 33, 1.0, 5.0);
  TargetTransform t;
  t.mean = 512.0;
  t.std = 80.0;
  TrainedModel m(c, p, FeatureTransform::fit(raw), t, raw, raw);
  for (double y : m.predict(random_tensor({4, 6}, 34, 1.0, 5.0))) EXPECT_DOUBLE_EQ(y, 512.0);
}

TEST(TrainedModel, PredictOneMatchesBatch) {
  const ModelConfig c = small_config();
  const Tensor raw = random_tensor({30, 6}, 35, 1.0, 5.0);
  TrainedModel m(c, init_params(c, 36), FeatureTransform::fit(raw), TargetTransform{500.0, 50.0},
                 raw, raw);
  const Tensor q = random_tensor({3, 6}, 37, 1.0, 5.0);
  const auto batch = m.predict(q);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(m.predict_one(q.row(i)), batch[i], 1e-9);
}

TEST(TrainedModel, FullVariantNeedsContext) {
  const ModelConfig c = small_config();
  const Tensor raw = random_tensor({30, 6}, 38, 1.0, 5.0);
  EXPECT_THROW(TrainedModel(c, init_params(c, 39), FeatureTransform::fit(raw),
                            TargetTransform{500.0, 50.0}, Tensor{}, raw),
               Error);
}

}  // namespace
}  // namespace datt
