#include <gtest/gtest.h>

#include <cmath>

#include "datt/errors.hpp"
#include "datt/pipeline.hpp"
#include "datt/shap.hpp"
#include "gradcheck.hpp"

namespace datt {
namespace {

using testing::random_tensor;

BatchModel additive(std::vector<double> a) {
  return [a](const Tensor& rows) {
    std::vector<double> out(rows.rows(), 0.0);
    for (std::size_t r = 0; r < rows.rows(); ++r)
      for (std::size_t j = 0; j < a.size(); ++j) out[r] += a[j] * rows.at(r, j);
    return out;
  };
}

// Products and a max make every coalition matter.
BatchModel interacting() {
  return [](const Tensor& rows) {
    std::vector<double> out(rows.rows());
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      const auto x = rows.row(r);
      out[r] = x[0] * x[1] - 2.0 * x[2] + std::max(x[3], x[4]) * x[5] + std::sin(x[0] + x[4]);
    }
    return out;
  };
}

BatchModel constant_model(double c) {
  return [c](const Tensor& rows) { return std::vector<double>(rows.rows(), c); };
}

BatchModel sum_models(BatchModel f, BatchModel g) {
  return [f, g](const Tensor& rows) {
    auto a = f(rows);
    const auto b = g(rows);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
  };
}

TEST(Coalition, Endpoints) {
  const auto f = interacting();
  const Tensor bg = random_tensor({9, 6}, 1);
  const Tensor x = random_tensor({1, 6}, 2);
  EXPECT_NEAR(coalition_value(f, x.row(0), 0b111111, bg), f(x)[0], 1e-12);
  const auto all = f(bg);
  double mean = 0.0;
  for (double v : all) mean += v;
  EXPECT_NEAR(coalition_value(f, x.row(0), 0, bg), mean / 9, 1e-12);
  for (Coalition s : {0ULL, 5ULL, 63ULL}) {
    EXPECT_DOUBLE_EQ(coalition_value(constant_model(3.5), x.row(0), s, bg), 3.5);
  }
  EXPECT_THROW(coalition_value(f, x.row(0), 1ULL << 6, bg), ContractError);
  EXPECT_THROW(coalition_value(f, x.row(0), 0, Tensor{}), ContractError);
}

TEST(KernelWeight, ClosedForms) {
  EXPECT_NEAR(shapley_kernel_weight(6, 1), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(shapley_kernel_weight(6, 5), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(shapley_kernel_weight(6, 3), 5.0 / (20.0 * 9.0), 1e-15);
  for (std::size_t m = 2; m <= 12; ++m)
    for (std::size_t s = 1; s < m; ++s)
      EXPECT_DOUBLE_EQ(shapley_kernel_weight(m, s), shapley_kernel_weight(m, m - s));
  EXPECT_TRUE(std::isinf(shapley_kernel_weight(6, 0)));
  EXPECT_TRUE(std::isinf(shapley_kernel_weight(6, 6)));
  EXPECT_THROW(shapley_kernel_weight(6, 7), ContractError);
}

TEST(Exact, AdditiveClosedForm) {
  const std::vector<double> a{2.0, -1.0, 0.5, 0.0, 3.0, -0.25};
  const Tensor z = random_tensor({1, 6}, 3);
  const Tensor x = random_tensor({1, 6}, 4);
  const auto e = exact_shapley(additive(a), x.row(0), z);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(e.phi[i], a[i] * (x[i] - z[i]), 1e-12);
  const auto k = kernel_shap(additive(a), x.row(0), z);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(k.phi[i], a[i] * (x[i] - z[i]), 1e-12);
}

TEST(Exact, RejectsTooManyFeatures) {
  const Tensor bg = random_tensor({2, 13}, 5);
  const Tensor x = random_tensor({1, 13}, 6);
  EXPECT_THROW(exact_shapley(constant_model(1), x.row(0), bg), ContractError);
}

TEST(Axioms, Efficiency) {
  const Tensor bg = random_tensor({16, 6}, 7);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = random_tensor({1, 6}, 100 + s);
    EXPECT_NEAR(exact_shapley(interacting(), x.row(0), bg).additivity_residual(), 0.0, 1e-9);
    EXPECT_NEAR(kernel_shap(interacting(), x.row(0), bg).additivity_residual(), 0.0, 1e-9);
  }
}

TEST(Axioms, Symmetry) {
  const BatchModel f = [](const Tensor& rows) {
    std::vector<double> out(rows.rows());
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      const auto x = rows.row(r);
      out[r] = x[0] + x[1] + x[0] * x[1] * x[2];
    }
    return out;
  };
  Tensor bg = random_tensor({6, 3}, 8);
  for (std::size_t r = 0; r < 6; ++r) bg.at(r, 1) = bg.at(r, 0);
  const std::vector<double> x{0.7, 0.7, -0.4};
  for (const auto& e : {exact_shapley(f, x, bg), kernel_shap(f, x, bg)}) {
    EXPECT_NEAR(e.phi[0], e.phi[1], 1e-12);
  }
}

TEST(Axioms, Dummy) {
  const BatchModel f = [](const Tensor& rows) {
    std::vector<double> out(rows.rows());
    for (std::size_t r = 0; r < rows.rows(); ++r) out[r] = std::exp(rows.at(r, 0)) * rows.at(r, 2);
    return out;
  };
  const Tensor bg = random_tensor({10, 4}, 9);
  const Tensor x = random_tensor({1, 4}, 10);
  const auto k = kernel_shap(f, x.row(0), bg);
  EXPECT_NEAR(k.phi[1], 0.0, 1e-9);
  EXPECT_NEAR(k.phi[3], 0.0, 1e-9);
}

TEST(Axioms, Linearity) {
  const BatchModel f = interacting();
  const BatchModel g = additive({1, 2, 3, 4, 5, 6});
  const Tensor bg = random_tensor({8, 6}, 11);
  const Tensor x = random_tensor({1, 6}, 12);
  const auto ef = kernel_shap(f, x.row(0), bg);
  const auto eg = kernel_shap(g, x.row(0), bg);
  const auto efg = kernel_shap(sum_models(f, g), x.row(0), bg);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(efg.phi[i], ef.phi[i] + eg.phi[i], 1e-9);
}

TEST(Axioms, ConstantModelHasNoAttribution) {
  const Tensor bg = random_tensor({4, 6}, 13);
  const Tensor x = random_tensor({1, 6}, 14);
  for (double p : exact_shapley(constant_model(2.0), x.row(0), bg).phi) EXPECT_EQ(p, 0.0);
  for (double p : kernel_shap(constant_model(2.0), x.row(0), bg).phi) EXPECT_NEAR(p, 0.0, 1e-12);
}

TEST(KernelShap, ExhaustiveEqualsExactOnDatt) {
  ModelConfig c;
  c.embed_dim = 8;
  c.heads = 2;
  c.loops = 2;
  c.hidden = {8, 8, 4};
  const Tensor raw = random_tensor({40, 6}, 15, 1.0, 6.0);
  const TrainedModel m(c, init_params(c, 16), FeatureTransform::fit(raw),
                       TargetTransform{500.0, 100.0}, raw, raw.take_rows(std::vector<std::size_t>{0, 3, 5, 7, 9, 11}));
  const BatchModel f = [&m](const Tensor& rows) { return m.predict(rows); };
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor x = random_tensor({1, 6}, 200 + s, 1.0, 6.0);
    const auto ex = exact_shapley(f, x.row(0), m.background_rows());
    const auto ks = kernel_shap(f, x.row(0), m.background_rows());
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(ks.phi[i], ex.phi[i], 1e-6);
  }
}

TEST(KernelShap, SampledApproachesExhaustive) {
  const Tensor bg = random_tensor({8, 6}, 17);
  const Tensor x = random_tensor({1, 6}, 18);
  KernelShapOptions o;
  o.exhaustive = false;
  o.n_samples = 20000;
  const auto sampled = kernel_shap(interacting(), x.row(0), bg, o);
  const auto exact = exact_shapley(interacting(), x.row(0), bg);
  EXPECT_NEAR(sampled.additivity_residual(), 0.0, 1e-9);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(sampled.phi[i], exact.phi[i], 0.05);
  // Same seed, same answer.
  EXPECT_EQ(kernel_shap(interacting(), x.row(0), bg, o).phi, sampled.phi);
}

TEST(KernelShap, RankDeficientSampleIsExplanationError) {
  const Tensor bg = random_tensor({4, 6}, 19);
  const Tensor x = random_tensor({1, 6}, 20);
  KernelShapOptions o;
  o.exhaustive = false;
  o.n_samples = 2;
  EXPECT_THROW(kernel_shap(interacting(), x.row(0), bg, o), ExplanationError);
}

TEST(KernelShap, JsonShape) {
  const Tensor bg = random_tensor({3, 2}, 21);
  const std::vector<double> x{1.0, 2.0};
  const auto e = kernel_shap(additive({1, 1}), x, bg, {}, {"a", "b"});
  const nlohmann::json j = e;
  EXPECT_TRUE(j["phi"].contains("a"));
  EXPECT_EQ(j["phi"].size(), 2u);
  EXPECT_DOUBLE_EQ(j["prediction"].get<double>(), 3.0);
}

TEST(GlobalImportance, RanksSingleActiveFeature) {
  const Tensor bg = random_tensor({5, 6}, 22);
  const Tensor rows = random_tensor({7, 6}, 23);
  const auto g = global_importance(additive({0, 0, 0, 4.0, 0, 0}), rows, bg);
  EXPECT_EQ(g.ranking[0], 3u);
  for (std::size_t i = 0; i < 6; ++i) {
    if (i != 3) EXPECT_NEAR(g.mean_abs_phi[i], 0.0, 1e-12);
  }
  const auto zero = global_importance(constant_model(1.0), rows, bg);
  for (double v : zero.mean_abs_phi) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_NE(format_importance(g).find("x3"), std::string::npos);
}

ShapExplanation published_example() {
  ShapExplanation e;
  e.base_value = 503.146;
  e.feature_names = {"pd_g_cm3", "w_pct", "F200_pct", "Gs", "LL_pct", "PL_pct"};
  e.phi = {74.95, 65.57, -168.96, 0.0, 29.86, -90.96};
  e.prediction = 413.611;
  return e;
}

TEST(Waterfall, PublishedExampleAddsUp) {
  const ShapExplanation e = published_example();
  EXPECT_NEAR(e.additivity_residual(), 0.005, 1e-9);
  EXPECT_LT(std::abs(e.additivity_residual()), 0.01);
}

TEST(Waterfall, OrderedByMagnitude) {
  const std::string w = format_waterfall(published_example());
  const auto pos = [&](const char* s) { return w.find(s); };
  EXPECT_LT(pos("E[f(X)]"), pos("F200_pct"));
  EXPECT_LT(pos("F200_pct"), pos("PL_pct"));
  EXPECT_LT(pos("PL_pct"), pos("pd_g_cm3"));
  EXPECT_LT(pos("pd_g_cm3"), pos("w_pct"));
  EXPECT_LT(pos("w_pct"), pos("LL_pct"));
  EXPECT_LT(pos("LL_pct"), pos("Gs"));
  EXPECT_NE(w.find("413.606"), std::string::npos);
  EXPECT_NE(w.find("413.611"), std::string::npos);
}

}  // namespace
}  // namespace datt
