#include <cmath>
#include <fstream>
#include <functional>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "medroute/core/random.hpp"
#include "medroute/numerics/gradcheck.hpp"
#include "medroute/numerics/ops.hpp"
#include "medroute/numerics/optim.hpp"
#include "medroute/numerics/tape.hpp"
#include "test_util.hpp"

namespace medroute::numerics {
namespace {

using DTape = BasicTape<double>;

DTensor random_tensor(Shape shape, core::Rng& rng, double scale = 1.0) {
  DTensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * (2.0 * core::uniform01(rng) - 1.0);
  return t;
}

// ---- softmax ----

TEST(SoftmaxRow, Symmetric) {
  const auto p = softmax_row(Tensor::vector({0.0f, 0.0f}));
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(SoftmaxRow, LargeEqualLogitsNoOverflow) {
  const auto p = softmax_row(Tensor::vector({1000.0f, 1000.0f, 1000.0f}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], 1.0 / 3.0, 1e-7);
}

TEST(SoftmaxRow, MaskedEntryExactlyZero) {
  const auto p = softmax_row(Tensor::vector({0.0f, kMasked}));
  EXPECT_EQ(p[0], 1.0f);
  EXPECT_EQ(p[1], 0.0f);
}

TEST(SoftmaxRow, AllMaskedIsError) {
  EXPECT_THROW(softmax_row(Tensor::vector({kMasked, kMasked})), Error);
}

TEST(MaskedSoftmax, TemperatureSharpens) {
  const std::vector<double> logits{1.0, 2.0, 0.5};
  const std::vector<bool> mask{true, true, true};
  const auto p1 = masked_softmax(logits, mask, 1.0);
  const auto p2 = masked_softmax(logits, mask, 1.0 / 0.7);
  EXPECT_GT(p2[1], p1[1]);
  double total = 0.0;
  for (double v : p2) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

// ---- tensor ----

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor t({2, 3});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_TRUE(all_finite(t));
  t[4] = std::nanf("");
  EXPECT_FALSE(all_finite(t));
}

// ---- tape ----

TEST(TapeBackward, SumOfProductGivesInput) {
  core::Rng rng(1);
  DTensor w = random_tensor({3, 4}, rng);
  const DTensor x = random_tensor({3, 4}, rng);
  DTape tape({&w});
  const Var loss = tape.sum(tape.mul(tape.param(w), tape.constant(x)));
  const auto g = tape.backward(loss);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0], x);
}

TEST(TapeBackward, SoftmaxCrossEntropyIsPMinusOneHot) {
  DTensor logits = DTensor::vector({0.3, -1.2, 2.0, 0.1});
  const std::size_t target = 1;
  auto loss_at = [&](const DTensor& l, std::vector<DTensor>* grads) {
    DTape tape({&l});
    const Var nll = tape.scale(
        tape.masked_log_softmax_pick(tape.param(l), {true, true, true, true}, 1.0, target), -1.0);
    if (grads) *grads = tape.backward(nll);
    return tape.value(nll)[0];
  };
  std::vector<DTensor> g;
  loss_at(logits, &g);
  const auto p = masked_softmax(logits.values(), {true, true, true, true});
  const double h = 1e-3;
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = p[i] - (i == target ? 1.0 : 0.0);
    EXPECT_NEAR(g[0][i], expect, 1e-12);
    DTensor up = logits, down = logits;
    up[i] += h;
    down[i] -= h;
    const double fd = (loss_at(up, nullptr) - loss_at(down, nullptr)) / (2 * h);
    EXPECT_NEAR(g[0][i], fd, 1e-6);
  }
}

TEST(TapeBackward, MaskedEntriesGetZeroGradient) {
  DTensor logits = DTensor::vector({0.3, 5.0, 2.0});
  DTape tape({&logits});
  const Var lp = tape.masked_log_softmax_pick(tape.param(logits), {true, false, true}, 1.0, 0);
  const auto g = tape.backward(lp);
  EXPECT_EQ(g[0][1], 0.0);
  EXPECT_NEAR(std::exp(tape.value(lp)[0]), 1.0 / (1.0 + std::exp(1.7)), 1e-12);
}

TEST(TapeBackward, DisconnectedParameterHasZeroGradient) {
  core::Rng rng(2);
  DTensor used = random_tensor({4}, rng);
  DTensor unused = random_tensor({2, 2}, rng);
  DTape tape({&used, &unused});
  const Var loss = tape.sum(tape.relu(tape.param(used)));
  const auto g = tape.backward(loss);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[1], DTensor::zeros({2, 2}));
}

TEST(TapeBackward, BackwardIntoAccumulatesScaled) {
  core::Rng rng(3);
  DTensor w = random_tensor({5}, rng);
  DTape tape({&w});
  const Var loss = tape.sum(tape.mul(tape.param(w), tape.param(w)));
  std::vector<DTensor> grads{DTensor::zeros({5})};
  tape.backward_into(loss, 0.5, grads);
  tape.backward_into(loss, 0.5, grads);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(grads[0][i], 2.0 * w[i], 1e-12);
}

TEST(TapeShapes, MismatchesThrow) {
  DTape tape;
  const Var a = tape.constant(DTensor::zeros({2, 3}));
  const Var b = tape.constant(DTensor::zeros({2, 3}));
  EXPECT_THROW(tape.matmul(a, b), ShapeError);
  EXPECT_THROW(tape.add(a, tape.constant(DTensor::zeros({3, 3}))), ShapeError);
}

// Each op checked against central differences through a random linear read-out.
struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Var(DTape&, const std::vector<Var>&)> build;
};

class TapeOpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(TapeOpGradient, MatchesFiniteDifferences) {
  const auto& oc = GetParam();
  core::Rng rng(42);
  std::vector<DTensor> params;
  for (const auto& s : oc.shapes) params.push_back(random_tensor(s, rng));
  DTensor readout;
  {
    DTape probe;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(probe.constant(p));
    readout = random_tensor(probe.value(oc.build(probe, vars)).shape(), rng);
  }
  const LossFunction f = [&](std::span<const DTensor> values, std::vector<DTensor>* grads) {
    std::vector<const DTensor*> ptrs;
    for (const auto& v : values) ptrs.push_back(&v);
    DTape tape(ptrs);
    std::vector<Var> vars;
    for (const auto& v : values) vars.push_back(tape.param(v));
    const Var out = oc.build(tape, vars);
    const Var loss = tape.sum(tape.mul(out, tape.constant(readout)));
    if (grads) *grads = tape.backward(loss);
    return tape.value(loss)[0];
  };
  std::vector<std::string> names(params.size(), oc.name);
  GradcheckOptions opts;
  opts.h = 1e-6;
  const auto report = gradcheck(f, params, names, opts);
  EXPECT_LT(report.max_rel_error, 1e-6) << oc.name;
}

std::vector<OpCase> op_cases() {
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](DTape& t, const auto& v) { return t.matmul(v[0], v[1]); }},
      {"matmul_vec", {{4}, {4, 3}}, [](DTape& t, const auto& v) { return t.matmul(v[0], v[1]); }},
      {"add", {{2, 3}, {2, 3}}, [](DTape& t, const auto& v) { return t.add(v[0], v[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](DTape& t, const auto& v) { return t.mul(v[0], v[1]); }},
      {"add_row", {{3, 4}, {4}}, [](DTape& t, const auto& v) { return t.add_row(v[0], v[1]); }},
      {"scale", {{5}}, [](DTape& t, const auto& v) { return t.scale(v[0], -1.7); }},
      {"relu", {{4, 3}}, [](DTape& t, const auto& v) { return t.relu(v[0]); }},
      {"layernorm",
       {{3, 6}, {6}, {6}},
       [](DTape& t, const auto& v) { return t.layernorm(v[0], v[1], v[2]); }},
      {"attention",
       {{5, 8}, {5, 8}, {5, 8}},
       [](DTape& t, const auto& v) { return t.attention(v[0], v[1], v[2], 2); }},
      {"mean_rows", {{4, 3}}, [](DTape& t, const auto& v) { return t.mean_rows(v[0]); }},
      {"gather_rows",
       {{4, 3}},
       [](DTape& t, const auto& v) { return t.gather_rows(v[0], {2, 0, 2, 3}); }},
      {"concat_rows",
       {{3}, {2, 3}, {3}},
       [](DTape& t, const auto& v) { return t.concat_rows(std::span<const Var>(v)); }},
      {"concat",
       {{2}, {3}},
       [](DTape& t, const auto& v) { return t.concat(std::span<const Var>(v)); }},
      {"row", {{4, 3}}, [](DTape& t, const auto& v) { return t.row(v[0], 2); }},
      {"slice_rows", {{5, 2}}, [](DTape& t, const auto& v) { return t.slice_rows(v[0], 1, 3); }},
      {"select", {{6}}, [](DTape& t, const auto& v) { return t.select(v[0], {5, 1, 1}); }},
      {"cosine_logits",
       {{6}, {4, 6}, {1}},
       [](DTape& t, const auto& v) { return t.cosine_logits(v[0], v[1], v[2], 0.01); }},
      {"log_softmax_pick",
       {{5}},
       [](DTape& t, const auto& v) {
         return t.masked_log_softmax_pick(v[0], {true, false, true, true, true}, 1.0 / 0.7, 3);
       }},
  };
}

INSTANTIATE_TEST_SUITE_P(AllOps, TapeOpGradient, ::testing::ValuesIn(op_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(CosineLogits, TemperatureClampedBelow) {
  DTape tape;
  const Var q = tape.constant(DTensor::vector({1.0, 0.0}));
  const Var keys = tape.constant(DTensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  const Var out = tape.cosine_logits(q, keys, tape.constant(DTensor::scalar(std::log(1e-4))), 0.01);
  EXPECT_NEAR(tape.value(out)[0], 100.0, 1e-9);
  EXPECT_NEAR(tape.value(out)[1], 0.0, 1e-12);
}

// ---- block ----

BlockWeights zero_projection_block(std::size_t d, std::size_t hidden) {
  core::Rng rng(5);
  auto w = init_block<float>(d, hidden, rng);
  for (auto* t : {&w.wq, &w.wk, &w.wv, &w.wo, &w.w1, &w.w2}) t->fill(0.0f);
  for (auto* t : {&w.bq, &w.bv, &w.bo, &w.b1, &w.b2}) t->fill(0.0f);
  return w;
}

TEST(BlockForward, ZeroProjectionsAreIdentity) {
  core::Rng rng(6);
  Tensor x({4, 8});
  for (auto& v : x.values()) v = static_cast<float>(core::uniform01(rng) * 4 - 2);
  const auto y = block_forward(zero_projection_block(8, 16), x, 2);
  EXPECT_EQ(y, x);
}

TEST(BlockForward, SingleTokenIsFinite) {
  core::Rng rng(7);
  const auto w = init_block<float>(8, 16, rng);
  Tensor x({1, 8});
  for (auto& v : x.values()) v = static_cast<float>(core::uniform01(rng));
  const auto y = block_forward(w, x, 4);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(all_finite(y));
}

TEST(BlockForward, SingleTokenAttendsToItself) {
  // With T = 1 the attention output is exactly the value projection of the token.
  DTape tape;
  core::Rng rng(8);
  const auto q = random_tensor({1, 8}, rng);
  const auto k = random_tensor({1, 8}, rng);
  const auto v = random_tensor({1, 8}, rng);
  const Var out = tape.attention(tape.constant(q), tape.constant(k), tape.constant(v), 4);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(tape.value(out)[i], v[i], 1e-12);
}

TEST(BlockForward, MatchesGoldenFile) {
  core::Rng rng(20240601);
  const auto w = init_block<float>(16, 32, rng);
  Tensor x({6, 16});
  for (auto& v : x.values()) v = static_cast<float>(2.0 * core::uniform01(rng) - 1.0);
  const auto y = block_forward(w, x, 4);

  const auto path = medroute::testing::data_dir() / "golden" / "block_forward.json";
  if (std::getenv("MEDROUTE_UPDATE_GOLDEN")) {
    std::ofstream(path) << nlohmann::json{{"shape", y.shape()}, {"values", y.values()}}.dump(1)
                        << '\n';
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << "missing golden file " << path;
  const auto golden = nlohmann::json::parse(in);
  ASSERT_EQ(golden["shape"].get<Shape>(), y.shape());
  const auto values = golden["values"].get<std::vector<float>>();
  ASSERT_EQ(values.size(), y.size());
  // Scalar and AVX2 kernels differ by rounding only.
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], values[i], 2e-5) << i;
}

TEST(BlockForward, TapeGradientMatchesFiniteDifferences) {
  core::Rng rng(9);
  auto w = init_block<double>(8, 12, rng);
  const DTensor x = random_tensor({3, 8}, rng);
  const DTensor readout = random_tensor({3, 8}, rng);
  std::vector<DTensor> init;
  std::vector<std::string> names;
  w.for_each([&](const char* name, const DTensor& t) {
    init.push_back(t);
    names.push_back(name);
  });
  // Random gains and biases so no group sits at a symmetric point.
  for (auto& t : init)
    for (auto& v : t.values()) v += 0.3 * (core::uniform01(rng) - 0.5);
  const LossFunction f = [&](std::span<const DTensor> values, std::vector<DTensor>* grads) {
    auto p = w;
    std::size_t i = 0;
    p.for_each([&](const char*, DTensor& t) { t = values[i++]; });
    std::vector<const DTensor*> ptrs;
    p.for_each([&](const char*, const DTensor& t) { ptrs.push_back(&t); });
    DTape tape(ptrs);
    const Var y = block_forward(tape, p, tape.constant(x), 2);
    const Var loss = tape.sum(tape.mul(y, tape.constant(readout)));
    if (grads) *grads = tape.backward(loss);
    return tape.value(loss)[0];
  };
  const auto report = gradcheck(f, init, names, {});
  EXPECT_LT(report.max_rel_error, 1e-5);
}

// ---- AdamW ----

TEST(AdamW, ZeroGradNoDecayUnchanged) {
  Tensor w = Tensor::vector({1.0f, -2.0f, 3.0f});
  const Tensor before = w;
  std::vector<Tensor*> params{&w};
  AdamWState st({.lr = 0.1, .weight_decay = 0.0}, params);
  const std::vector<Tensor> grads{Tensor::zeros({3})};
  for (int i = 0; i < 5; ++i) st.step(params, grads);
  EXPECT_EQ(w, before);
}

TEST(AdamW, HandEvaluatedScalarStep) {
  // m = 0.05, v = 0.00025; bias-corrected m̂ = 0.5, v̂ = 0.25, update = 0.5 / (0.5 + 1e-8).
  // w = 1 - 0.1 * (update + 0.01 * 1).
  Tensor w = Tensor::scalar(1.0f);
  std::vector<Tensor*> params{&w};
  AdamWConfig cfg{.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.01};
  AdamWState st(cfg, params);
  st.step(params, std::vector<Tensor>{Tensor::scalar(0.5f)});
  const double update = 0.5 / (std::sqrt(0.25) + 1e-8);
  const double expect = 1.0 - 0.1 * (update + 0.01 * 1.0);
  EXPECT_NEAR(w[0], expect, 1e-6);
  EXPECT_NEAR(w[0], 0.8990, 1e-4);
  EXPECT_EQ(st.step_count(), 1);
}

TEST(AdamW, DeterministicAcrossRuns) {
  auto run = [] {
    core::Rng rng(10);
    Tensor w({4, 4});
    for (auto& v : w.values()) v = static_cast<float>(core::uniform01(rng));
    std::vector<Tensor*> params{&w};
    AdamWState st({.lr = 0.01}, params);
    for (int s = 0; s < 20; ++s) {
      Tensor g({4, 4});
      for (auto& v : g.values()) v = static_cast<float>(core::uniform01(rng) - 0.5);
      st.step(params, std::vector<Tensor>{g});
    }
    return w;
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamW, NonFiniteGradientLeavesParamsUntouched) {
  Tensor a = Tensor::vector({1.0f, 2.0f});
  Tensor b = Tensor::vector({3.0f});
  std::vector<Tensor*> params{&a, &b};
  AdamWState st({.lr = 0.1}, params);
  const std::vector<Tensor> grads{Tensor::vector({0.1f, 0.1f}), Tensor::vector({INFINITY})};
  EXPECT_THROW(st.step(params, grads), Error);
  EXPECT_EQ(a, Tensor::vector({1.0f, 2.0f}));
  EXPECT_EQ(st.step_count(), 0);
}

// ---- gradcheck ----

LossFunction quadratic() {
  return [](std::span<const DTensor> p, std::vector<DTensor>* grads) {
    double s = 0.0;
    for (double v : p[0].values()) s += v * v;
    if (grads) {
      grads->assign(1, p[0]);
      for (auto& v : (*grads)[0].values()) v *= 2.0;
    }
    return s;
  };
}

TEST(Gradcheck, QuadraticAtOnes) {
  DTensor w({10});
  w.fill(1.0);
  const std::vector<std::string> names{"w"};
  const auto r = gradcheck(quadratic(), {w}, names, {});
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coordinates, 10u);
  ASSERT_EQ(r.groups.size(), 1u);
  EXPECT_EQ(r.groups[0].name, "w");
}

TEST(Gradcheck, LargeStepOnCurvedLossDegrades) {
  // f = sum w^4: central difference error is 4 h^2 w per coordinate.
  const LossFunction quartic = [](std::span<const DTensor> p, std::vector<DTensor>* grads) {
    double s = 0.0;
    for (double v : p[0].values()) s += v * v * v * v;
    if (grads) {
      grads->assign(1, p[0]);
      for (auto& v : (*grads)[0].values()) v = 4.0 * v * v * v;
    }
    return s;
  };
  DTensor w({4});
  w.fill(1.0);
  const std::vector<std::string> names{"w"};
  double prev = -1.0;
  for (double h : {1e-4, 1e-2, 0.1, 0.5}) {
    const auto r = gradcheck(quartic, {w}, names, {.h = h});
    EXPECT_GT(r.max_rel_error, prev);
    prev = r.max_rel_error;
  }
  EXPECT_GT(prev, 0.05);
}

TEST(Gradcheck, DetectsWrongGradient) {
  const LossFunction wrong = [](std::span<const DTensor> p, std::vector<DTensor>* grads) {
    double s = 0.0;
    for (double v : p[0].values()) s += v * v;
    if (grads) {
      grads->assign(1, p[0]);
      for (auto& v : (*grads)[0].values()) v *= 2.1;
    }
    return s;
  };
  DTensor w({3});
  w.fill(0.7);
  const std::vector<std::string> names{"w"};
  EXPECT_GT(gradcheck(wrong, {w}, names, {}).max_rel_error, 1e-2);
}

TEST(Gradcheck, SamplesAtLeastMinimum) {
  DTensor a({500}), b({300});
  a.fill(0.5);
  b.fill(-0.5);
  const LossFunction f = [](std::span<const DTensor> p, std::vector<DTensor>* grads) {
    double s = 0.0;
    for (const auto& t : p)
      for (double v : t.values()) s += v * v;
    if (grads) {
      grads->assign(p.begin(), p.end());
      for (auto& t : *grads)
        for (auto& v : t.values()) v *= 2.0;
    }
    return s;
  };
  const std::vector<std::string> names{"a", "b"};
  const auto r = gradcheck(f, {a, b}, names, {.min_samples = 100});
  EXPECT_GE(r.coordinates, 100u);
  EXPECT_LT(r.coordinates, 800u);
}

}  // namespace
}  // namespace medroute::numerics
