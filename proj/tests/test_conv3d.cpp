#include "logonet/conv3d.hpp"
#include "test_util.hpp"

using logonet::ArgumentError;
using logonet::Conv3dSpec;
using logonet::Rng;
using logonet::Shape5;
using logonet::ShapeError;
using logonet::Tensor;

using logotest::conv_oracle;
using logotest::OracleOut;

namespace {

Conv3dSpec random_spec(Rng& rng, bool force_depthwise) {
  Conv3dSpec sp;
  if (force_depthwise) {
    const std::int64_t c = rng.uniform_int(1, 4);
    sp.groups = c;
    sp.in_channels = c;
    sp.out_channels = c;
  } else {
    sp.groups = rng.uniform_int(1, 3);
    sp.in_channels = sp.groups * rng.uniform_int(1, 3);
    sp.out_channels = sp.groups * rng.uniform_int(1, 3);
  }
  for (int i = 0; i < 3; ++i) {
    sp.kernel[i] = rng.uniform_int(1, 4);
    sp.stride[i] = rng.uniform_int(1, 3);
    sp.padding[i] = rng.uniform_int(0, 2);
    sp.dilation[i] = rng.uniform_int(1, 2);
  }
  sp.bias = rng.bernoulli(0.7);
  return sp;
}

Shape5 random_input_shape(const Conv3dSpec& sp, Rng& rng) {
  Shape5 s{rng.uniform_int(1, 2), sp.in_channels, 0, 0, 0};
  for (int i = 0; i < 3; ++i) {
    // Guarantees at least one valid placement even with zero padding.
    s[2 + i] = sp.dilation[i] * (sp.kernel[i] - 1) + 1 + rng.uniform_int(0, 3);
  }
  return s;
}

}  // namespace

TEST_CASE("conv3d matches the padded-buffer oracle across a spec grid", "[conv3d]") {
  Rng rng(101);
  int depthwise_seen = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const bool dw = trial % 5 == 4;
    depthwise_seen += dw ? 1 : 0;
    const Conv3dSpec sp = random_spec(rng, dw);
    const Shape5 xs = random_input_shape(sp, rng);
    auto x = Tensor<double>::randn(xs, rng);
    auto w = Tensor<double>::randn(sp.weight_shape(), rng);
    Tensor<double> b;
    if (sp.bias) b = Tensor<double>::randn({1, sp.out_channels, 1, 1, 1}, rng);

    logonet::cost::Recorder rec;
    logonet::cost::current() = &rec;
    auto y = logonet::conv3d(x, w, b, sp);
    logonet::cost::current() = nullptr;

    const OracleOut ref = conv_oracle(x, w, sp.bias ? &b : nullptr, sp);
    INFO("trial " << trial << " in=" << logonet::shape_str(xs)
                  << " w=" << logonet::shape_str(sp.weight_shape()) << " groups=" << sp.groups);
    REQUIRE(y.shape() == ref.shape);
    double max_diff = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      max_diff = std::max(max_diff, std::abs(y.data()[i] - ref.values[i]));
    }
    REQUIRE(max_diff < 1e-12);

    // Instrumented tap count == analytic formula == recorded MACs.
    const logonet::ConvCost cc = logonet::count_conv3d(sp, xs);
    REQUIRE(ref.multiplies == cc.macs);
    REQUIRE(rec.rows.size() == 1);
    REQUIRE(rec.rows[0].macs == cc.macs);
    REQUIRE(rec.rows[0].params == sp.param_count());
    REQUIRE(rec.rows[0].elementwise ==
            (sp.bias ? static_cast<std::uint64_t>(y.numel()) : std::uint64_t{0}));
  }
  REQUIRE(depthwise_seen == 10);
}

TEST_CASE("output extent formula matches placement enumeration", "[conv3d]") {
  for (std::int64_t k = 1; k <= 5; ++k)
    for (std::int64_t s = 1; s <= 3; ++s)
      for (std::int64_t p = 0; p <= 2; ++p)
        for (std::int64_t d = 1; d <= 2; ++d)
          for (std::int64_t in = 1; in <= 12; ++in) {
            const std::int64_t pin = in + 2 * p;
            std::int64_t brute = 0;
            while (brute * s + d * (k - 1) <= pin - 1) ++brute;
            if (brute == 0) continue;
            REQUIRE(Conv3dSpec::out_extent(in, k, s, p, d) == brute);
          }
}

TEST_CASE("pointwise identity kernel reproduces the input bitwise", "[conv3d]") {
  Rng rng(7);
  Conv3dSpec sp;
  sp.in_channels = 3;
  sp.out_channels = 3;
  sp.bias = false;
  auto x = Tensor<double>::randn({2, 3, 4, 5, 6}, rng);
  auto w = Tensor<double>::zeros(sp.weight_shape());
  for (std::int64_t c = 0; c < 3; ++c) w.at(c, c, 0, 0, 0) = 1.0;
  auto y = logonet::conv3d(x, w, Tensor<double>(), sp);
  REQUIRE(y.vec() == x.vec());
}

TEST_CASE("depthwise path agrees with the block-diagonal dense conv", "[conv3d]") {
  Rng rng(31);
  Conv3dSpec dw;
  dw.in_channels = 4;
  dw.out_channels = 4;
  dw.groups = 4;
  dw.kernel = {3, 3, 3};
  dw.padding = {1, 1, 1};
  auto x = Tensor<double>::randn({2, 4, 5, 5, 5}, rng);
  auto w = Tensor<double>::randn(dw.weight_shape(), rng);
  auto b = Tensor<double>::randn({1, 4, 1, 1, 1}, rng);
  auto y_dw = logonet::conv3d(x, w, b, dw);

  Conv3dSpec dense = dw;
  dense.groups = 1;
  auto wd = Tensor<double>::zeros(dense.weight_shape());
  for (std::int64_t c = 0; c < 4; ++c)
    for (std::int64_t kz = 0; kz < 3; ++kz)
      for (std::int64_t ky = 0; ky < 3; ++ky)
        for (std::int64_t kv = 0; kv < 3; ++kv)
          wd.at(c, c, kz, ky, kv) = w.at(c, 0, kz, ky, kv);
  auto y_dense = logonet::conv3d(x, wd, b, dense);

  REQUIRE(y_dw.shape() == y_dense.shape());
  for (std::int64_t i = 0; i < y_dw.numel(); ++i) {
    REQUIRE(std::abs(y_dw.data()[i] - y_dense.data()[i]) < 1e-12);
  }
}

TEST_CASE("conv3d gradients match finite differences", "[conv3d]") {
  struct Case {
    Conv3dSpec sp;
    Shape5 xs;
  };
  std::vector<Case> cases;
  {
    Conv3dSpec sp;
    sp.in_channels = 2;
    sp.out_channels = 3;
    sp.kernel = {3, 3, 3};
    sp.padding = {1, 1, 1};
    cases.push_back({sp, {2, 2, 5, 5, 5}});
  }
  {
    Conv3dSpec sp;
    sp.in_channels = 2;
    sp.out_channels = 2;
    sp.kernel = {3, 2, 3};
    sp.stride = {2, 1, 2};
    sp.padding = {2, 1, 0};
    sp.dilation = {2, 1, 2};
    cases.push_back({sp, {1, 2, 7, 6, 7}});
  }
  {
    Conv3dSpec sp;
    sp.in_channels = 3;
    sp.out_channels = 3;
    sp.groups = 3;
    sp.kernel = {5, 5, 5};
    sp.padding = {2, 2, 2};
    cases.push_back({sp, {1, 3, 6, 6, 6}});
  }
  {
    Conv3dSpec sp;
    sp.in_channels = 4;
    sp.out_channels = 2;
    sp.groups = 2;
    sp.kernel = {1, 3, 1};
    sp.padding = {0, 1, 0};
    cases.push_back({sp, {2, 4, 3, 4, 3}});
  }

  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
      Rng rng(seed * 100 + ci);
      const auto& sp = cases[ci].sp;
      auto x = logotest::randn_leaf(cases[ci].xs, rng);
      auto w = logotest::randn_leaf(sp.weight_shape(), rng, 0.5);
      auto b = logotest::randn_leaf({1, sp.out_channels, 1, 1, 1}, rng, 0.5);
      const Shape5 os = sp.out_shape(cases[ci].xs);
      auto weights = logotest::random_weights<double>(logonet::numel(os), rng);
      auto make_loss = [&]() {
        return logotest::weighted_sum(logonet::conv3d(x, w, b, sp), weights);
      };
      INFO("case " << ci << " seed " << seed);
      logotest::fd_check({&x, &w, &b}, make_loss, rng);
    }
  }
}

TEST_CASE("bias-free layers keep bias undefined and cost rows consistent", "[conv3d]") {
  Rng rng(77);
  Conv3dSpec sp;
  sp.in_channels = 2;
  sp.out_channels = 4;
  sp.kernel = {3, 3, 3};
  sp.padding = {1, 1, 1};
  sp.bias = false;
  logonet::Conv3dLayer<double> layer(sp, rng);
  REQUIRE_FALSE(layer.bias.defined());
  REQUIRE(sp.param_count() == static_cast<std::uint64_t>(layer.weight.numel()));

  logonet::cost::Recorder rec;
  logonet::cost::current() = &rec;
  auto x = Tensor<double>::randn({1, 2, 4, 4, 4}, rng);
  auto y = layer.forward(x);
  logonet::cost::current() = nullptr;
  REQUIRE(rec.rows.size() == 1);
  REQUIRE(rec.rows[0].elementwise == 0);
  REQUIRE(rec.rows[0].params == sp.param_count());
  REQUIRE(y.shape() == Shape5{1, 4, 4, 4, 4});
}

TEST_CASE("dry-run forward records identical rows and emits zeros", "[conv3d]") {
  Rng rng(88);
  Conv3dSpec sp;
  sp.in_channels = 3;
  sp.out_channels = 5;
  sp.kernel = {3, 3, 3};
  sp.stride = {2, 2, 2};
  sp.padding = {1, 1, 1};
  logonet::Conv3dLayer<double> layer(sp, rng);
  auto x = Tensor<double>::randn({2, 3, 6, 6, 6}, rng);

  logonet::cost::Recorder real;
  logonet::cost::current() = &real;
  auto y = layer.forward(x);
  logonet::cost::current() = nullptr;

  logonet::cost::Recorder dry;
  dry.dry_run = true;
  logonet::cost::current() = &dry;
  auto yd = layer.forward(x);
  logonet::cost::current() = nullptr;

  REQUIRE(real.rows.size() == dry.rows.size());
  for (std::size_t i = 0; i < real.rows.size(); ++i) {
    REQUIRE(real.rows[i].kind == dry.rows[i].kind);
    REQUIRE(real.rows[i].out_shape == dry.rows[i].out_shape);
    REQUIRE(real.rows[i].params == dry.rows[i].params);
    REQUIRE(real.rows[i].macs == dry.rows[i].macs);
    REQUIRE(real.rows[i].elementwise == dry.rows[i].elementwise);
  }
  REQUIRE(yd.shape() == y.shape());
  for (double v : yd.vec()) REQUIRE(v == 0.0);
  bool any_nonzero = false;
  for (double v : y.vec()) any_nonzero = any_nonzero || v != 0.0;
  REQUIRE(any_nonzero);
}

TEST_CASE("He initialization has the documented scale", "[conv3d]") {
  Rng rng(99);
  Conv3dSpec sp;
  sp.in_channels = 64;
  sp.out_channels = 64;
  sp.kernel = {3, 3, 3};
  sp.padding = {1, 1, 1};
  logonet::Conv3dLayer<double> layer(sp, rng);
  const double expect_std = std::sqrt(2.0 / (64.0 * 27.0));
  double sum = 0.0, sq = 0.0;
  for (double v : layer.weight.vec()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(layer.weight.numel());
  const double mean = sum / n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  REQUIRE(std::abs(mean) < 5e-4);
  REQUIRE(std::abs(stddev - expect_std) / expect_std < 0.02);
  for (double v : layer.bias.vec()) REQUIRE(v == 0.0);
}

TEST_CASE("conv3d validates shapes and spec arguments", "[conv3d]") {
  Rng rng(5);
  Conv3dSpec sp;
  sp.in_channels = 2;
  sp.out_channels = 2;
  auto x = Tensor<double>::randn({1, 3, 4, 4, 4}, rng);
  auto w = Tensor<double>::randn(sp.weight_shape(), rng);
  auto b = Tensor<double>::randn({1, 2, 1, 1, 1}, rng);
  REQUIRE_THROWS_AS(logonet::conv3d(x, w, b, sp), ShapeError);

  auto x2 = Tensor<double>::randn({1, 2, 4, 4, 4}, rng);
  auto wbad = Tensor<double>::randn({2, 2, 3, 3, 3}, rng);
  REQUIRE_THROWS_AS(logonet::conv3d(x2, wbad, b, sp), ShapeError);

  auto bbad = Tensor<double>::randn({1, 3, 1, 1, 1}, rng);
  REQUIRE_THROWS_AS(logonet::conv3d(x2, w, bbad, sp), ShapeError);

  Conv3dSpec nb = sp;
  nb.bias = false;
  REQUIRE_THROWS_AS(logonet::conv3d(x2, w, b, nb), ArgumentError);

  Conv3dSpec bad = sp;
  bad.groups = 3;
  REQUIRE_THROWS_AS(bad.validate(), ArgumentError);
  Conv3dSpec bad2 = sp;
  bad2.stride = {0, 1, 1};
  REQUIRE_THROWS_AS(bad2.validate(), ArgumentError);

  Conv3dSpec shrink;
  shrink.in_channels = 2;
  shrink.out_channels = 2;
  shrink.kernel = {7, 7, 7};
  auto tiny = Tensor<double>::randn({1, 2, 3, 3, 3}, rng);
  auto ws = Tensor<double>::randn(shrink.weight_shape(), rng);
  auto bs = Tensor<double>::randn({1, 2, 1, 1, 1}, rng);
  REQUIRE_THROWS_AS(logonet::conv3d(tiny, ws, bs, shrink), ShapeError);
}
