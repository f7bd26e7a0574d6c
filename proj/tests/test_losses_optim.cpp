#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "logonet/losses.hpp"
#include "logonet/optim.hpp"
#include "test_util.hpp"

using logonet::AdamW;
using logonet::AdamWConfig;
using logonet::ArgumentError;
using logonet::ce_loss;
using logonet::cosine_warmup_lr;
using logonet::dice_ce_loss;
using logonet::dice_loss;
using logonet::dice_metric;
using logonet::DiceCeConfig;
using logonet::one_hot;
using logonet::Parameter;
using logonet::ParamList;
using logonet::Rng;
using logonet::Shape5;
using logonet::ShapeError;
using logonet::softmax_channel;
using logonet::Tensor;
using logotest::fd_check;
using logotest::random_weights;
using logotest::weighted_sum;

namespace {

Tensor<std::uint8_t> random_labels(const Shape5& s, std::int64_t num_classes,
                                   std::uint64_t seed) {
  Tensor<std::uint8_t> t = Tensor<std::uint8_t>::zeros(s);
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(num_classes)));
  }
  return t;
}

Tensor<double> probs_leaf(const Shape5& s, std::uint64_t seed) {
  Tensor<double> t = Tensor<double>::zeros(s);
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(0.05, 0.95);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("softmax_channel normalizes per voxel and matches scalar math", "[losses]") {
  Rng rng(101);
  Tensor<double> x = Tensor<double>::randn({2, 4, 2, 3, 2}, rng);
  logonet::NoGradGuard guard;
  Tensor<double> p = softmax_channel(x);
  const Shape5 s = x.shape();
  for (std::int64_t b = 0; b < s[0]; ++b)
    for (std::int64_t z = 0; z < s[2]; ++z)
      for (std::int64_t h = 0; h < s[3]; ++h)
        for (std::int64_t w = 0; w < s[4]; ++w) {
          double denom = 0.0, mx = x.at(b, 0, z, h, w);
          for (std::int64_t c = 1; c < s[1]; ++c) mx = std::max(mx, x.at(b, c, z, h, w));
          for (std::int64_t c = 0; c < s[1]; ++c) denom += std::exp(x.at(b, c, z, h, w) - mx);
          double sum = 0.0;
          std::int64_t argmax_x = 0, argmax_p = 0;
          for (std::int64_t c = 0; c < s[1]; ++c) {
            const double ref = std::exp(x.at(b, c, z, h, w) - mx) / denom;
            REQUIRE(p.at(b, c, z, h, w) == Catch::Approx(ref).epsilon(1e-12));
            REQUIRE(p.at(b, c, z, h, w) > 0.0);
            sum += p.at(b, c, z, h, w);
            if (x.at(b, c, z, h, w) > x.at(b, argmax_x, z, h, w)) argmax_x = c;
            if (p.at(b, c, z, h, w) > p.at(b, argmax_p, z, h, w)) argmax_p = c;
          }
          REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
          REQUIRE(argmax_x == argmax_p);
        }

  // Extreme logits stay finite thanks to max subtraction.
  Tensor<double> big = Tensor<double>::zeros({1, 2, 1, 1, 1});
  big.data()[0] = 1e4;
  big.data()[1] = -1e4;
  Tensor<double> pb = softmax_channel(big);
  REQUIRE(std::isfinite(pb.data()[0]));
  REQUIRE(pb.data()[0] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("softmax_channel gradient matches finite differences", "[losses]") {
  Rng rng(103);
  Tensor<double> x = Tensor<double>::randn({1, 3, 2, 2, 2}, rng);
  x.set_requires_grad(true);
  Rng wrng(104);
  std::vector<double> w = random_weights<double>(x.numel(), wrng);
  auto make_loss = [&]() { return weighted_sum(softmax_channel(x), w); };
  Rng probe_rng(105);
  fd_check({&x}, make_loss, probe_rng, 1e-5, 1e-4, 5);
}

TEST_CASE("one_hot expands labels and rejects out-of-range values", "[losses]") {
  Tensor<std::uint8_t> labels = Tensor<std::uint8_t>::zeros({1, 1, 1, 2, 2});
  labels.at(0, 0, 0, 0, 0) = 0;
  labels.at(0, 0, 0, 0, 1) = 2;
  labels.at(0, 0, 0, 1, 0) = 1;
  labels.at(0, 0, 0, 1, 1) = 2;
  Tensor<double> oh = one_hot<double>(labels, 3);
  REQUIRE(oh.shape() == Shape5{1, 3, 1, 2, 2});
  for (std::int64_t h = 0; h < 2; ++h)
    for (std::int64_t w = 0; w < 2; ++w) {
      double sum = 0.0;
      for (std::int64_t c = 0; c < 3; ++c) sum += oh.at(0, c, 0, h, w);
      REQUIRE(sum == 1.0);
      REQUIRE(oh.at(0, labels.at(0, 0, 0, h, w), 0, h, w) == 1.0);
    }
  REQUIRE_THROWS_AS(one_hot<double>(labels, 2), ArgumentError);
  Tensor<std::uint8_t> two_channel = Tensor<std::uint8_t>::zeros({1, 2, 1, 2, 2});
  REQUIRE_THROWS_AS(one_hot<double>(two_channel, 3), ShapeError);
}

TEST_CASE("dice_loss exact values", "[losses]") {
  logonet::NoGradGuard guard;

  // Perfect prediction: every per-class term is 1 - (2n+eps)/(2n+eps) = 0.
  Tensor<std::uint8_t> labels = random_labels({2, 1, 3, 3, 3}, 3, 201);
  Tensor<double> target = one_hot<double>(labels, 3);
  REQUIRE(dice_loss(target, target).item() == 0.0);

  // Single voxel, p=0.5 against t=1: 1 - (1+eps)/(1.5+eps).
  const double eps = 1e-5;
  Tensor<double> p = Tensor<double>::filled({1, 1, 1, 1, 1}, 0.5);
  Tensor<double> t = Tensor<double>::filled({1, 1, 1, 1, 1}, 1.0);
  const double expect = 1.0 - (2.0 * 0.5 + eps) / (0.5 + 1.0 + eps);
  REQUIRE(dice_loss(p, t, eps).item() == Catch::Approx(expect).epsilon(1e-12));
  REQUIRE(dice_loss(p, t, eps).item() == Catch::Approx(1.0 / 3.0).margin(1e-5));

  // Range: random probs stay within [0, 1].
  Tensor<double> rp = probs_leaf({1, 2, 4, 4, 4}, 202);
  Tensor<double> rt = one_hot<double>(random_labels({1, 1, 4, 4, 4}, 2, 203), 2);
  const double v = dice_loss(rp, rt).item();
  REQUIRE(v >= 0.0);
  REQUIRE(v <= 1.0);

  // exclude_background drops class 0 from the average.
  Tensor<double> probs2 = probs_leaf({1, 2, 2, 2, 2}, 204);
  Tensor<double> target2 = one_hot<double>(random_labels({1, 1, 2, 2, 2}, 2, 205), 2);
  const double with_bg = dice_loss(probs2, target2, eps, false).item();
  const double no_bg = dice_loss(probs2, target2, eps, true).item();
  // Manual per-class recomputation.
  double per_class[2];
  for (std::int64_t c = 0; c < 2; ++c) {
    double a = 0.0, sp = 0.0, st = 0.0;
    for (std::int64_t z = 0; z < 2; ++z)
      for (std::int64_t h = 0; h < 2; ++h)
        for (std::int64_t w = 0; w < 2; ++w) {
          a += probs2.at(0, c, z, h, w) * target2.at(0, c, z, h, w);
          sp += probs2.at(0, c, z, h, w);
          st += target2.at(0, c, z, h, w);
        }
    per_class[c] = 1.0 - (2.0 * a + eps) / (sp + st + eps);
  }
  REQUIRE(with_bg == Catch::Approx((per_class[0] + per_class[1]) / 2.0).epsilon(1e-12));
  REQUIRE(no_bg == Catch::Approx(per_class[1]).epsilon(1e-12));

  Tensor<double> wrong = Tensor<double>::zeros({1, 3, 2, 2, 2});
  REQUIRE_THROWS_AS(dice_loss(probs2, wrong), ShapeError);
}

TEST_CASE("dice_loss gradient matches finite differences", "[losses]") {
  Tensor<double> probs = probs_leaf({1, 2, 4, 4, 4}, 211);
  Tensor<double> target = one_hot<double>(random_labels({1, 1, 4, 4, 4}, 2, 212), 2);
  auto make_loss = [&]() { return dice_loss(probs, target); };
  Rng probe_rng(213);
  fd_check({&probs}, make_loss, probe_rng, 1e-6, 1e-4, 5);
}

TEST_CASE("ce_loss exact values and clamping", "[losses]") {
  logonet::NoGradGuard guard;

  Tensor<std::uint8_t> labels = random_labels({1, 1, 2, 2, 2}, 4, 221);
  Tensor<double> target = one_hot<double>(labels, 4);
  REQUIRE(ce_loss(target, target).item() == 0.0);

  Tensor<double> uniform = Tensor<double>::filled({1, 4, 2, 2, 2}, 0.25);
  REQUIRE(ce_loss(uniform, target).item() == Catch::Approx(std::log(4.0)).epsilon(1e-12));

  // A zero probability on the true class is clamped, not infinite.
  Tensor<double> zeros = Tensor<double>::zeros({1, 4, 2, 2, 2});
  const double clamped = ce_loss(zeros, target).item();
  REQUIRE(std::isfinite(clamped));
  REQUIRE(clamped == Catch::Approx(-std::log(1e-12)).epsilon(1e-12));
}

TEST_CASE("ce_loss gradient matches finite differences", "[losses]") {
  Tensor<double> probs = probs_leaf({1, 3, 3, 3, 3}, 231);
  Tensor<double> target = one_hot<double>(random_labels({1, 1, 3, 3, 3}, 3, 232), 3);
  auto make_loss = [&]() { return ce_loss(probs, target); };
  Rng probe_rng(233);
  fd_check({&probs}, make_loss, probe_rng, 1e-6, 1e-4, 5);
}

TEST_CASE("dice_ce_loss reduces to its parts and is monotone in the weights", "[losses]") {
  logonet::NoGradGuard guard;
  Rng rng(241);
  Tensor<double> logits = Tensor<double>::randn({2, 3, 4, 4, 4}, rng);
  Tensor<std::uint8_t> labels = random_labels({2, 1, 4, 4, 4}, 3, 242);

  Tensor<double> probs = softmax_channel(logits);
  Tensor<double> target = one_hot<double>(labels, 3);

  DiceCeConfig dice_only;
  dice_only.w_cl = 0.0;
  DiceCeConfig ce_only;
  ce_only.w_dl = 0.0;
  const double dl = dice_loss(probs, target, dice_only.eps).item();
  const double cl = ce_loss(probs, target).item();
  REQUIRE(dice_ce_loss(logits, labels, dice_only).item() == Catch::Approx(dl).epsilon(1e-14));
  REQUIRE(dice_ce_loss(logits, labels, ce_only).item() == Catch::Approx(cl).epsilon(1e-14));
  REQUIRE(dice_ce_loss(logits, labels).item() == Catch::Approx(dl + cl).epsilon(1e-14));

  DiceCeConfig heavier_dice;
  heavier_dice.w_dl = 2.0;
  DiceCeConfig heavier_ce;
  heavier_ce.w_cl = 2.0;
  REQUIRE(dice_ce_loss(logits, labels, heavier_dice).item() >=
          dice_ce_loss(logits, labels).item());
  REQUIRE(dice_ce_loss(logits, labels, heavier_ce).item() >=
          dice_ce_loss(logits, labels).item());

  Tensor<std::uint8_t> bad = random_labels({2, 1, 4, 4, 4}, 3, 243);
  bad.data()[5] = 3;
  REQUIRE_THROWS_AS(dice_ce_loss(logits, bad), ArgumentError);

  Tensor<std::uint8_t> misshapen = Tensor<std::uint8_t>::zeros({2, 1, 4, 4, 2});
  REQUIRE_THROWS_AS(dice_ce_loss(logits, misshapen), ShapeError);

  DiceCeConfig zero_weights;
  zero_weights.w_dl = 0.0;
  zero_weights.w_cl = 0.0;
  REQUIRE_THROWS_AS(dice_ce_loss(logits, labels, zero_weights), ArgumentError);
}

TEST_CASE("dice_ce_loss gradient flows through the softmax", "[losses]") {
  Rng rng(251);
  Tensor<double> logits = Tensor<double>::randn({1, 3, 4, 4, 4}, rng);
  logits.set_requires_grad(true);
  Tensor<std::uint8_t> labels = random_labels({1, 1, 4, 4, 4}, 3, 252);
  auto make_loss = [&]() { return dice_ce_loss(logits, labels); };
  Rng probe_rng(253);
  fd_check({&logits}, make_loss, probe_rng, 1e-6, 1e-4, 5);
}

TEST_CASE("dice_metric counts overlap with the documented conventions", "[losses]") {
  Tensor<std::uint8_t> a = random_labels({1, 1, 4, 4, 4}, 3, 261);
  REQUIRE(dice_metric(a, a, 1) == 1.0);
  REQUIRE(dice_metric(a, a, 2) == 1.0);

  // Disjoint nonempty masks.
  Tensor<std::uint8_t> l = Tensor<std::uint8_t>::zeros({1, 1, 1, 1, 4});
  Tensor<std::uint8_t> r = Tensor<std::uint8_t>::zeros({1, 1, 1, 1, 4});
  l.data()[0] = 1;
  r.data()[3] = 1;
  REQUIRE(dice_metric(l, r, 1) == 0.0);

  // Both empty: convention 1.0.
  REQUIRE(dice_metric(l, r, 7) == 1.0);

  // Set-arithmetic oracle on random masks; symmetry.
  Tensor<std::uint8_t> b = random_labels({1, 1, 4, 4, 4}, 3, 262);
  for (std::uint8_t cls = 0; cls < 3; ++cls) {
    std::int64_t inter = 0, na = 0, nb = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      inter += (a.data()[i] == cls) && (b.data()[i] == cls);
      na += a.data()[i] == cls;
      nb += b.data()[i] == cls;
    }
    const double expect =
        (na + nb) == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
    REQUIRE(dice_metric(a, b, cls) == Catch::Approx(expect).margin(1e-12));
    REQUIRE(dice_metric(a, b, cls) == dice_metric(b, a, cls));
  }

  REQUIRE(logonet::mean_foreground_dice(a, a, 3) == 1.0);
  REQUIRE_THROWS_AS(logonet::mean_foreground_dice(a, a, 1), ArgumentError);
}

TEST_CASE("adamw first step matches the closed form", "[optim]") {
  Tensor<double> theta = Tensor<double>::filled({1, 1, 1, 1, 1}, 1.0);
  theta.set_requires_grad(true);
  ParamList<double> params;
  params.push_back({"theta", theta});
  AdamW<double> opt(params);

  // Gradient 0.5 via d/dθ (0.5·θ).
  Tensor<double> half = Tensor<double>::filled({1, 1, 1, 1, 1}, 0.5);
  Tensor<double> loss = logonet::sum_all(logonet::mul(theta, half));
  logonet::backward(loss);
  opt.step(1e-4);

  const double decayed = 1.0 * (1.0 - 1e-4 * 1e-5);
  const double m_hat = 0.5, v_hat = 0.25;
  const double expect = decayed - 1e-4 * m_hat / (std::sqrt(v_hat) + 1e-8);
  REQUIRE(theta.item() == Catch::Approx(expect).epsilon(1e-15));
  REQUIRE(theta.item() == Catch::Approx(0.9999).margin(1e-6));
  REQUIRE(opt.step_count() == 1);
}

TEST_CASE("adamw leaves parameters alone when gradients are zero and wd=0", "[optim]") {
  Rng rng(301);
  Tensor<double> theta = Tensor<double>::randn({1, 2, 2, 2, 2}, rng);
  theta.set_requires_grad(true);
  const std::vector<double> before = theta.vec();
  ParamList<double> params;
  params.push_back({"theta", theta});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(params, cfg);

  // Zero gradient via a loss that ignores theta's value: backward of 0·θ.
  Tensor<double> zero = Tensor<double>::zeros(theta.shape());
  Tensor<double> loss = logonet::sum_all(logonet::mul(theta, zero));
  logonet::backward(loss);
  opt.step(1e-3);
  REQUIRE(theta.vec() == before);

  // With a zero gradient, decay is the only movement: one decoupled-decay
  // factor per step, no adaptive drift.
  AdamW<double> opt3(params);
  opt3.zero_grad();
  opt3.step(1e-3);
  REQUIRE(theta.vec() != before);
  for (std::size_t i = 0; i < before.size(); ++i) {
    REQUIRE(theta.vec()[i] == Catch::Approx(before[i] * (1.0 - 1e-3 * 1e-5)).epsilon(1e-15));
  }
}

TEST_CASE("adamw matches a hand-rolled trace and reduces to adam at wd=0", "[optim]") {
  const std::vector<double> grads = {0.5, -1.25, 0.125};
  const double lr = 1e-3;

  // Hand-rolled AdamW trace.
  auto reference = [&](double wd) {
    double p = 0.7, m = 0.0, v = 0.0;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
      const double g = grads[t - 1];
      p *= 1.0 - lr * wd;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double m_hat = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
      const double v_hat = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
      p -= lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    }
    return p;
  };

  auto run = [&](double wd) {
    Tensor<double> theta = Tensor<double>::filled({1, 1, 1, 1, 1}, 0.7);
    theta.set_requires_grad(true);
    ParamList<double> params;
    params.push_back({"theta", theta});
    AdamWConfig cfg;
    cfg.weight_decay = wd;
    AdamW<double> opt(params, cfg);
    for (double g : grads) {
      opt.zero_grad();
      Tensor<double> gv = Tensor<double>::filled({1, 1, 1, 1, 1}, g);
      Tensor<double> loss = logonet::sum_all(logonet::mul(theta, gv));
      logonet::backward(loss);
      opt.step(lr);
    }
    return theta.item();
  };

  REQUIRE(run(1e-5) == Catch::Approx(reference(1e-5)).epsilon(1e-14));
  // wd=0 is plain Adam.
  REQUIRE(run(0.0) == Catch::Approx(reference(0.0)).epsilon(1e-14));
}

TEST_CASE("cosine warmup schedule hits its landmarks", "[optim]") {
  const double peak = 1e-4;
  const std::int64_t warmup = 10, total = 110;

  REQUIRE(cosine_warmup_lr(0, warmup, total, peak) == 0.0);
  REQUIRE(cosine_warmup_lr(warmup, warmup, total, peak) == Catch::Approx(peak).epsilon(1e-15));
  REQUIRE(cosine_warmup_lr(total, warmup, total, peak) == Catch::Approx(0.0).margin(1e-18));
  // Midpoint of the anneal: exactly half the peak.
  REQUIRE(cosine_warmup_lr((warmup + total) / 2, warmup, total, peak) ==
          Catch::Approx(peak / 2).epsilon(1e-12));

  // Warmup is exactly linear.
  for (std::int64_t t = 0; t < warmup; ++t) {
    REQUIRE(cosine_warmup_lr(t, warmup, total, peak) ==
            Catch::Approx(peak * static_cast<double>(t) / 10.0).epsilon(1e-15));
  }
  // Anneal steps are small: bounded by peak*pi/total.
  for (std::int64_t t = warmup; t < total; ++t) {
    const double delta = std::abs(cosine_warmup_lr(t + 1, warmup, total, peak) -
                                  cosine_warmup_lr(t, warmup, total, peak));
    REQUIRE(delta <= peak * M_PI / static_cast<double>(total) + 1e-18);
  }
  // Monotone decreasing after warmup.
  for (std::int64_t t = warmup; t < total; ++t) {
    REQUIRE(cosine_warmup_lr(t + 1, warmup, total, peak) <=
            cosine_warmup_lr(t, warmup, total, peak));
  }

  REQUIRE_THROWS_AS(cosine_warmup_lr(-1, warmup, total, peak), ArgumentError);
  REQUIRE_THROWS_AS(cosine_warmup_lr(total + 1, warmup, total, peak), ArgumentError);
  REQUIRE_THROWS_AS(cosine_warmup_lr(0, total, total, peak), ArgumentError);

  AdamWConfig bad;
  bad.beta1 = 1.0;
  REQUIRE_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("autograd graph is freed once the handles are dropped", "[losses]") {
  // A backward_fn that captured its own node would form an ownership cycle
  // (node -> backward_fn -> node) and silently pin every upstream
  // intermediate of every step for the life of the process.
  logonet::Rng rng(9);
  Tensor<double> x = Tensor<double>::randn({1, 3, 4, 4, 4}, rng);
  x.set_requires_grad(true);

  std::weak_ptr<logonet::detail::Node<double>> probe;
  {
    Tensor<double> probs = softmax_channel(x);
    probe = probs.impl();
    Tensor<double> loss = logonet::sum_all(logonet::mul(probs, probs));
    logonet::backward(loss);
    REQUIRE_FALSE(probe.expired());
  }
  CHECK(probe.expired());
  REQUIRE(x.has_grad());
}
