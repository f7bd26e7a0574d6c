#include <algorithm>
#include <cmath>
#include <cstring>

#include <catch2/catch_amalgamated.hpp>

#include "logonet/logonet.hpp"
#include "test_util.hpp"

using logonet::ArgumentError;
using logonet::cube_root_exact;
using logonet::LoGoNet;
using logonet::LoGoNetConfig;
using logonet::ParamList;
using logonet::PartitionError;
using logonet::partition_cube;
using logonet::reassemble;
using logonet::Rng;
using logonet::Shape5;
using logonet::Tensor;
using logotest::fd_check;
using logotest::random_weights;
using logotest::weighted_sum;

namespace {

Tensor<double> random_volume(const Shape5& s, std::uint64_t seed) {
  logonet::NoGradGuard guard;
  Rng rng(seed);
  return Tensor<double>::randn(s, rng);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

// Zeroes every trainable whose name starts with the prefix. With conv
// weights, biases and norm affines all zero, that path emits exact zeros.
template <typename T>
void zero_params_with_prefix(LoGoNet<T>& net, const std::string& prefix) {
  ParamList<T> params;
  net.collect(params);
  for (auto& p : params) {
    if (p.name.rfind(prefix, 0) == 0) {
      std::fill(p.tensor.data(), p.tensor.data() + p.tensor.numel(), T(0));
    }
  }
}

}  // namespace

TEST_CASE("cube_root_exact identifies perfect cubes", "[logonet]") {
  CHECK(cube_root_exact(1) == 1);
  CHECK(cube_root_exact(8) == 2);
  CHECK(cube_root_exact(27) == 3);
  CHECK(cube_root_exact(64) == 4);
  CHECK(cube_root_exact(0) == -1);
  CHECK(cube_root_exact(5) == -1);
  CHECK(cube_root_exact(9) == -1);
  CHECK(cube_root_exact(26) == -1);
}

TEST_CASE("partition_cube matches the batch-folding op and inverts exactly", "[logonet]") {
  Tensor<double> x = random_volume({2, 3, 8, 8, 8}, 17);

  auto part = partition_cube(x, 8);
  REQUIRE(part.cubes.size() == 8);
  REQUIRE(part.index.n == 2);
  REQUIRE(part.index.cube == 4);
  REQUIRE(part.index.batch == 2);
  for (const auto& c : part.cubes) REQUIRE(c.shape() == Shape5{2, 3, 4, 4, 4});

  // Same bijection as the batch-folding op: cube k of batch b sits at folded
  // batch index b*n^3 + k.
  logonet::NoGradGuard guard;
  Tensor<double> folded = logonet::partition_to_batch(x, 2);
  for (std::int64_t k = 0; k < 8; ++k) {
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t z = 0; z < 4; ++z)
          for (std::int64_t h = 0; h < 4; ++h)
            for (std::int64_t w = 0; w < 4; ++w) {
              REQUIRE(part.cubes[static_cast<std::size_t>(k)].at(b, c, z, h, w) ==
                      folded.at(b * 8 + k, c, z, h, w));
            }
  }

  Tensor<double> back = reassemble(part.cubes, part.index);
  REQUIRE(back.shape() == x.shape());
  REQUIRE(std::memcmp(back.data(), x.data(), sizeof(double) * x.numel()) == 0);
}

TEST_CASE("partition_cube and reassemble reject malformed requests", "[logonet]") {
  Tensor<double> x = random_volume({1, 1, 8, 8, 8}, 19);
  REQUIRE_THROWS_AS(partition_cube(x, 5), PartitionError);
  REQUIRE_THROWS_AS(partition_cube(x, 27), PartitionError);  // 8 % 3 != 0

  auto part = partition_cube(x, 8);
  auto short_list = part.cubes;
  short_list.pop_back();
  REQUIRE_THROWS_AS(reassemble(short_list, part.index), PartitionError);

  auto bad_shape = part.cubes;
  bad_shape[3] = Tensor<double>::zeros({1, 1, 2, 4, 4});
  REQUIRE_THROWS_AS(reassemble(bad_shape, part.index), PartitionError);

  logonet::PartitionIndex bad_index = part.index;
  bad_index.cube = 3;
  REQUIRE_THROWS_AS(reassemble(part.cubes, bad_index), PartitionError);
}

TEST_CASE("reassemble accepts a different channel width", "[logonet]") {
  Tensor<double> x = random_volume({1, 2, 4, 4, 4}, 23);
  auto part = partition_cube(x, 8);
  std::vector<Tensor<double>> wide;
  for (const auto& c : part.cubes) {
    Tensor<double> w = Tensor<double>::zeros({1, 5, 2, 2, 2});
    for (std::int64_t z = 0; z < 2; ++z)
      for (std::int64_t h = 0; h < 2; ++h)
        for (std::int64_t v = 0; v < 2; ++v) w.at(0, 4, z, h, v) = c.at(0, 1, z, h, v);
    wide.push_back(std::move(w));
  }
  Tensor<double> back = reassemble(wide, part.index);
  REQUIRE(back.shape() == Shape5{1, 5, 4, 4, 4});
  for (std::int64_t z = 0; z < 4; ++z)
    for (std::int64_t h = 0; h < 4; ++h)
      for (std::int64_t v = 0; v < 4; ++v) {
        REQUIRE(back.at(0, 4, z, h, v) == x.at(0, 1, z, h, v));
        REQUIRE(back.at(0, 0, z, h, v) == 0.0);
      }
}

TEST_CASE("predict_segmentation takes the channel argmax with ties to the smaller class",
          "[logonet]") {
  Tensor<double> logits = Tensor<double>::zeros({1, 3, 1, 2, 2});
  // Voxel (0,0): class 2 wins. (0,1): class 1 wins. (1,0): exact tie between
  // classes 0 and 2. (1,1): all equal.
  logits.at(0, 2, 0, 0, 0) = 1.5;
  logits.at(0, 1, 0, 0, 1) = 2.0;
  logits.at(0, 0, 0, 1, 0) = 3.0;
  logits.at(0, 2, 0, 1, 0) = 3.0;

  Tensor<std::uint8_t> labels = logonet::predict_segmentation(logits);
  REQUIRE(labels.shape() == Shape5{1, 1, 1, 2, 2});
  CHECK(labels.at(0, 0, 0, 0, 0) == 2);
  CHECK(labels.at(0, 0, 0, 0, 1) == 1);
  CHECK(labels.at(0, 0, 0, 1, 0) == 0);
  CHECK(labels.at(0, 0, 0, 1, 1) == 0);

  Tensor<double> too_many = Tensor<double>::zeros({1, 256, 1, 1, 1});
  REQUIRE_THROWS_AS(logonet::predict_segmentation(too_many), ArgumentError);
}

TEST_CASE("logonet config validation", "[logonet]") {
  REQUIRE_NOTHROW(LoGoNetConfig::normal(1, 14).validate());
  REQUIRE_NOTHROW(LoGoNetConfig::large(1, 14).validate());
  REQUIRE_NOTHROW(LoGoNetConfig::tiny(1, 3).validate());

  LoGoNetConfig c = LoGoNetConfig::tiny(1, 3);
  c.partitions = 5;
  REQUIRE_THROWS_AS(c.validate(), ArgumentError);

  c = LoGoNetConfig::tiny(1, 3);
  c.local_cfg = logonet::UlkanetConfig::local_tiny(1, 8);
  REQUIRE_THROWS_AS(c.validate(), ArgumentError);

  c = LoGoNetConfig::tiny(1, 3);
  c.local_cfg.in_channels = 2;
  REQUIRE_THROWS_AS(c.validate(), ArgumentError);

  c = LoGoNetConfig::tiny(1, 3);
  c.num_classes = 0;
  REQUIRE_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("logonet tiny forward shape and determinism", "[logonet]") {
  Tensor<double> x = random_volume({1, 1, 16, 16, 16}, 29);

  auto run = [&x]() {
    Rng rng(30);
    LoGoNet<double> net(LoGoNetConfig::tiny(1, 3), rng);
    net.set_training(false);
    logonet::NoGradGuard guard;
    return net.forward(x);
  };

  Tensor<double> y1 = run();
  REQUIRE(y1.shape() == Shape5{1, 3, 16, 16, 16});
  for (std::int64_t i = 0; i < y1.numel(); ++i) REQUIRE(std::isfinite(y1.data()[i]));

  Tensor<double> y2 = run();
  REQUIRE(std::memcmp(y1.data(), y2.data(), sizeof(double) * y1.numel()) == 0);

  Tensor<std::uint8_t> labels = logonet::predict_segmentation(y1);
  REQUIRE(labels.shape() == Shape5{1, 1, 16, 16, 16});
  for (std::int64_t i = 0; i < labels.numel(); ++i) REQUIRE(labels.data()[i] < 3);
}

TEST_CASE("logonet zeroed local path reduces to the global path", "[logonet]") {
  Rng rng(33);
  LoGoNet<double> net(LoGoNetConfig::tiny(1, 3), rng);
  net.set_training(false);
  zero_params_with_prefix(net, "local.");

  Tensor<double> x = random_volume({1, 1, 16, 16, 16}, 34);
  logonet::NoGradGuard guard;

  Tensor<double> fused = net.forward_features(x);
  net.set_use_local(false);
  Tensor<double> global_only = net.forward_features(x);
  net.set_use_local(true);

  REQUIRE(fused.shape() == global_only.shape());
  REQUIRE(std::memcmp(fused.data(), global_only.data(), sizeof(double) * fused.numel()) == 0);

  // Full forwards agree too (shared head on identical features).
  Tensor<double> y_dual = net.forward(x);
  net.set_use_local(false);
  Tensor<double> y_global = net.forward(x);
  REQUIRE(std::memcmp(y_dual.data(), y_global.data(), sizeof(double) * y_dual.numel()) == 0);
}

TEST_CASE("logonet local path shares one network across all cubes", "[logonet]") {
  Rng rng(37);
  LoGoNet<double> net(LoGoNetConfig::tiny(1, 3), rng);
  net.set_training(false);

  Tensor<double> x = random_volume({1, 1, 16, 16, 16}, 38);
  logonet::NoGradGuard guard;
  Tensor<double> before = net.local_features(x);

  // Nudge a single deep local parameter; with one shared extractor the
  // change must surface in every cube's region.
  ParamList<double> params;
  net.collect(params);
  Tensor<double>* bias = nullptr;
  for (auto& p : params) {
    if (p.name == "local.dec.final.conv3.bias") bias = &p.tensor;
  }
  REQUIRE(bias != nullptr);
  bias->data()[0] += 0.25;

  Tensor<double> after = net.local_features(x);
  REQUIRE(before.shape() == after.shape());
  const Shape5 s = before.shape();
  const std::int64_t half = s[2] / 2;
  for (std::int64_t cz = 0; cz < 2; ++cz)
    for (std::int64_t ch = 0; ch < 2; ++ch)
      for (std::int64_t cw = 0; cw < 2; ++cw) {
        double m = 0.0;
        for (std::int64_t c = 0; c < s[1]; ++c)
          for (std::int64_t z = 0; z < half; ++z)
            for (std::int64_t h = 0; h < half; ++h)
              for (std::int64_t w = 0; w < half; ++w) {
                m = std::max(m, std::abs(after.at(0, c, cz * half + z, ch * half + h,
                                                  cw * half + w) -
                                         before.at(0, c, cz * half + z, ch * half + h,
                                                   cw * half + w)));
              }
        INFO("cube (" << cz << "," << ch << "," << cw << ")");
        CHECK(m > 0.0);
      }
}

TEST_CASE("logonet local path is strictly local, global path is not", "[logonet]") {
  Rng rng(41);
  LoGoNet<double> net(LoGoNetConfig::tiny(1, 3), rng);
  net.set_training(false);

  Tensor<double> x1 = random_volume({1, 1, 16, 16, 16}, 42);
  Tensor<double> x2 = x1;
  logonet::NoGradGuard guard;
  // Perturb one voxel inside cube (1,0,1): z in [8,16), h in [0,8), w in [8,16).
  {
    Tensor<double> copy = Tensor<double>::zeros(x1.shape());
    std::memcpy(copy.data(), x1.data(), sizeof(double) * x1.numel());
    copy.at(0, 0, 11, 3, 12) += 1.0;
    x2 = copy;
  }

  Tensor<double> l1 = net.local_features(x1);
  Tensor<double> l2 = net.local_features(x2);
  double inside = 0.0, outside = 0.0;
  const Shape5 s = l1.shape();
  for (std::int64_t c = 0; c < s[1]; ++c)
    for (std::int64_t z = 0; z < s[2]; ++z)
      for (std::int64_t h = 0; h < s[3]; ++h)
        for (std::int64_t w = 0; w < s[4]; ++w) {
          const double d = std::abs(l2.at(0, c, z, h, w) - l1.at(0, c, z, h, w));
          const bool in_cube = z >= 8 && h < 8 && w >= 8;
          if (in_cube) {
            inside = std::max(inside, d);
          } else {
            outside = std::max(outside, d);
          }
        }
  CHECK(inside > 0.0);
  CHECK(outside == 0.0);

  // The global encoder mixes information across cube boundaries.
  Tensor<double> g1 = net.global_features(x1);
  Tensor<double> g2 = net.global_features(x2);
  double global_outside = 0.0;
  for (std::int64_t c = 0; c < s[1]; ++c)
    for (std::int64_t z = 0; z < s[2]; ++z)
      for (std::int64_t h = 0; h < s[3]; ++h)
        for (std::int64_t w = 0; w < s[4]; ++w) {
          const bool in_cube = z >= 8 && h < 8 && w >= 8;
          if (!in_cube) {
            global_outside = std::max(
                global_outside, std::abs(g2.at(0, c, z, h, w) - g1.at(0, c, z, h, w)));
          }
        }
  CHECK(global_outside > 0.0);
}

TEST_CASE("logonet parameter names carry path prefixes and heads are live", "[logonet]") {
  Rng rng(45);
  LoGoNet<double> net(LoGoNetConfig::tiny(1, 3), rng);

  ParamList<double> params;
  net.collect(params);
  bool saw_global = false, saw_local = false, saw_head = false;
  for (const auto& p : params) {
    if (p.name.rfind("global.", 0) == 0) saw_global = true;
    if (p.name.rfind("local.", 0) == 0) saw_local = true;
    if (p.name.rfind("head.", 0) == 0) saw_head = true;
  }
  CHECK(saw_global);
  CHECK(saw_local);
  CHECK(saw_head);

  // Recorder rows from one dual-path forward carry the same scopes, and the
  // parameter census agrees with the collected list.
  net.set_training(false);
  logonet::cost::Recorder rec;
  logonet::cost::current() = &rec;
  {
    logonet::NoGradGuard guard;
    Tensor<double> x = random_volume({1, 1, 16, 16, 16}, 46);
    net.forward(x);
  }
  logonet::cost::current() = nullptr;
  bool row_global = false, row_local = false, row_head = false;
  std::uint64_t row_params = 0;
  for (const auto& row : rec.rows) {
    if (row.name.rfind("global.", 0) == 0) row_global = true;
    if (row.name.rfind("local.", 0) == 0) row_local = true;
    if (row.name.rfind("head", 0) == 0) row_head = true;
    row_params += row.params;
  }
  CHECK(row_global);
  CHECK(row_local);
  CHECK(row_head);
  REQUIRE(row_params == static_cast<std::uint64_t>(logonet::param_count(params)));
}

TEST_CASE("logonet gradients flow through both paths and the head", "[logonet]") {
  Rng rng(49);
  LoGoNet<double> net(LoGoNetConfig::tiny(1, 3), rng);
  net.set_training(true);

  ParamList<double> params;
  net.collect(params);
  std::vector<Tensor<double>*> leaves;
  const std::vector<std::string> picks = {"global.enc1.embed.proj.weight",
                                          "local.dec.final.conv3.weight",
                                          "head.classifier.weight"};
  for (const auto& name : picks) {
    for (auto& p : params) {
      if (p.name == name) leaves.push_back(&p.tensor);
    }
  }
  REQUIRE(leaves.size() == picks.size());

  Tensor<double> x = random_volume({1, 1, 16, 16, 16}, 50);
  Rng wrng(51);
  std::vector<double> w = random_weights<double>(3 * 16 * 16 * 16, wrng);
  auto make_loss = [&]() { return weighted_sum(net.forward(x), w); };

  Rng probe_rng(52);
  fd_check(leaves, make_loss, probe_rng, 1e-5, 1e-4, 2);
}

TEST_CASE("logonet normal variant emits a 14-class map at 96^3 (dry run)", "[logonet]") {
  Rng rng(55);
  LoGoNet<float> net(LoGoNetConfig::normal(1, 14), rng);
  net.set_training(false);

  logonet::cost::Recorder rec;
  rec.dry_run = true;
  logonet::cost::current() = &rec;
  {
    logonet::NoGradGuard guard;
    Tensor<float> x = Tensor<float>::zeros({1, 1, 96, 96, 96});
    Tensor<float> y = net.forward(x);
    CHECK(y.shape() == Shape5{1, 14, 96, 96, 96});
  }
  logonet::cost::current() = nullptr;

  // The local path runs all eight cubes as one folded batch of 48^3 volumes.
  bool saw_local_embed = false;
  for (const auto& row : rec.rows) {
    if (row.name == "local.enc1.embed" && row.kind == "conv3d") {
      CHECK(row.out_shape == Shape5{8, 64, 12, 12, 12});
      saw_local_embed = true;
    }
  }
  CHECK(saw_local_embed);
}
