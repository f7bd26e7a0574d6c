#include "logonet/lka.hpp"
#include "test_util.hpp"

using logonet::LkaAttention;
using logonet::LkaAttentionConfig;
using logonet::LkaBlock;
using logonet::LkaBlockConfig;
using logonet::MlpBlock;
using logonet::MlpConfig;
using logonet::PatchEmbed;
using logonet::PatchEmbedConfig;
using logonet::Rng;
using logonet::Shape5;
using logonet::ShapeError;
using logonet::Tensor;

namespace {

void zero_layer(logonet::Conv3dLayer<double>& layer) {
  std::fill(layer.weight.vec().begin(), layer.weight.vec().end(), 0.0);
  if (layer.bias.defined()) std::fill(layer.bias.vec().begin(), layer.bias.vec().end(), 0.0);
}

void dirac_depthwise(logonet::Conv3dLayer<double>& layer) {
  zero_layer(layer);
  const auto& k = layer.spec.kernel;
  for (std::int64_t c = 0; c < layer.spec.out_channels; ++c) {
    layer.weight.at(c, 0, k[0] / 2, k[1] / 2, k[2] / 2) = 1.0;
  }
}

}  // namespace

TEST_CASE("token and volume views are exact inverses", "[lka]") {
  Rng rng(5);
  auto x = Tensor<double>::randn({2, 3, 2, 3, 4}, rng);
  auto tok = logonet::volume_to_tokens(x);
  REQUIRE(tok.shape() == Shape5{2, 24, 3, 1, 1});
  // Token order is row-major over (S, H, W).
  for (std::int64_t z = 0; z < 2; ++z)
    for (std::int64_t h = 0; h < 3; ++h)
      for (std::int64_t w = 0; w < 4; ++w)
        for (std::int64_t c = 0; c < 3; ++c) {
          REQUIRE(tok.at(1, (z * 3 + h) * 4 + w, c, 0, 0) == x.at(1, c, z, h, w));
        }
  auto back = logonet::tokens_to_volume(tok, 2, 3, 4);
  REQUIRE(back.vec() == x.vec());
  REQUIRE_THROWS_AS(logonet::tokens_to_volume(tok, 2, 3, 3), ShapeError);
}

TEST_CASE("lka attention matches the composition of oracle convolutions", "[lka]") {
  Rng rng(11);
  LkaAttentionConfig cfg;
  cfg.dim = 2;
  LkaAttention<double> attn(cfg, rng);
  auto x = Tensor<double>::randn({1, 2, 3, 3, 3}, rng);

  auto stage1 = logotest::conv_oracle_tensor(x, attn.chconv);
  auto stage2 = logotest::conv_oracle_tensor(stage1, attn.diconv);
  auto stage3 = logotest::conv_oracle_tensor(stage2, attn.pointwise);
  auto want = logonet::mul(stage3, x);

  auto got = attn.forward(x);
  REQUIRE(got.shape() == x.shape());
  double max_diff = 0.0;
  for (std::int64_t i = 0; i < got.numel(); ++i) {
    max_diff = std::max(max_diff, std::abs(got.data()[i] - want.data()[i]));
  }
  REQUIRE(max_diff < 1e-12);
}

TEST_CASE("lka attention trivial configurations", "[lka]") {
  Rng rng(13);

  SECTION("zeros stay zeros on the bias-free path") {
    LkaAttentionConfig cfg;
    cfg.dim = 3;
    cfg.bias = false;
    LkaAttention<double> attn(cfg, rng);
    auto x = Tensor<double>::zeros({2, 3, 4, 4, 4});
    auto y = attn.forward(x);
    for (double v : y.vec()) REQUIRE(v == 0.0);
  }

  SECTION("dirac kernels with identity pointwise square the input") {
    LkaAttentionConfig cfg;
    cfg.dim = 2;
    LkaAttention<double> attn(cfg, rng);
    dirac_depthwise(attn.chconv);
    dirac_depthwise(attn.diconv);
    zero_layer(attn.pointwise);
    for (std::int64_t c = 0; c < 2; ++c) attn.pointwise.weight.at(c, c, 0, 0, 0) = 1.0;
    auto x = Tensor<double>::randn({1, 2, 4, 4, 4}, rng);
    auto y = attn.forward(x);
    auto want = logonet::mul(x, x);
    REQUIRE(y.vec() == want.vec());
  }

  SECTION("channel mismatch raises") {
    LkaAttentionConfig cfg;
    cfg.dim = 2;
    LkaAttention<double> attn(cfg, rng);
    auto x = Tensor<double>::zeros({1, 3, 4, 4, 4});
    REQUIRE_THROWS_AS(attn.forward(x), ShapeError);
  }
}

TEST_CASE("lka attention gate has the composed 23-wide receptive field", "[lka]") {
  Rng rng(17);
  LkaAttentionConfig cfg;
  cfg.dim = 2;
  cfg.bias = false;
  LkaAttention<double> attn(cfg, rng);
  // All-positive kernels rule out cancellation, so the nonzero pattern of the
  // gate equals the composed support exactly.
  std::fill(attn.chconv.weight.vec().begin(), attn.chconv.weight.vec().end(), 1.0);
  std::fill(attn.diconv.weight.vec().begin(), attn.diconv.weight.vec().end(), 1.0);
  std::fill(attn.pointwise.weight.vec().begin(), attn.pointwise.weight.vec().end(), 1.0);

  const std::int64_t E = 25, c0 = E / 2;
  auto x = Tensor<double>::zeros({1, 2, E, E, E});
  x.at(0, 0, c0, c0, c0) = 1.0;
  auto gate = attn.attention_map(x);
  REQUIRE(gate.shape() == x.shape());

  // Composed half-width: (5-1)/2 + 3*(7-1)/2 = 2 + 9 = 11.
  const std::int64_t r = 11;
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t z = 0; z < E; ++z)
      for (std::int64_t h = 0; h < E; ++h)
        for (std::int64_t w = 0; w < E; ++w) {
          const bool inside = std::abs(z - c0) <= r && std::abs(h - c0) <= r &&
                              std::abs(w - c0) <= r;
          const double v = gate.at(0, c, z, h, w);
          if (inside) {
            REQUIRE(v > 0.0);
          } else {
            REQUIRE(v == 0.0);
          }
        }
}

TEST_CASE("mlp block widths, zeros, and oracle composition", "[lka]") {
  Rng rng(19);

  SECTION("hidden width is ratio times dim") {
    MlpBlock<double> mlp({4, 8, true}, rng);
    REQUIRE(mlp.fc1.spec.out_channels == 32);
    REQUIRE(mlp.dwconv.spec.in_channels == 32);
    REQUIRE(mlp.dwconv.spec.groups == 32);
    REQUIRE(mlp.fc2.spec.in_channels == 32);
    REQUIRE(mlp.fc2.spec.out_channels == 4);
  }

  SECTION("zero weights give zero output") {
    MlpBlock<double> mlp({3, 2, true}, rng);
    zero_layer(mlp.fc1);
    zero_layer(mlp.dwconv);
    zero_layer(mlp.fc2);
    auto x = Tensor<double>::randn({1, 3, 3, 3, 3}, rng);
    auto y = mlp.forward(x);
    for (double v : y.vec()) REQUIRE(v == 0.0);
  }

  SECTION("matches sequential oracle composition") {
    MlpBlock<double> mlp({2, 3, true}, rng);
    auto x = Tensor<double>::randn({1, 2, 3, 3, 3}, rng);
    auto s1 = logotest::conv_oracle_tensor(x, mlp.fc1);
    auto s2 = logonet::gelu(s1);
    auto s3 = logotest::conv_oracle_tensor(s2, mlp.dwconv);
    auto s4 = logonet::gelu(s3);
    auto want = logotest::conv_oracle_tensor(s4, mlp.fc2);
    auto got = mlp.forward(x);
    REQUIRE(got.shape() == want.shape());
    for (std::int64_t i = 0; i < got.numel(); ++i) {
      REQUIRE(std::abs(got.data()[i] - want.data()[i]) < 1e-12);
    }
  }
}

TEST_CASE("lka block is the identity when branches are zeroed", "[lka]") {
  Rng rng(23);
  LkaBlockConfig cfg;
  cfg.dim = 3;
  cfg.mlp_ratio = 2;
  LkaBlock<double> block(cfg, rng);
  zero_layer(block.attn.chconv);
  zero_layer(block.attn.diconv);
  zero_layer(block.attn.pointwise);
  zero_layer(block.mlp.fc1);
  zero_layer(block.mlp.dwconv);
  zero_layer(block.mlp.fc2);
  std::fill(block.norm1.gamma().vec().begin(), block.norm1.gamma().vec().end(), 0.0);
  std::fill(block.norm2.gamma().vec().begin(), block.norm2.gamma().vec().end(), 0.0);

  auto x = Tensor<double>::randn({2, 3, 3, 3, 3}, rng);
  auto tok = logonet::volume_to_tokens(x);
  auto out = block.forward_tokens(tok, 3, 3, 3);
  REQUIRE(out.vec() == tok.vec());
}

TEST_CASE("lka block preserves token shape and validates the record", "[lka]") {
  Rng rng(29);
  LkaBlockConfig cfg;
  cfg.dim = 8;
  cfg.mlp_ratio = 2;
  LkaBlock<double> block(cfg, rng);
  auto tok = Tensor<double>::randn({1, 27, 8, 1, 1}, rng);
  auto out = block.forward_tokens(tok, 3, 3, 3);
  REQUIRE(out.shape() == Shape5{1, 27, 8, 1, 1});
  REQUIRE_THROWS_AS(block.forward_tokens(tok, 3, 3, 2), ShapeError);
  auto bad = Tensor<double>::randn({1, 27, 4, 1, 1}, rng);
  REQUIRE_THROWS_AS(block.forward_tokens(bad, 3, 3, 3), ShapeError);
}

TEST_CASE("every lka block parameter gets gradient and passes fd", "[lka]") {
  Rng rng(31);
  LkaBlockConfig cfg;
  cfg.dim = 4;
  cfg.mlp_ratio = 2;
  LkaBlock<double> block(cfg, rng);
  logonet::ParamList<double> params;
  block.collect("block", params);
  REQUIRE(params.size() == 16);

  auto x = logotest::randn_leaf({1, 4, 3, 3, 3}, rng);
  auto w = logotest::random_weights<double>(x.numel(), rng);
  auto make_loss = [&]() { return logotest::weighted_sum(block.forward_volume(x), w); };

  // Reachability: every parameter tensor receives some nonzero gradient.
  {
    auto loss = make_loss();
    logonet::backward(loss);
    for (const auto& p : params) {
      double mx = 0.0;
      for (double g : p.tensor.grad_vec()) mx = std::max(mx, std::abs(g));
      INFO(p.name);
      REQUIRE(mx > 0.0);
    }
    for (auto& p : params) p.tensor.zero_grad();
  }

  std::vector<Tensor<double>*> leaves{&x};
  for (auto& p : params) leaves.push_back(&p.tensor);
  logotest::fd_check(leaves, make_loss, rng, 1e-5, 1e-4, 3);
}

TEST_CASE("patch embed emits row-major tokens with the conv shape plan", "[lka]") {
  Rng rng(37);

  SECTION("96 cube with stride-4 stem") {
    PatchEmbedConfig cfg;
    cfg.in_channels = 1;
    cfg.dim = 64;
    cfg.kernel = 7;
    cfg.stride = 4;
    PatchEmbed<double> embed(cfg, rng);
    auto x = Tensor<double>::randn({1, 1, 96, 96, 96}, rng);
    auto out = embed.forward(x);
    REQUIRE(out.spatial == std::array<std::int64_t, 3>{24, 24, 24});
    REQUIRE(out.tokens.shape() == Shape5{1, 24 * 24 * 24, 64, 1, 1});
  }

  SECTION("8 cube with stride-2 stem") {
    PatchEmbedConfig cfg;
    cfg.in_channels = 1;
    cfg.dim = 4;
    cfg.kernel = 3;
    cfg.stride = 2;
    PatchEmbed<double> embed(cfg, rng);
    auto x = Tensor<double>::randn({1, 1, 8, 8, 8}, rng);
    auto out = embed.forward(x);
    REQUIRE(out.spatial == std::array<std::int64_t, 3>{4, 4, 4});
    REQUIRE(out.tokens.shape() == Shape5{1, 64, 4, 1, 1});
  }

  SECTION("identity stem in eval mode is a per-channel affine image") {
    PatchEmbedConfig cfg;
    cfg.in_channels = 2;
    cfg.dim = 2;
    cfg.kernel = 1;
    cfg.stride = 1;
    PatchEmbed<double> embed(cfg, rng);
    zero_layer(embed.proj);
    embed.proj.weight.at(0, 0, 0, 0, 0) = 1.0;
    embed.proj.weight.at(1, 1, 0, 0, 0) = 1.0;
    embed.set_training(false);
    embed.norm.running_mean() = {0.3, -0.7};
    embed.norm.running_var() = {2.0, 0.5};
    embed.norm.gamma().data()[0] = 1.5;
    embed.norm.gamma().data()[1] = -0.4;
    embed.norm.beta().data()[0] = -0.2;
    embed.norm.beta().data()[1] = 0.9;

    auto x = Tensor<double>::randn({1, 2, 2, 3, 2}, rng);
    auto out = embed.forward(x);
    REQUIRE(out.tokens.shape() == Shape5{1, 12, 2, 1, 1});
    for (std::int64_t c = 0; c < 2; ++c) {
      const double scale =
          embed.norm.gamma().data()[c] / std::sqrt(embed.norm.running_var()[c] + 1e-5);
      const double shift =
          embed.norm.beta().data()[c] - embed.norm.running_mean()[c] * scale;
      for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t h = 0; h < 3; ++h)
          for (std::int64_t w = 0; w < 2; ++w) {
            const std::int64_t t = (z * 3 + h) * 2 + w;
            REQUIRE(std::abs(out.tokens.at(0, t, c, 0, 0) -
                             (scale * x.at(0, c, z, h, w) + shift)) < 1e-12);
          }
    }
  }
}
