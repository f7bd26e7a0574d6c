#pragma once

#include <string>

#include "logonet/activations.hpp"
#include "logonet/batchnorm.hpp"
#include "logonet/conv3d.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

// Pre-training classification head. Consumes backbone features
// (b, input_dim, z_dim, x_dim, y_dim) and emits per-slice, per-clusterer
// class scores (b, z_dim, cluster_num, class_size, 1) by repeatedly rotating
// a different axis into the channel slot and contracting it with pointwise
// convolutions: feature channels -> cluster_num, then y_dim -> class_size,
// then x_dim -> 1, then a final mixing pass along z_dim.
struct PreHeadConfig {
  std::int64_t input_dim = 0;   // backbone feature channels
  std::int64_t x_dim = 0;       // spatial height H
  std::int64_t y_dim = 0;       // spatial width W
  std::int64_t z_dim = 0;       // slice count S
  std::int64_t cluster_num = 0; // number of clusterers served by this head
  std::int64_t class_size = 0;  // score vector length (>= any clusterer's k)
  bool bias = true;

  void validate() const {
    if (input_dim < 1 || x_dim < 1 || y_dim < 1 || z_dim < 1) {
      throw ArgumentError("PreHeadConfig: dimensions must be positive");
    }
    if (cluster_num < 1) throw ArgumentError("PreHeadConfig: cluster_num must be positive");
    if (class_size < 1) throw ArgumentError("PreHeadConfig: class_size must be positive");
    if (x_dim / 16 < 1) {
      throw ArgumentError("PreHeadConfig: x_dim must be at least 16 (x_dim/16 channel stage)");
    }
  }
};

template <typename T>
class PreHead {
 public:
  PreHead() = default;

  PreHead(const PreHeadConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    conv1_ = make_pointwise(cfg.input_dim, cfg.cluster_num, rng);
    bn1_ = BatchNorm3d<T>(cfg.cluster_num);
    conv2_ = make_pointwise(cfg.cluster_num, cfg.cluster_num, rng);
    bn2_ = BatchNorm3d<T>(cfg.cluster_num);
    conv3_ = make_pointwise(cfg.y_dim, cfg.class_size, rng);
    bn3_ = BatchNorm3d<T>(cfg.class_size);
    conv4_ = make_pointwise(cfg.class_size, cfg.class_size, rng);
    bn4_ = BatchNorm3d<T>(cfg.class_size);
    conv5_ = make_pointwise(cfg.x_dim, cfg.x_dim / 16, rng);
    bn5_ = BatchNorm3d<T>(cfg.x_dim / 16);
    conv6_ = make_pointwise(cfg.x_dim / 16, 1, rng);
    bn6_ = BatchNorm3d<T>(1);
    conv7_ = make_pointwise(cfg.z_dim, cfg.z_dim, rng);
    bn7_ = BatchNorm3d<T>(cfg.z_dim);
    conv8_ = make_pointwise(cfg.z_dim, cfg.z_dim, rng);
  }

  // x: (b, input_dim, z_dim, x_dim, y_dim). Returns
  // (b, z_dim, cluster_num, class_size, 1).
  Tensor<T> forward(const Tensor<T>& x) {
    const Shape5 sh = x.shape();
    if (sh[1] != cfg_.input_dim || sh[2] != cfg_.z_dim || sh[3] != cfg_.x_dim ||
        sh[4] != cfg_.y_dim) {
      throw ShapeError("PreHead: entry expected (b, " + std::to_string(cfg_.input_dim) + ", " +
                       std::to_string(cfg_.z_dim) + ", " + std::to_string(cfg_.x_dim) + ", " +
                       std::to_string(cfg_.y_dim) + "), got " + shape_str(sh));
    }
    cost::Scope sc("prehead");
    // Rotate slices to the last axis: (b, C, S, H, W) -> (b, C, H, W, S).
    Tensor<T> h = permute5(x, {0, 1, 3, 4, 2});
    h = gelu(bn1_.forward(conv1_.forward(h)));
    h = gelu(bn2_.forward(conv2_.forward(h)));
    // Bring W into the channel slot: -> (b, W, H, N, S).
    h = permute5(h, {0, 3, 2, 1, 4});
    h = gelu(bn3_.forward(conv3_.forward(h)));
    h = gelu(bn4_.forward(conv4_.forward(h)));
    // Bring H into the channel slot: -> (b, H, class_size, N, S).
    h = permute5(h, {0, 2, 1, 3, 4});
    h = gelu(bn5_.forward(conv5_.forward(h)));
    h = gelu(bn6_.forward(conv6_.forward(h)));
    // Bring S forward and retire the collapsed axis: -> (b, S, N, class_size, 1).
    h = permute5(h, {0, 4, 3, 2, 1});
    h = gelu(bn7_.forward(conv7_.forward(h)));
    h = conv8_.forward(h);
    return relu(h);
  }

  void set_training(bool on) {
    bn1_.set_training(on);
    bn2_.set_training(on);
    bn3_.set_training(on);
    bn4_.set_training(on);
    bn5_.set_training(on);
    bn6_.set_training(on);
    bn7_.set_training(on);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv1_.collect(prefix + ".conv1", out);
    bn1_.collect(prefix + ".bn1", out);
    conv2_.collect(prefix + ".conv2", out);
    bn2_.collect(prefix + ".bn2", out);
    conv3_.collect(prefix + ".conv3", out);
    bn3_.collect(prefix + ".bn3", out);
    conv4_.collect(prefix + ".conv4", out);
    bn4_.collect(prefix + ".bn4", out);
    conv5_.collect(prefix + ".conv5", out);
    bn5_.collect(prefix + ".bn5", out);
    conv6_.collect(prefix + ".conv6", out);
    bn6_.collect(prefix + ".bn6", out);
    conv7_.collect(prefix + ".conv7", out);
    bn7_.collect(prefix + ".bn7", out);
    conv8_.collect(prefix + ".conv8", out);
  }

  void collect_buffers(const std::string& prefix, BufferList<T>& out) {
    bn1_.collect_buffers(prefix + ".bn1", out);
    bn2_.collect_buffers(prefix + ".bn2", out);
    bn3_.collect_buffers(prefix + ".bn3", out);
    bn4_.collect_buffers(prefix + ".bn4", out);
    bn5_.collect_buffers(prefix + ".bn5", out);
    bn6_.collect_buffers(prefix + ".bn6", out);
    bn7_.collect_buffers(prefix + ".bn7", out);
  }

  const PreHeadConfig& config() const { return cfg_; }

 private:
  Conv3dLayer<T> make_pointwise(std::int64_t in, std::int64_t out, Rng& rng) {
    Conv3dSpec sp;
    sp.in_channels = in;
    sp.out_channels = out;
    sp.bias = cfg_.bias;
    return Conv3dLayer<T>(sp, rng);
  }

  PreHeadConfig cfg_;
  Conv3dLayer<T> conv1_, conv2_, conv3_, conv4_, conv5_, conv6_, conv7_, conv8_;
  BatchNorm3d<T> bn1_, bn2_, bn3_, bn4_, bn5_, bn6_, bn7_;
};

}  // namespace logonet
