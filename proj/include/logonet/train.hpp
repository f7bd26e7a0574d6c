#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "logonet/checkpoint.hpp"
#include "logonet/logonet.hpp"
#include "logonet/losses.hpp"
#include "logonet/masking.hpp"
#include "logonet/optim.hpp"
#include "logonet/phantom.hpp"
#include "logonet/prehead.hpp"
#include "logonet/runconfig.hpp"
#include "logonet/ssl_loss.hpp"

namespace logonet {

struct TrainLogEntry {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct DiceLogEntry {
  std::int64_t step = 0;
  double dice = 0.0;
};

// Smallest edge multiple a forward pass accepts: the global path divides by
// its total stride, the local path by grid extent times its own stride.
inline std::int64_t model_divisibility(const LoGoNetConfig& cfg) {
  std::int64_t d = cfg.global_cfg.total_stride();
  const std::int64_t n = cube_root_exact(cfg.partitions);
  d = std::max(d, n * cfg.local_cfg.total_stride());
  return d;
}

namespace detail_train {

template <typename T>
void check_cube_batch(const std::vector<Tensor<T>>& images, std::int64_t in_channels,
                      std::int64_t divisibility, const char* where) {
  if (images.empty()) throw ArgumentError(std::string(where) + ": empty corpus");
  const Shape5 s0 = images.front().shape();
  for (const auto& img : images) {
    const Shape5 s = img.shape();
    if (s != s0) {
      throw ShapeError(std::string(where) + ": volumes disagree in shape: " + shape_str(s0) +
                       " vs " + shape_str(s));
    }
  }
  if (s0[0] != 1) throw ShapeError(std::string(where) + ": volumes must have batch 1");
  if (s0[1] != in_channels) {
    throw ShapeError(std::string(where) + ": volumes carry " + std::to_string(s0[1]) +
                     " channels, config expects " + std::to_string(in_channels));
  }
  if (s0[2] != s0[3] || s0[3] != s0[4]) {
    throw ShapeError(std::string(where) + ": volumes must be cubes, got " + shape_str(s0));
  }
  if (s0[2] % divisibility != 0) {
    throw ShapeError(std::string(where) + ": volume edge " + std::to_string(s0[2]) +
                     " must be a multiple of " + std::to_string(divisibility));
  }
}

template <typename T>
ParamList<T> drop_prefix(ParamList<T> params, const std::string& prefix) {
  params.erase(std::remove_if(params.begin(), params.end(),
                              [&](const Parameter<T>& p) {
                                return p.name.rfind(prefix, 0) == 0;
                              }),
               params.end());
  return params;
}

template <typename T>
BufferList<T> drop_prefix(BufferList<T> buffers, const std::string& prefix) {
  buffers.erase(std::remove_if(buffers.begin(), buffers.end(),
                               [&](const BufferRef<T>& b) {
                                 return b.name.rfind(prefix, 0) == 0;
                               }),
                buffers.end());
  return buffers;
}

// Copies sample (1,C,S,H,W) into row b of a batch tensor.
template <typename T>
void place_sample(Tensor<T>& batch, std::int64_t b, const Tensor<T>& sample) {
  const std::int64_t n = sample.numel();
  std::copy(sample.data(), sample.data() + n, batch.data() + b * n);
}

template <typename T>
BufferList<T> optimizer_buffers(AdamW<T>& opt) {
  BufferList<T> out;
  for (auto& s : opt.state()) out.push_back({s.name, s.data});
  return out;
}

}  // namespace detail_train

// The masked pre-training model: the segmentation backbone (both paths, seg
// head unused) plus the slice-cluster prediction head. Checkpoints carry the
// backbone under its own names and the head under "pretrain_head.", so a
// fine-tune run can adopt the backbone while keeping a fresh seg head.
template <typename T = float>
struct PretrainModel {
  LoGoNet<T> backbone;
  PreHead<T> head;

  void set_training(bool on) {
    backbone.set_training(on);
    head.set_training(on);
  }

  ParamList<T> trainable_params() const {
    ParamList<T> all;
    backbone.collect(all);
    all = detail_train::drop_prefix(std::move(all), "head.");
    head.collect("pretrain_head", all);
    return all;
  }

  BufferList<T> buffers() {
    BufferList<T> all;
    backbone.collect_buffers(all);
    all = detail_train::drop_prefix(std::move(all), "head.");
    head.collect_buffers("pretrain_head", all);
    return all;
  }
};

template <typename T = float>
struct PretrainResult {
  std::vector<TrainLogEntry> log;  // steps executed by this call
  Checkpoint checkpoint;
  PseudoLabelSet pseudo_labels;
  std::int64_t start_step = 0;
  std::int64_t total_steps = 0;
  std::int64_t class_size = 0;  // score slots served by the head
};

// Masked multi-task pre-training. The whole schedule is a pure function of
// (config, corpus, seed): clusterers, pseudo-labels, init, batch order, and
// mask plans all derive from per-purpose rng splits keyed by step index, so
// resuming from the checkpoint of step k reproduces the uninterrupted run
// bit for bit.
// `max_steps` bounds how many steps THIS call executes (the lr schedule is
// always laid out over cfg.pretrain_steps); -1 runs to the end. A checkpoint
// taken at a bounded stop resumes into the identical uninterrupted schedule.
template <typename T = float>
PretrainResult<T> run_pretrain(const RunConfig& cfg, const std::vector<Tensor<T>>& images,
                               std::uint64_t seed, const Checkpoint* resume = nullptr,
                               std::int64_t max_steps = -1) {
  cfg.validate();
  if (cfg.phi1 <= 0.0) {
    throw ConfigError("run_pretrain: phi1 = 0 never masks a slice, nothing to learn from");
  }
  const LoGoNetConfig mc = cfg.model_config();
  detail_train::check_cube_batch(images, cfg.in_channels, model_divisibility(mc),
                                 "run_pretrain");
  const Shape5 vol_shape = images.front().shape();
  const std::int64_t S = vol_shape[2], H = vol_shape[3], W = vol_shape[4];
  const std::int64_t n_vols = static_cast<std::int64_t>(images.size());

  const Rng root(seed);

  // Pseudo-label bank from unmasked slice features; deterministic given
  // (seed, corpus), so a resumed run rebuilds the identical bank.
  std::vector<FeatureDataset> per_volume;
  per_volume.reserve(images.size());
  FeatureDataset all_feats;
  for (const auto& img : images) {
    FeatureDataset f = slice_features(img);
    all_feats.insert(all_feats.end(), f.begin(), f.end());
    per_volume.push_back(std::move(f));
  }
  const std::int64_t k_max =
      std::min<std::int64_t>(cfg.k_max, static_cast<std::int64_t>(all_feats.size()));
  const std::int64_t k_min = std::min<std::int64_t>(cfg.k_min, k_max);
  const ClustererEnsemble ensemble = train_ensemble(
      all_feats, cfg.clusterers_n, k_min, k_max, cfg.kmeans_params(), root.split(rng_stream::kKmeans));
  const PseudoLabelSet pl = assign_pseudo_labels(ensemble, per_volume);

  PretrainModel<T> model;
  Rng model_rng = root.split(rng_stream::kModelInit);
  model.backbone = LoGoNet<T>(mc, model_rng);
  PreHeadConfig hc;
  hc.input_dim = mc.fusion_channels;
  hc.x_dim = H;
  hc.y_dim = W;
  hc.z_dim = S;
  hc.cluster_num = ensemble.size();
  hc.class_size = ensemble.max_k();
  hc.bias = mc.global_cfg.bias;
  model.head = PreHead<T>(hc, model_rng);
  model.set_training(true);

  ParamList<T> params = model.trainable_params();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  AdamW<T> opt(params, cfg.adamw_config());

  std::int64_t start_step = 0;
  if (resume != nullptr) {
    const CheckpointEntry* cs = resume->find("train.class_size");
    if (cs != nullptr && static_cast<std::int64_t>(cs->data.at(0)) != hc.class_size) {
      throw ConfigError("run_pretrain: checkpoint was written with class_size " +
                        std::to_string(static_cast<std::int64_t>(cs->data.at(0))) +
                        ", this corpus/config yields " + std::to_string(hc.class_size));
    }
    restore_params(*resume, params);
    BufferList<T> bufs = model.buffers();
    restore_buffers(*resume, bufs);
    BufferList<T> ob = detail_train::optimizer_buffers(opt);
    restore_buffers(*resume, ob);
    opt.sync_step_from_buffer();
    const CheckpointEntry* st = resume->find("train.step");
    if (st == nullptr) throw ConfigError("run_pretrain: checkpoint lacks train.step");
    start_step = static_cast<std::int64_t>(st->data.at(0));
    if (start_step < 0 || start_step > cfg.pretrain_steps) {
      throw ConfigError("run_pretrain: checkpoint step " + std::to_string(start_step) +
                        " outside [0, " + std::to_string(cfg.pretrain_steps) + "]");
    }
  }

  const Rng batch_stream = root.split(rng_stream::kBatch);
  const Rng mask_stream = root.split(rng_stream::kMasking);
  const MaskParams mp = cfg.mask_params();
  const std::int64_t B = cfg.pretrain_batch;

  PretrainResult<T> out;
  out.pseudo_labels = pl;
  out.start_step = start_step;
  out.total_steps = cfg.pretrain_steps;
  out.class_size = hc.class_size;

  std::int64_t stop_step = cfg.pretrain_steps;
  if (max_steps >= 0) stop_step = std::min(stop_step, start_step + max_steps);

  for (std::int64_t step = start_step; step < stop_step; ++step) {
    Rng bs = batch_stream.split(static_cast<std::uint64_t>(step) + 1);
    Tensor<T> xb;
    {
      NoGradGuard guard;
      xb = Tensor<T>::zeros({B, vol_shape[1], S, H, W});
    }
    std::vector<PretrainTarget> targets;
    for (std::int64_t j = 0; j < B; ++j) {
      const std::int64_t idx = static_cast<std::int64_t>(bs.below(n_vols));
      Rng mj = mask_stream.split(static_cast<std::uint64_t>(step) + 1)
                   .split(static_cast<std::uint64_t>(j) + 1);
      MaskPlan plan = build_mask_plan(S, H, W, mp, mj);
      // A plan with no chain at all supervises nothing; redraw from the same
      // stream (still deterministic) rather than waste the step.
      int tries = 0;
      while (plan.masked_slices().empty()) {
        if (++tries > 10000) {
          throw ConfigError("run_pretrain: masking never selects a slice; raise phi1");
        }
        plan = build_mask_plan(S, H, W, mp, mj);
      }
      Tensor<T> masked = apply_mask(images[static_cast<std::size_t>(idx)], plan);
      detail_train::place_sample(xb, j, masked);
      const std::vector<PretrainTarget> tj = build_pretrain_targets(pl, idx, j, plan.masked_slices());
      targets.insert(targets.end(), tj.begin(), tj.end());
    }

    const double lr =
        cosine_warmup_lr(step, cfg.pretrain_warmup, cfg.pretrain_steps, cfg.lr);
    opt.zero_grad();
    Tensor<T> feats = model.backbone.forward_features(xb);
    Tensor<T> scores = model.head.forward(feats);
    Tensor<T> nll = pretrain_nll(scores, targets, cfg.tau);
    backward(nll);
    opt.step(lr);
    const double mean_nll =
        static_cast<double>(nll.vec()[0]) / static_cast<double>(std::max<std::size_t>(1, targets.size()));
    out.log.push_back({step, mean_nll, lr});
  }

  snapshot_params(out.checkpoint, params);
  BufferList<T> bufs = model.buffers();
  snapshot_buffers(out.checkpoint, bufs);
  BufferList<T> ob = detail_train::optimizer_buffers(opt);
  snapshot_buffers(out.checkpoint, ob);
  out.checkpoint.add_flat("train.step", {static_cast<float>(stop_step)});
  out.checkpoint.add_flat("train.class_size", {static_cast<float>(hc.class_size)});
  return out;
}

// Mean foreground Dice of argmax predictions over whole volumes, in eval
// mode with no graph construction. Restores training mode on exit.
template <typename T = float>
double evaluate_dice(LoGoNet<T>& model, const std::vector<PhantomVolume<T>>& vols,
                     std::int64_t num_classes) {
  if (vols.empty()) throw ArgumentError("evaluate_dice: empty volume list");
  model.set_training(false);
  double acc = 0.0;
  {
    NoGradGuard guard;
    for (const auto& v : vols) {
      Tensor<T> logits = model.forward(v.image);
      Tensor<std::uint8_t> pred = predict_segmentation(logits);
      acc += mean_foreground_dice(pred, v.labels, num_classes);
    }
  }
  model.set_training(true);
  return acc / static_cast<double>(vols.size());
}

struct FinetuneOptions {
  std::int64_t eval_every = 25;  // 0 disables periodic Dice evaluation
  double stop_dice = -1.0;       // early stop once the evaluated Dice exceeds this
  bool final_eval = true;
};

template <typename T = float>
struct FinetuneResult {
  std::vector<TrainLogEntry> log;
  std::vector<DiceLogEntry> dice_log;
  Checkpoint checkpoint;
  std::int64_t steps_run = 0;
  double final_dice = -1.0;  // last dice_log entry, -1 when never evaluated
};

// Supervised fine-tuning on labeled cubes with random crops. When `init` is
// given, backbone parameters load from it and the segmentation head keeps
// its fresh initialization (pretrain checkpoints carry no seg head).
// Dice evaluation runs on `eval_set` when provided, else on the training
// volumes.
template <typename T = float>
FinetuneResult<T> run_finetune(const RunConfig& cfg, const std::vector<PhantomVolume<T>>& data,
                               std::uint64_t seed, const Checkpoint* init = nullptr,
                               const FinetuneOptions& opts = {},
                               const std::vector<PhantomVolume<T>>* eval_set = nullptr) {
  cfg.validate();
  const LoGoNetConfig mc = cfg.model_config();
  const std::int64_t div = model_divisibility(mc);
  std::vector<Tensor<T>> images;
  images.reserve(data.size());
  for (const auto& v : data) {
    images.push_back(v.image);
    if (v.labels.shape() !=
        Shape5{1, 1, v.image.shape()[2], v.image.shape()[3], v.image.shape()[4]}) {
      throw ShapeError("run_finetune: labels " + shape_str(v.labels.shape()) +
                       " do not match image " + shape_str(v.image.shape()));
    }
  }
  detail_train::check_cube_batch(images, cfg.in_channels, div, "run_finetune");
  const Shape5 vol_shape = images.front().shape();
  const std::int64_t edge = vol_shape[2];
  const std::int64_t n_vols = static_cast<std::int64_t>(images.size());

  std::int64_t crop = std::min(cfg.crop, edge);
  crop -= crop % div;
  if (crop < div) {
    throw ShapeError("run_finetune: crop must be a positive multiple of " + std::to_string(div));
  }

  const Rng root(seed);
  Rng model_rng = root.split(rng_stream::kModelInit);
  LoGoNet<T> model(mc, model_rng);
  model.set_training(true);

  ParamList<T> params;
  model.collect(params);
  for (auto& p : params) p.tensor.set_requires_grad(true);
  if (init != nullptr) {
    restore_params(*init, params, {"head."});
    BufferList<T> bufs;
    model.collect_buffers(bufs);
    restore_buffers(*init, bufs, {"head."});
  }
  AdamW<T> opt(params, cfg.adamw_config());

  const Rng batch_stream = root.split(rng_stream::kBatch);
  const Rng crop_stream = root.split(rng_stream::kCrop);
  const DiceCeConfig loss_cfg = cfg.dicece_config();
  const std::int64_t B = cfg.finetune_batch;
  const std::vector<PhantomVolume<T>>& dice_set = eval_set != nullptr ? *eval_set : data;

  FinetuneResult<T> out;
  std::int64_t step = 0;
  for (; step < cfg.finetune_steps; ++step) {
    Rng bs = batch_stream.split(static_cast<std::uint64_t>(step) + 1);
    Rng cs = crop_stream.split(static_cast<std::uint64_t>(step) + 1);
    Tensor<T> xb;
    Tensor<std::uint8_t> yb;
    {
      NoGradGuard guard;
      xb = Tensor<T>::zeros({B, vol_shape[1], crop, crop, crop});
      yb = Tensor<std::uint8_t>::zeros({B, 1, crop, crop, crop});
    }
    for (std::int64_t j = 0; j < B; ++j) {
      const std::int64_t idx = static_cast<std::int64_t>(bs.below(n_vols));
      const std::int64_t os = static_cast<std::int64_t>(cs.below(edge - crop + 1));
      const std::int64_t oh = static_cast<std::int64_t>(cs.below(edge - crop + 1));
      const std::int64_t ow = static_cast<std::int64_t>(cs.below(edge - crop + 1));
      const Tensor<T>& img = images[static_cast<std::size_t>(idx)];
      const Tensor<std::uint8_t>& lbl = data[static_cast<std::size_t>(idx)].labels;
      T* xd = xb.data() + j * vol_shape[1] * crop * crop * crop;
      std::uint8_t* yd = yb.data() + j * crop * crop * crop;
      for (std::int64_t c = 0; c < vol_shape[1]; ++c)
        for (std::int64_t s = 0; s < crop; ++s)
          for (std::int64_t h = 0; h < crop; ++h) {
            const std::int64_t src =
                ((c * edge + os + s) * edge + oh + h) * edge + ow;
            const std::int64_t dst = ((c * crop + s) * crop + h) * crop;
            std::copy(img.data() + src, img.data() + src + crop, xd + dst);
          }
      for (std::int64_t s = 0; s < crop; ++s)
        for (std::int64_t h = 0; h < crop; ++h) {
          const std::int64_t src = ((os + s) * edge + oh + h) * edge + ow;
          const std::int64_t dst = (s * crop + h) * crop;
          std::copy(lbl.data() + src, lbl.data() + src + crop, yd + dst);
        }
    }

    const double lr =
        cosine_warmup_lr(step, cfg.finetune_warmup, cfg.finetune_steps, cfg.lr);
    opt.zero_grad();
    Tensor<T> logits = model.forward(xb);
    Tensor<T> loss = dice_ce_loss(logits, yb, loss_cfg);
    backward(loss);
    opt.step(lr);
    out.log.push_back({step, static_cast<double>(loss.vec()[0]), lr});

    const bool eval_now = opts.eval_every > 0 && (step + 1) % opts.eval_every == 0;
    if (eval_now) {
      const double d = evaluate_dice(model, dice_set, cfg.num_classes);
      out.dice_log.push_back({step + 1, d});
      out.final_dice = d;
      if (opts.stop_dice > 0.0 && d > opts.stop_dice) {
        ++step;
        break;
      }
    }
  }
  out.steps_run = step;

  if (opts.final_eval &&
      (out.dice_log.empty() || out.dice_log.back().step != step)) {
    const double d = evaluate_dice(model, dice_set, cfg.num_classes);
    out.dice_log.push_back({step, d});
    out.final_dice = d;
  }

  snapshot_params(out.checkpoint, params);
  BufferList<T> bufs;
  model.collect_buffers(bufs);
  snapshot_buffers(out.checkpoint, bufs);
  BufferList<T> ob = detail_train::optimizer_buffers(opt);
  snapshot_buffers(out.checkpoint, ob);
  out.checkpoint.add_flat("train.step", {static_cast<float>(step)});
  return out;
}

// Column text for the loss log: one line per step.
inline std::string train_log_csv(const std::vector<TrainLogEntry>& log) {
  std::string out = "step,loss,lr\n";
  for (const auto& e : log) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g\n", static_cast<long long>(e.step), e.loss,
                  e.lr);
    out += buf;
  }
  return out;
}

inline std::string dice_log_csv(const std::vector<DiceLogEntry>& log) {
  std::string out = "step,dice\n";
  for (const auto& e : log) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g\n", static_cast<long long>(e.step), e.dice);
    out += buf;
  }
  return out;
}

}  // namespace logonet
