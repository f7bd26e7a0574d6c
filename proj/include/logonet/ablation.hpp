#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "logonet/phantom.hpp"
#include "logonet/runconfig.hpp"
#include "logonet/train.hpp"

namespace logonet {

struct AblationResult {
  std::string arm;
  std::vector<double> per_seed;
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation (n-1 denominator)
};

inline void finalize_stats(AblationResult& r) {
  const std::size_t n = r.per_seed.size();
  double acc = 0.0;
  for (const double d : r.per_seed) acc += d;
  r.mean = n > 0 ? acc / static_cast<double>(n) : 0.0;
  double ss = 0.0;
  for (const double d : r.per_seed) ss += (d - r.mean) * (d - r.mean);
  r.stdev = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
}

struct AblationArm {
  std::string name;
  RunConfig config;
  bool with_pretrain = false;
};

// The four study designs. Each arm set shares its base config except for the
// single varied factor: masking strength on/off, clusterer-bank size, the
// two loss weights, and dual-path vs global-only.
inline std::vector<AblationArm> ablation_arms(const std::string& name, const RunConfig& base) {
  std::vector<AblationArm> arms;
  if (name == "mask_onoff") {
    RunConfig on = base;
    on.phi2 = 0.7;
    RunConfig off = base;
    off.phi2 = 0.0;
    arms.push_back({"mask_on", on, true});
    arms.push_back({"mask_off", off, true});
  } else if (name == "clusterer_sweep") {
    for (const std::int64_t n : {std::int64_t{1}, std::int64_t{4}, std::int64_t{8}}) {
      RunConfig c = base;
      c.clusterers_n = n;
      arms.push_back({"clusterers_" + std::to_string(n), c, true});
    }
  } else if (name == "loss_weights") {
    RunConfig both = base;
    both.w_dl = 1.0;
    both.w_cl = 1.0;
    RunConfig ce_only = both;
    ce_only.w_dl = 0.0;
    RunConfig dice_only = both;
    dice_only.w_cl = 0.0;
    arms.push_back({"dice1_ce1", both, false});
    arms.push_back({"dice0_ce1", ce_only, false});
    arms.push_back({"dice1_ce0", dice_only, false});
  } else if (name == "logo_vs_ulka") {
    RunConfig dual = base;
    dual.use_local = true;
    RunConfig single = base;
    single.use_local = false;
    arms.push_back({"dual_path", dual, false});
    arms.push_back({"global_only", single, false});
  } else {
    throw ArgumentError("run_ablation: unknown ablation name: " + name);
  }
  for (std::size_t i = 1; i < arms.size(); ++i) {
    const std::vector<std::string> diff = config_diff_keys(arms[0].config, arms[i].config);
    if (diff.size() != 1) {
      throw ArgumentError("run_ablation: arms " + arms[0].name + " and " + arms[i].name +
                          " differ in " + std::to_string(diff.size()) + " keys, expected 1");
    }
  }
  return arms;
}

struct AblationDataPlan {
  std::int64_t edge = 16;
  std::int64_t n_train = 4;
  std::int64_t n_held = 2;
};

// Deterministic in-memory corpus, the in-RAM twin of gen_phantom_corpus.
inline std::vector<PhantomVolume<float>> make_phantom_set(std::int64_t count, std::int64_t edge,
                                                          std::int64_t num_classes,
                                                          std::uint64_t seed) {
  std::vector<PhantomVolume<float>> out;
  const Rng data = Rng(seed).split(rng_stream::kData);
  for (std::int64_t i = 0; i < count; ++i) {
    const Rng vrng = data.split(static_cast<std::uint64_t>(i) + 1);
    const PhantomSpec spec = random_phantom_spec(edge, edge, edge, num_classes, vrng.split(1));
    out.push_back(generate_phantom<float>(spec, vrng.split(2)));
  }
  return out;
}

// Every arm of one seed shares the same train/held-out volumes and the same
// model init/batch/mask streams; only the single varied config key differs.
inline std::vector<AblationResult> run_ablation(const std::string& name, const RunConfig& base,
                                                const std::vector<std::uint64_t>& seeds,
                                                const AblationDataPlan& plan = {}) {
  if (seeds.size() < 2) {
    throw ArgumentError("run_ablation: need at least 2 seeds for mean reporting");
  }
  const std::vector<AblationArm> arms = ablation_arms(name, base);
  std::vector<AblationResult> results;
  for (const AblationArm& arm : arms) results.push_back({arm.name, {}, 0.0, 0.0});

  for (const std::uint64_t seed : seeds) {
    const std::vector<PhantomVolume<float>> all =
        make_phantom_set(plan.n_train + plan.n_held, plan.edge, base.num_classes, seed);
    const std::vector<PhantomVolume<float>> train(all.begin(), all.begin() + plan.n_train);
    const std::vector<PhantomVolume<float>> held(all.begin() + plan.n_train, all.end());
    std::vector<Tensor<float>> train_images;
    for (const auto& v : train) train_images.push_back(v.image);

    for (std::size_t a = 0; a < arms.size(); ++a) {
      const AblationArm& arm = arms[a];
      Checkpoint pre_ck;
      const Checkpoint* init = nullptr;
      if (arm.with_pretrain) {
        PretrainResult<float> pre = run_pretrain(arm.config, train_images, seed);
        pre_ck = std::move(pre.checkpoint);
        init = &pre_ck;
      }
      FinetuneOptions opts;
      opts.eval_every = 0;  // held-out Dice once, at the end
      FinetuneResult<float> ft = run_finetune(arm.config, train, seed, init, opts, &held);
      results[a].per_seed.push_back(ft.final_dice);
    }
  }
  for (auto& r : results) finalize_stats(r);
  return results;
}

inline std::string ablation_table_csv(const std::vector<AblationResult>& results) {
  std::string out = "arm,mean,std";
  if (!results.empty()) {
    for (std::size_t i = 0; i < results.front().per_seed.size(); ++i) {
      out += ",seed" + std::to_string(i);
    }
  }
  out += "\n";
  for (const auto& r : results) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f", r.mean, r.stdev);
    out += r.arm + "," + buf;
    for (const double d : r.per_seed) {
      std::snprintf(buf, sizeof(buf), ",%.6f", d);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

inline std::string ablation_table_text(const std::string& name,
                                       const std::vector<AblationResult>& results) {
  std::size_t w = 12;
  for (const auto& r : results) w = std::max(w, r.arm.size() + 2);
  std::string out = "ablation: " + name + " (held-out mean foreground Dice)\n";
  out += std::string(w, ' ');
  out += "  mean +- std   per-seed\n";
  for (const auto& r : results) {
    std::string line = r.arm;
    line.resize(w, ' ');
    char buf[64];
    std::snprintf(buf, sizeof(buf), "  %.4f +- %.4f ", r.mean, r.stdev);
    line += buf;
    for (const double d : r.per_seed) {
      std::snprintf(buf, sizeof(buf), " %.4f", d);
      line += buf;
    }
    out += line + "\n";
  }
  return out;
}

// Paired pretrain-vs-scratch study: per seed, fine-tune twice from the same
// init stream (once adopting the pretrained backbone) and record how many
// steps each needs to reach the Dice threshold on the held-out split.
struct PretrainEffectRun {
  std::uint64_t seed = 0;
  std::int64_t steps_pretrained = -1;  // -1: threshold never reached
  std::int64_t steps_scratch = -1;
  double dice_pretrained = 0.0;  // final held-out Dice
  double dice_scratch = 0.0;
};

struct PretrainEffectReport {
  double threshold = 0.8;
  std::vector<PretrainEffectRun> runs;
  int wins = 0;  // runs where pretrained needs no more steps than scratch
};

inline std::int64_t steps_to_threshold(const std::vector<DiceLogEntry>& log, double threshold) {
  for (const auto& e : log) {
    if (e.dice >= threshold) return e.step;
  }
  return -1;
}

inline PretrainEffectReport run_pretrain_effect(const RunConfig& cfg,
                                                const std::vector<std::uint64_t>& seeds,
                                                double threshold = 0.8,
                                                const AblationDataPlan& plan = {},
                                                std::int64_t eval_every = 10) {
  if (seeds.empty()) throw ArgumentError("run_pretrain_effect: need at least one seed");
  PretrainEffectReport report;
  report.threshold = threshold;
  for (const std::uint64_t seed : seeds) {
    const std::vector<PhantomVolume<float>> all =
        make_phantom_set(plan.n_train + plan.n_held, plan.edge, cfg.num_classes, seed);
    const std::vector<PhantomVolume<float>> train(all.begin(), all.begin() + plan.n_train);
    const std::vector<PhantomVolume<float>> held(all.begin() + plan.n_train, all.end());
    std::vector<Tensor<float>> train_images;
    for (const auto& v : train) train_images.push_back(v.image);

    PretrainResult<float> pre = run_pretrain(cfg, train_images, seed);
    FinetuneOptions opts;
    opts.eval_every = eval_every;
    opts.stop_dice = threshold;
    FinetuneResult<float> ft_pre =
        run_finetune(cfg, train, seed, &pre.checkpoint, opts, &held);
    FinetuneResult<float> ft_scr = run_finetune(cfg, train, seed, nullptr, opts, &held);

    PretrainEffectRun run;
    run.seed = seed;
    run.steps_pretrained = steps_to_threshold(ft_pre.dice_log, threshold);
    run.steps_scratch = steps_to_threshold(ft_scr.dice_log, threshold);
    run.dice_pretrained = ft_pre.final_dice;
    run.dice_scratch = ft_scr.final_dice;
    const bool pre_hit = run.steps_pretrained >= 0;
    const bool scr_hit = run.steps_scratch >= 0;
    if ((pre_hit && !scr_hit) || (pre_hit && scr_hit && run.steps_pretrained <= run.steps_scratch)) {
      ++report.wins;
    }
    report.runs.push_back(run);
  }
  return report;
}

inline std::string pretrain_effect_table(const PretrainEffectReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "pretrain vs scratch, steps to held-out Dice >= %.2f\n",
                r.threshold);
  std::string out = buf;
  out += "seed          steps(pretrained)  steps(scratch)  dice(pretrained)  dice(scratch)\n";
  for (const auto& run : r.runs) {
    const std::string sp =
        run.steps_pretrained < 0 ? "never" : std::to_string(run.steps_pretrained);
    const std::string ss = run.steps_scratch < 0 ? "never" : std::to_string(run.steps_scratch);
    std::snprintf(buf, sizeof(buf), "%-12llu  %-17s  %-14s  %-16.4f  %.4f\n",
                  static_cast<unsigned long long>(run.seed), sp.c_str(), ss.c_str(),
                  run.dice_pretrained, run.dice_scratch);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "pretrained wins: %d of %zu\n", r.wins, r.runs.size());
  out += buf;
  return out;
}

}  // namespace logonet
