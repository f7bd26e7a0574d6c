#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "logonet/kmeans.hpp"
#include "logonet/logonet.hpp"
#include "logonet/losses.hpp"
#include "logonet/masking.hpp"
#include "logonet/optim.hpp"

namespace logonet {

// Flat experiment configuration. Every field with a published reference
// value defaults to it: masking (phi1 0.1, phi2 0.7, chain 5, patch sizes
// 1..96), temperature 0.1, AdamW (lr 1e-4, wd 1e-5, betas 0.9/0.999), crop
// 96, loss weights (1,1), k-means (350 iterations on 10% subsets), 8 local
// partitions. Step counts and the clusterer bank (4 members, K in [8,32])
// are desk-scale defaults; the reference pipeline trains for 100 pretrain /
// 5000 finetune epochs with K in [80,500], which these fields can express
// but do not default to.
struct RunConfig {
  std::string variant = "tiny";  // {tiny, normal, large}
  std::int64_t num_classes = 3;
  std::int64_t in_channels = 1;
  std::int64_t partitions_n = 8;
  bool use_local = true;

  double phi1 = 0.1;
  double phi2 = 0.7;
  std::int64_t mask_chain_m = 5;
  std::vector<std::int64_t> patch_sizes = {1, 2, 4, 8, 16, 32, 96};
  double tau = 0.1;

  std::int64_t clusterers_n = 4;
  std::int64_t k_min = 8;
  std::int64_t k_max = 32;
  std::int64_t kmeans_iterations = 350;
  double kmeans_subset_fraction = 0.1;

  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::int64_t crop = 96;

  double w_dl = 1.0;
  double w_cl = 1.0;

  std::int64_t pretrain_steps = 200;
  std::int64_t pretrain_warmup = 20;
  std::int64_t pretrain_batch = 1;
  std::int64_t finetune_steps = 500;
  std::int64_t finetune_warmup = 25;
  std::int64_t finetune_batch = 2;

  void validate() const {
    if (variant != "tiny" && variant != "normal" && variant != "large") {
      throw ConfigError("config: variant must be one of tiny/normal/large, got " + variant);
    }
    if (num_classes < 2) throw ConfigError("config: num_classes must be at least 2");
    if (in_channels < 1) throw ConfigError("config: in_channels must be positive");
    if (phi1 < 0.0 || phi1 > 1.0) throw ConfigError("config: phi1 must lie in [0, 1]");
    if (phi2 < 0.0 || phi2 > 1.0) throw ConfigError("config: phi2 must lie in [0, 1]");
    if (mask_chain_m < 1) throw ConfigError("config: mask_chain_m must be positive");
    if (patch_sizes.empty()) throw ConfigError("config: patch_sizes must be non-empty");
    for (const std::int64_t p : patch_sizes) {
      if (p < 1) throw ConfigError("config: patch_sizes entries must be positive");
    }
    if (tau <= 0.0) throw ConfigError("config: tau must be positive");
    if (clusterers_n < 1) throw ConfigError("config: clusterers_n must be positive");
    if (k_min < 1 || k_max < k_min) throw ConfigError("config: need 1 <= k_min <= k_max");
    if (kmeans_iterations < 1) throw ConfigError("config: kmeans_iterations must be positive");
    if (kmeans_subset_fraction <= 0.0 || kmeans_subset_fraction > 1.0) {
      throw ConfigError("config: kmeans_subset_fraction must lie in (0, 1]");
    }
    if (lr <= 0.0) throw ConfigError("config: lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be non-negative");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("config: betas must lie in [0, 1)");
    }
    if (crop < 1) throw ConfigError("config: crop must be positive");
    if (w_dl < 0.0 || w_cl < 0.0 || w_dl + w_cl <= 0.0) {
      throw ConfigError("config: loss weights must be non-negative and not both zero");
    }
    if (pretrain_steps < 1 || finetune_steps < 1) {
      throw ConfigError("config: step counts must be positive");
    }
    if (pretrain_warmup < 0 || pretrain_warmup >= pretrain_steps) {
      throw ConfigError("config: pretrain_warmup must lie in [0, pretrain_steps)");
    }
    if (finetune_warmup < 0 || finetune_warmup >= finetune_steps) {
      throw ConfigError("config: finetune_warmup must lie in [0, finetune_steps)");
    }
    if (pretrain_batch < 1 || finetune_batch < 1) {
      throw ConfigError("config: batch sizes must be positive");
    }
    const std::int64_t n = cube_root_exact(partitions_n);
    if (n < 1) throw ConfigError("config: partitions_n must be a perfect cube");
  }

  LoGoNetConfig model_config() const {
    LoGoNetConfig cfg;
    if (variant == "tiny") {
      cfg = LoGoNetConfig::tiny(in_channels, num_classes);
    } else if (variant == "normal") {
      cfg = LoGoNetConfig::normal(in_channels, num_classes);
    } else {
      cfg = LoGoNetConfig::large(in_channels, num_classes);
    }
    cfg.partitions = partitions_n;
    cfg.use_local = use_local;
    return cfg;
  }

  MaskParams mask_params() const {
    MaskParams mp;
    mp.anchor_prob = phi1;
    mp.patch_prob = phi2;
    mp.chain_length = mask_chain_m;
    mp.patch_sizes = patch_sizes;
    return mp;
  }

  KMeansTrainParams kmeans_params() const {
    KMeansTrainParams kp;
    kp.iterations = kmeans_iterations;
    kp.subset_fraction = kmeans_subset_fraction;
    return kp;
  }

  AdamWConfig adamw_config() const {
    AdamWConfig ac;
    ac.beta1 = beta1;
    ac.beta2 = beta2;
    ac.weight_decay = weight_decay;
    return ac;
  }

  DiceCeConfig dicece_config() const {
    DiceCeConfig dc;
    dc.w_dl = w_dl;
    dc.w_cl = w_cl;
    return dc;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["variant"] = variant;
    j["num_classes"] = num_classes;
    j["in_channels"] = in_channels;
    j["partitions_n"] = partitions_n;
    j["use_local"] = use_local;
    j["phi1"] = phi1;
    j["phi2"] = phi2;
    j["mask_chain_m"] = mask_chain_m;
    j["patch_sizes"] = patch_sizes;
    j["tau"] = tau;
    j["clusterers_n"] = clusterers_n;
    j["k_min"] = k_min;
    j["k_max"] = k_max;
    j["kmeans_iterations"] = kmeans_iterations;
    j["kmeans_subset_fraction"] = kmeans_subset_fraction;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["crop"] = crop;
    j["w_dl"] = w_dl;
    j["w_cl"] = w_cl;
    j["pretrain_steps"] = pretrain_steps;
    j["pretrain_warmup"] = pretrain_warmup;
    j["pretrain_batch"] = pretrain_batch;
    j["finetune_steps"] = finetune_steps;
    j["finetune_warmup"] = finetune_warmup;
    j["finetune_batch"] = finetune_batch;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig cfg;
    const nlohmann::json known = cfg.to_json();
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ConfigError("config: unknown key \"" + key + "\"");
      (void)value;
    }
    try {
      if (j.contains("variant")) cfg.variant = j.at("variant").get<std::string>();
      if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<std::int64_t>();
      if (j.contains("in_channels")) cfg.in_channels = j.at("in_channels").get<std::int64_t>();
      if (j.contains("partitions_n")) cfg.partitions_n = j.at("partitions_n").get<std::int64_t>();
      if (j.contains("use_local")) cfg.use_local = j.at("use_local").get<bool>();
      if (j.contains("phi1")) cfg.phi1 = j.at("phi1").get<double>();
      if (j.contains("phi2")) cfg.phi2 = j.at("phi2").get<double>();
      if (j.contains("mask_chain_m")) cfg.mask_chain_m = j.at("mask_chain_m").get<std::int64_t>();
      if (j.contains("patch_sizes")) {
        cfg.patch_sizes = j.at("patch_sizes").get<std::vector<std::int64_t>>();
      }
      if (j.contains("tau")) cfg.tau = j.at("tau").get<double>();
      if (j.contains("clusterers_n")) cfg.clusterers_n = j.at("clusterers_n").get<std::int64_t>();
      if (j.contains("k_min")) cfg.k_min = j.at("k_min").get<std::int64_t>();
      if (j.contains("k_max")) cfg.k_max = j.at("k_max").get<std::int64_t>();
      if (j.contains("kmeans_iterations")) {
        cfg.kmeans_iterations = j.at("kmeans_iterations").get<std::int64_t>();
      }
      if (j.contains("kmeans_subset_fraction")) {
        cfg.kmeans_subset_fraction = j.at("kmeans_subset_fraction").get<double>();
      }
      if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
      if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
      if (j.contains("beta1")) cfg.beta1 = j.at("beta1").get<double>();
      if (j.contains("beta2")) cfg.beta2 = j.at("beta2").get<double>();
      if (j.contains("crop")) cfg.crop = j.at("crop").get<std::int64_t>();
      if (j.contains("w_dl")) cfg.w_dl = j.at("w_dl").get<double>();
      if (j.contains("w_cl")) cfg.w_cl = j.at("w_cl").get<double>();
      if (j.contains("pretrain_steps")) {
        cfg.pretrain_steps = j.at("pretrain_steps").get<std::int64_t>();
      }
      if (j.contains("pretrain_warmup")) {
        cfg.pretrain_warmup = j.at("pretrain_warmup").get<std::int64_t>();
      }
      if (j.contains("pretrain_batch")) {
        cfg.pretrain_batch = j.at("pretrain_batch").get<std::int64_t>();
      }
      if (j.contains("finetune_steps")) {
        cfg.finetune_steps = j.at("finetune_steps").get<std::int64_t>();
      }
      if (j.contains("finetune_warmup")) {
        cfg.finetune_warmup = j.at("finetune_warmup").get<std::int64_t>();
      }
      if (j.contains("finetune_batch")) {
        cfg.finetune_batch = j.at("finetune_batch").get<std::int64_t>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: malformed value: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }

  static RunConfig load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: " + path + " is not a JSON object");
    return from_json(j);
  }

  // Fully-resolved echo written next to run outputs.
  void save_file(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << to_json().dump(2) << "\n";
    if (!f) throw IoError("write failed: " + path);
  }
};

// Top-level keys whose values differ between two configs; ablation arms are
// required to differ in exactly one.
inline std::vector<std::string> config_diff_keys(const RunConfig& a, const RunConfig& b) {
  const nlohmann::json ja = a.to_json();
  const nlohmann::json jb = b.to_json();
  std::vector<std::string> diff;
  for (const auto& [key, value] : ja.items()) {
    if (jb.at(key) != value) diff.push_back(key);
  }
  return diff;
}

}  // namespace logonet
