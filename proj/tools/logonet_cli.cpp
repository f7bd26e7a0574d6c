// Command-line surface for the large-kernel-attention dual-path segmentation
// pipeline: synthetic data generation, masked pre-training, fine-tuning,
// inference, cost analysis, and the ablation harness.
//
// Exit codes: 0 ok, 1 config/argument error, 2 data/format error, 3 shape
// error.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "logonet/ablation.hpp"
#include "logonet/checkpoint.hpp"
#include "logonet/costing.hpp"
#include "logonet/logonet.hpp"
#include "logonet/phantom.hpp"
#include "logonet/runconfig.hpp"
#include "logonet/train.hpp"
#include "logonet/volume_io.hpp"

namespace {

using namespace logonet;

struct CommonArgs {
  std::string config_path;
  std::string variant;
  std::uint64_t seed = 1;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required) {
  cmd->add_option("--config", args.config_path, "JSON run configuration (defaults when absent)");
  cmd->add_option("--variant", args.variant, "model preset override")
      ->check(CLI::IsMember({"tiny", "normal", "large"}));
  cmd->add_option("--seed", args.seed, "root seed; equal seeds give bitwise-equal artifacts");
  auto* out = cmd->add_option("--out", args.out, "output path");
  if (out_required) out->required();
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = RunConfig::load_file(args.config_path);
  if (!args.variant.empty()) {
    cfg.variant = args.variant;
    cfg.validate();
  }
  return cfg;
}

// Every command writes the fully resolved configuration next to its outputs:
// <out>/run_config.json for directory outputs, <out>.config.json otherwise.
void echo_config(const RunConfig& cfg, const std::string& out, bool out_is_dir) {
  const std::filesystem::path p = out_is_dir
      ? std::filesystem::path(out) / "run_config.json"
      : std::filesystem::path(out + ".config.json");
  cfg.save_file(p.string());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f.good()) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f.good()) throw IoError("write failed: " + path);
}

int cmd_gen_data(const CommonArgs& args, std::int64_t count, std::int64_t edge) {
  const RunConfig cfg = resolve_config(args);
  const auto pairs =
      gen_phantom_corpus(args.out, count, edge, edge, edge, cfg.num_classes, args.seed);
  if (count > 0) echo_config(cfg, args.out, true);
  std::printf("gen-data: wrote %zu volume pairs under %s\n", pairs.size(), args.out.c_str());
  return 0;
}

int cmd_pretrain(const CommonArgs& args, const std::string& data_dir,
                 const std::string& resume_path, std::int64_t max_steps) {
  const RunConfig cfg = resolve_config(args);
  const auto corpus = load_phantom_corpus<float>(data_dir);
  std::vector<Tensor<float>> images;
  for (const auto& v : corpus) images.push_back(v.image);

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = Checkpoint::load(resume_path);
    resume_ptr = &resume;
  }

  const PretrainResult<float> result =
      run_pretrain<float>(cfg, images, args.seed, resume_ptr, max_steps);
  result.checkpoint.save(args.out);
  write_text(args.out + ".loss.csv", train_log_csv(result.log));
  write_pseudo_labels(args.out + ".labels.lgpl", result.pseudo_labels);
  echo_config(cfg, args.out, false);
  const double last = result.log.empty() ? 0.0 : result.log.back().loss;
  std::printf("pretrain: steps %lld..%lld of %lld, final loss %.6f, checkpoint %s\n",
              static_cast<long long>(result.start_step),
              static_cast<long long>(result.start_step + static_cast<std::int64_t>(result.log.size())),
              static_cast<long long>(result.total_steps), last, args.out.c_str());
  return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& data_dir,
                 const std::string& init_path, std::int64_t eval_every) {
  const RunConfig cfg = resolve_config(args);
  const auto corpus = load_phantom_corpus<float>(data_dir);

  Checkpoint init;
  const Checkpoint* init_ptr = nullptr;
  if (!init_path.empty()) {
    init = Checkpoint::load(init_path);
    init_ptr = &init;
  }

  FinetuneOptions opts;
  opts.eval_every = eval_every;
  const FinetuneResult<float> result = run_finetune<float>(cfg, corpus, args.seed, init_ptr, opts);
  result.checkpoint.save(args.out);
  write_text(args.out + ".loss.csv", train_log_csv(result.log));
  write_text(args.out + ".dice.csv", dice_log_csv(result.dice_log));
  echo_config(cfg, args.out, false);
  std::printf("finetune: %lld steps, final train Dice %.4f, checkpoint %s\n",
              static_cast<long long>(result.steps_run), result.final_dice, args.out.c_str());
  return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& ckpt_path,
              const std::string& input_path) {
  const RunConfig cfg = resolve_config(args);
  const Tensor<float> volume = read_volume_f32(input_path);
  const Shape5 s = volume.shape();
  const LoGoNetConfig mc = cfg.model_config();
  const std::int64_t div = model_divisibility(mc);
  if (s[2] != s[3] || s[3] != s[4]) {
    throw ShapeError("infer: volume must be a cube, got " + shape_str(s));
  }
  if (s[2] % div != 0) {
    throw ShapeError("infer: volume edge " + std::to_string(s[2]) +
                     " must be a multiple of " + std::to_string(div));
  }
  if (s[1] != cfg.in_channels) {
    throw ShapeError("infer: volume carries " + std::to_string(s[1]) +
                     " channels, config expects " + std::to_string(cfg.in_channels));
  }

  const Checkpoint ck = Checkpoint::load(ckpt_path);
  Rng rng = Rng(args.seed).split(rng_stream::kModelInit);
  LoGoNet<float> model(mc, rng);
  ParamList<float> params;
  model.collect(params);
  restore_params(ck, params);
  BufferList<float> bufs;
  model.collect_buffers(bufs);
  restore_buffers(ck, bufs);
  model.set_training(false);

  Tensor<std::uint8_t> pred;
  {
    NoGradGuard guard;
    Tensor<float> logits = model.forward(volume);
    pred = predict_segmentation(logits);
  }
  write_volume(args.out, pred);
  echo_config(cfg, args.out, false);
  std::printf("infer: wrote %s\n", args.out.c_str());
  return 0;
}

int cmd_analyze_flops(const CommonArgs& args, std::int64_t edge) {
  const RunConfig cfg = resolve_config(args);
  const LoGoNetConfig mc = cfg.model_config();
  if (edge % model_divisibility(mc) != 0) {
    throw ShapeError("analyze-flops: edge " + std::to_string(edge) +
                     " must be a multiple of " + std::to_string(model_divisibility(mc)));
  }
  Rng rng(args.seed);
  LoGoNet<float> model(mc, rng);
  model.set_training(false);
  const Shape5 shape{1, cfg.in_channels, edge, edge, edge};
  const CostReport report = count_model(
      [&](const Tensor<float>& x) { return model.forward(x); }, shape, cfg.variant);
  std::string text = report_text(report);
  if (cfg.variant == "normal") text += reference_parity_text(report);
  std::fputs(text.c_str(), stdout);
  if (!args.out.empty()) {
    write_text(args.out, text);
    write_text(args.out + ".csv", report_csv(report));
    echo_config(cfg, args.out, false);
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& study,
               std::vector<std::uint64_t> seeds, const AblationDataPlan& plan) {
  const RunConfig cfg = resolve_config(args);
  if (seeds.empty()) seeds = {1, 2};
  const auto results = run_ablation(study, cfg, seeds, plan);
  const std::string text = ablation_table_text(study, results);
  std::fputs(text.c_str(), stdout);
  if (!args.out.empty()) {
    write_text(args.out, text);
    write_text(args.out + ".csv", ablation_table_csv(results));
    echo_config(cfg, args.out, false);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D segmentation with dual local/global large-kernel-attention encoding"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  std::int64_t gen_count = 8;
  std::int64_t gen_edge = 32;
  auto* gen = app.add_subcommand("gen-data", "generate a deterministic phantom corpus");
  add_common(gen, gen_args, true);
  gen->add_option("--count", gen_count, "number of volumes")->check(CLI::NonNegativeNumber);
  gen->add_option("--edge", gen_edge, "cube edge length in voxels");

  CommonArgs pre_args;
  std::string pre_data;
  std::string pre_resume;
  std::int64_t pre_max_steps = -1;
  auto* pre = app.add_subcommand("pretrain", "masked multi-task pre-training");
  add_common(pre, pre_args, true);
  pre->add_option("--data", pre_data, "corpus directory from gen-data")->required();
  pre->add_option("--resume", pre_resume, "checkpoint to continue from");
  pre->add_option("--max-steps", pre_max_steps,
                  "stop after this many steps this run (schedule unchanged; -1 = to the end)");

  CommonArgs ft_args;
  std::string ft_data;
  std::string ft_init;
  std::int64_t ft_eval_every = 25;
  auto* ft = app.add_subcommand("finetune", "supervised fine-tuning on labeled volumes");
  add_common(ft, ft_args, true);
  ft->add_option("--data", ft_data, "corpus directory from gen-data")->required();
  ft->add_option("--init", ft_init, "pretrain checkpoint to adopt the backbone from");
  ft->add_option("--eval-every", ft_eval_every, "steps between Dice evaluations (0 = final only)");

  CommonArgs inf_args;
  std::string inf_ckpt;
  std::string inf_input;
  auto* inf = app.add_subcommand("infer", "argmax segmentation of one volume");
  add_common(inf, inf_args, true);
  inf->add_option("--ckpt", inf_ckpt, "fine-tuned checkpoint")->required();
  inf->add_option("--input", inf_input, "volume file to segment")->required();

  CommonArgs an_args;
  std::int64_t an_edge = 96;
  auto* an = app.add_subcommand("analyze-flops", "per-layer parameter and MAC report");
  add_common(an, an_args, false);
  an->add_option("--edge", an_edge, "cube edge length of the analyzed input");

  CommonArgs ab_args;
  std::string ab_study;
  std::vector<std::uint64_t> ab_seeds;
  AblationDataPlan ab_plan;
  auto* ab = app.add_subcommand("ablate", "paired-arm ablation studies on phantoms");
  add_common(ab, ab_args, false);
  ab->add_option("--study", ab_study,
                 "one of mask_onoff, clusterer_sweep, loss_weights, logo_vs_ulka")
      ->required();
  ab->add_option("--seeds", ab_seeds, "seed list (default 1,2)")->delimiter(',');
  ab->add_option("--edge", ab_plan.edge, "phantom cube edge");
  ab->add_option("--train-n", ab_plan.n_train, "training volumes per seed");
  ab->add_option("--held-n", ab_plan.n_held, "held-out volumes per seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args, gen_count, gen_edge);
    if (pre->parsed()) return cmd_pretrain(pre_args, pre_data, pre_resume, pre_max_steps);
    if (ft->parsed()) return cmd_finetune(ft_args, ft_data, ft_init, ft_eval_every);
    if (inf->parsed()) return cmd_infer(inf_args, inf_ckpt, inf_input);
    if (an->parsed()) return cmd_analyze_flops(an_args, an_edge);
    if (ab->parsed()) return cmd_ablate(ab_args, ab_study, ab_seeds, ab_plan);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const PartitionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
