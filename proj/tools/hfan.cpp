#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"

using namespace hfan;
using namespace hfan::cli;

int main(int argc, char** argv) {
  CLI::App app{"Two-stream video object segmentation: data generation, training, inference, evaluation"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  std::optional<fs::path> config;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "key=value run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override one key, e.g. --set train.iters=100")->take_all();
  };

  fs::path out;
  bool force = false;
  std::string flow_failure;
  auto* gen = app.add_subcommand("gen", "write a synthetic train/val dataset");
  add_config(gen);
  gen->add_option("-o,--out", out, "dataset directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");
  gen->add_option("--flow-failure", flow_failure, "none, zeroed or noisy (same as data.flow_failure)");

  TrainOptions topt;
  std::optional<std::uint64_t> iters;
  auto* train = app.add_subcommand("train", "train a model on DATA/train");
  add_config(train);
  train->add_option("-d,--data", topt.data, "dataset directory")->required();
  train->add_option("-r,--run", topt.run, "run directory")->required();
  train->add_option("--iters", iters, "same as train.iters");
  train->add_flag("--resume", topt.resume, "continue from RUN/model.ckpt");
  train->add_option("--stop-at", topt.stop_at, "pause after this many iterations; continue later with --resume");

  InferOptions iopt;
  std::vector<double> ms;
  auto* infer = app.add_subcommand("infer", "predict masks for one sequence or a directory of sequences");
  add_config(infer);
  infer->add_option("-k,--checkpoint", iopt.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("-i,--input", iopt.input, "sequence or split directory")->required();
  infer->add_option("-o,--out", iopt.out, "output directory")->required();
  auto* ms_opt = infer->add_option("--ms", ms, "multi-scale inference; scales default to 0.75 1.0 1.25")
                     ->expected(0, CLI::detail::expected_max_vector_size);
  infer->add_flag("--prob", iopt.probabilities, "also write foreground probability maps");

  fs::path pred, gt;
  auto* ev = app.add_subcommand("eval", "score predicted masks against ground truth");
  add_config(ev);
  ev->add_option("-p,--pred", pred, "prediction directory written by infer")->required();
  ev->add_option("-g,--gt", gt, "ground-truth split directory")->required();
  ev->add_option("-o,--out", out, "report directory")->required();

  bool corrupt = false;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable graph");
  gc->add_flag("--corrupt", corrupt, "add a graph with a wrong backward rule (must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(corrupt, std::cout);
    if (!flow_failure.empty()) overrides.push_back("data.flow_failure=" + flow_failure);
    if (iters) overrides.push_back("train.iters=" + std::to_string(*iters));
    // Inference and evaluation default to the config saved next to the checkpoint.
    if (infer->parsed() && !config && fs::exists(iopt.checkpoint.parent_path() / "config.txt"))
      config = iopt.checkpoint.parent_path() / "config.txt";
    const RunConfig cfg = resolve_config(config, overrides);
    if (gen->parsed()) return cmd_gen(cfg, out, force, std::cout);
    if (train->parsed()) return cmd_train(cfg, topt, std::cout);
    if (infer->parsed()) {
      if (ms_opt->count() > 0) iopt.scales = ms.empty() ? kMultiScale : ms;
      return cmd_infer(cfg, iopt, std::cout);
    }
    return cmd_eval(cfg, pred, gt, out, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "hfan: " << e.what() << "\n";
    return exit_code(e);
  }
}
