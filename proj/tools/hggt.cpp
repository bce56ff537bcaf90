// SPDX-License-Identifier: Apache-2.0
#include "hggt/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace hggt::cli;

namespace {

template <typename T>
void opt(CLI::App* app, const std::string& flag, std::optional<T>& target, const std::string& help) {
  app->add_option_function<T>(flag, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view hand mesh and camera regression"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic multi-view dataset");
  opt(g, "--config", gen.config, "Run config (JSON)");
  g->add_option("--out", gen.out, "Dataset directory")->required();
  g->add_option("--num", gen.num, "Number of samples")->required();
  opt(g, "--views-min", gen.views_min, "Fewest views per sample");
  opt(g, "--views-max", gen.views_max, "Most views per sample");
  opt(g, "--image-size", gen.image_size, "Square image size in pixels");
  g->add_option("--seed", gen.seed, "Generator seed");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train a model");
  opt(t, "--config", tr.config, "Run config (JSON)");
  opt(t, "--data", tr.data, "Training dataset directory");
  opt(t, "--out", tr.out, "Output directory");
  opt(t, "--resume", tr.resume, "Checkpoint to resume from");
  opt(t, "--steps", tr.steps, "Total optimizer steps");
  opt(t, "--seed", tr.seed, "Training seed");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Compute metrics on a dataset");
  opt(e, "--config", ev.config, "Run config (JSON)");
  opt(e, "--checkpoint", ev.checkpoint, "Model checkpoint");
  opt(e, "--predictions", ev.predictions, "Directory of per-sample prediction files");
  e->add_flag("--gt-oracle", ev.gt_oracle, "Score the ground truth against itself");
  opt(e, "--data", ev.data, "Evaluation dataset directory");
  opt(e, "--out", ev.out, "Report path");
  opt(e, "--save-predictions", ev.save_predictions, "Write per-sample predictions here");
  opt(e, "--auc-threshold", ev.auc_threshold, "Joint PCK-AUC ceiling in mm");
  opt(e, "--auc-vertex-threshold", ev.auc_vertex_threshold, "Vertex PCK-AUC ceiling in mm");

  InferOptions in;
  auto* i = app.add_subcommand("infer", "Predict hand and cameras for one scene");
  opt(i, "--config", in.config, "Run config (JSON)");
  i->add_option("--checkpoint", in.checkpoint, "Model checkpoint")->required();
  i->add_option("--images", in.images, "Directory with the views of one scene")->required();
  i->add_option("--out", in.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    (void)app.exit(err);
    return kExitUsage;
  }

  try {
    if (g->parsed()) cmd_gen_data(gen);
    if (t->parsed()) cmd_train(tr);
    if (e->parsed()) cmd_eval(ev);
    if (i->parsed()) cmd_infer(in);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code_for(err);
  }
  return kExitOk;
}
