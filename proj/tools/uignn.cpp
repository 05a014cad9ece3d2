#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "uignn/cli.hpp"

namespace {

void add_graph_flags(CLI::App* cmd, uignn::cli::GraphOptions& g) {
  cmd->add_option("--data", g.data, "Speed CSV: timestamp column then one column per sensor")->required();
  cmd->add_option("--distances", g.distances, "Distance CSV with from,to,cost rows")->required();
  cmd->add_option("--manifest", g.manifest, "Dataset manifest JSON supplying kernel sigma and kappa");
  cmd->add_option("--sigma", g.sigma, "Gaussian kernel width (default: std of finite distances)");
  cmd->add_option("--kappa", g.kappa, "Drop pairs at or beyond this distance (default: keep all)");
}

void add_training_flags(CLI::App* cmd, uignn::cli::TrainingOptions& t) {
  cmd->add_option("--epochs", t.epochs, "Training iterations, each drawing --samples subgraphs")->capture_default_str();
  cmd->add_option("--samples", t.samples, "Subgraph samples per iteration")->capture_default_str();
  cmd->add_option("--batch", t.batch, "Samples per optimizer step")->capture_default_str();
  cmd->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--alpha", t.alpha, "Weight of the recovery loss")->capture_default_str();
  cmd->add_option("--evidence-reg", t.evidence_reg, "Evidence regularizer weight")->capture_default_str();
  cmd->add_option("--k-order", t.k_order, "Chebyshev order K")->capture_default_str();
  cmd->add_option("--layers", t.layers, "DGCN layers (>= 2)")->capture_default_str();
  cmd->add_option("--hidden", t.hidden, "Hidden width")->capture_default_str();
  cmd->add_option("--history", t.history, "Input window length T in steps")->capture_default_str();
  cmd->add_option("--horizon", t.horizon, "Forecast horizon: steps, or a duration such as 30min or 1h")
      ->capture_default_str();
  cmd->add_option("--activation", t.activation, "relu, tanh or identity")->capture_default_str();
  cmd->add_option("--recovery-target", t.recovery, "masked (reconstruct H_0) or unmasked")->capture_default_str();
  cmd->add_option("--loss", t.loss, "evidential or mse")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inductive traffic forecasting with uncertainty at unsensed locations"};
  app.set_config("--config", "", "TOML/INI file of option values; command-line flags take precedence");
  app.require_subcommand(1);

  uignn::cli::GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic ring-road dataset");
  generate->add_option("--nodes", gen.nodes, "Number of sensors")->capture_default_str();
  generate->add_option("--steps", gen.steps, "Number of 5-minute steps")->capture_default_str();
  generate->add_option("--noise", gen.noise, "Mean half-width of the reading noise (mph)")->capture_default_str();
  generate->add_option("--noise-spread", gen.noise_spread, "Per-sensor noise varies within (1 +- spread) * noise")
      ->capture_default_str();
  generate->add_option("--kernel-width", gen.kernel_width, "Kernel sigma in mean sensor spacings (0: distance std)")
      ->capture_default_str();
  generate->add_option("--kappa-factor", gen.kappa_factor, "Kernel cutoff as a multiple of sigma")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->capture_default_str();

  uignn::cli::TrainOptions tr;
  auto* train = app.add_subcommand("train", "Train on observable sensors and write a checkpoint");
  add_graph_flags(train, tr.graph);
  add_training_flags(train, tr.training);
  train->add_option("--hide-count", tr.hide_count, "Sensors to hide as missing locations")->capture_default_str();
  train->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  train->add_option("--out", tr.out, "Output directory")->capture_default_str();

  uignn::cli::EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on observable and missing sensors");
  add_graph_flags(eval, ev.graph);
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--baseline", ev.baselines, "Also score a baseline: mean, knn or global (repeatable)");
  eval->add_option("--split", ev.split, "test or val")->capture_default_str();
  eval->add_option("--knn-k", ev.knn_k, "Neighbours for the knn baseline")->capture_default_str();
  eval->add_option("--seed", ev.seed, "Random seed for baseline training")->capture_default_str();
  eval->add_option("--out", ev.out, "Output directory")->capture_default_str();

  uignn::cli::SenseOptions se;
  auto* sense = app.add_subcommand("sense", "Sequential sensor deployment by uncertainty or at random");
  add_graph_flags(sense, se.graph);
  add_training_flags(sense, se.training);
  sense->add_option("--policy", se.policies, "uncertainty or random (repeatable)")->capture_default_str();
  sense->add_option("--budget", se.budget, "Sensors added per step")->capture_default_str();
  sense->add_option("--steps", se.steps, "Deployment steps")->capture_default_str();
  sense->add_option("--init-sensors", se.init_sensors, "Initial sensor count")->capture_default_str();
  sense->add_flag("--warm-start", se.warm_start, "Continue each step from the previous step's weights");
  sense->add_option("--seed", se.seed, "Random seed")->capture_default_str();
  sense->add_option("--out", se.out, "Output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) return uignn::cli::cmd_generate(gen, std::cout);
    if (*train) return uignn::cli::cmd_train(tr, std::cout);
    if (*eval) return uignn::cli::cmd_eval(ev, std::cout);
    if (*sense) return uignn::cli::cmd_sense(se, std::cout);
  } catch (const uignn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
