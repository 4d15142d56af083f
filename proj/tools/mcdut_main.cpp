#include <CLI11.hpp>
#include <string>

#include "mcdut/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Unpaired image-to-image translation: multi-crop contrastive training, "
               "domain consistency, dual coordinate attention"};
  app.require_subcommand(1);

  mcdut::cli::TrainArgs train_args;
  uint64_t seed_flag = 0;
  int64_t epochs_flag = 0, max_steps_flag = 0;
  std::string gan_loss_flag;
  auto* train = app.add_subcommand("train", "Train a translation model");
  train->add_option("--config", train_args.config_path, "Config file (.toml or .json)");
  train->add_option("--data-root", train_args.data_root, "Dataset root with trainA/ trainB/");
  train->add_option("--out", train_args.out_dir, "Output directory for checkpoints and logs");
  train->add_option("--resume", train_args.resume, "Checkpoint directory to resume from");
  train->add_option("--dump-crops", train_args.dump_crops,
                    "Write the first step's crop views as PNGs into this directory");
  auto* seed_opt = train->add_option("--seed", seed_flag, "Random seed");
  auto* epochs_opt = train->add_option("--epochs", epochs_flag, "Total training epochs");
  auto* steps_opt = train->add_option("--max-steps", max_steps_flag, "Stop after this many steps");
  auto* gan_opt = train->add_option("--gan-loss", gan_loss_flag, "Adversarial loss form: hinge|log");
  train->add_flag("--no-dca", train_args.no_dca, "Disable the attention blocks in the encoder");
  train->add_flag("--no-domain-loss", train_args.no_domain_loss, "Disable the domain consistency loss");
  train->add_flag("--no-multicrop", train_args.no_multicrop,
                  "Draw contrastive negatives from the input image instead of crop views");
  train->add_flag("--quiet", train_args.quiet, "Do not stream per-step metrics to stdout");

  mcdut::cli::TranslateArgs tr_args;
  auto* translate = app.add_subcommand("translate", "Translate a directory of images");
  translate->add_option("--checkpoint", tr_args.checkpoint, "Checkpoint directory")->required();
  translate->add_option("--input", tr_args.input_dir, "Directory of input images")->required();
  translate->add_option("--out", tr_args.out_dir, "Directory for translated PNGs")->required();

  mcdut::cli::EvaluateArgs ev_args;
  auto* evaluate = app.add_subcommand("evaluate", "Compute FID and KIDx100 on a test layout");
  evaluate->add_option("--checkpoint", ev_args.checkpoint, "Checkpoint directory")->required();
  evaluate->add_option("--data-root", ev_args.data_root, "Dataset root with testA/ testB/")->required();
  evaluate->add_option("--out", ev_args.out_dir, "Directory for metrics.json");
  evaluate->add_option("--extractor", ev_args.extractor, "Feature extractor: identity|randproj");
  evaluate->add_option("--extractor-seed", ev_args.extractor_seed, "Seed for the random projection");
  evaluate->add_option("--max-images", ev_args.max_images, "Limit the number of evaluated images");
  evaluate->add_option("--grid", ev_args.grid_path, "Write an (input|translated) grid PNG here");

  CLI11_PARSE(app, argc, argv);

  if (*train) {
    if (*seed_opt) train_args.seed = seed_flag;
    if (*epochs_opt) train_args.epochs = epochs_flag;
    if (*steps_opt) train_args.max_steps = max_steps_flag;
    if (*gan_opt) train_args.gan_loss = gan_loss_flag;
    return mcdut::cli::cmd_train(train_args);
  }
  if (*translate) return mcdut::cli::cmd_translate(tr_args);
  if (*evaluate) return mcdut::cli::cmd_evaluate(ev_args);
  return 2;
}
