#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mcdut/config.hpp"
#include "mcdut/eval/metrics.hpp"
#include "mcdut/train/engine.hpp"

namespace mcdut::cli {

namespace fs = std::filesystem;

inline int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidInput: return 2;
    case ErrorKind::DivergedTraining: return 3;
    case ErrorKind::Io:
    case ErrorKind::Dataset:
    case ErrorKind::Asset: return 4;
    default: return 1;
  }
}

struct TrainArgs {
  std::string config_path;
  std::string data_root;
  std::string out_dir;
  std::string resume;
  std::string dump_crops;
  std::optional<uint64_t> seed;
  std::optional<int64_t> epochs;
  std::optional<int64_t> max_steps;
  std::optional<std::string> gan_loss;
  bool no_dca = false;
  bool no_domain_loss = false;
  bool no_multicrop = false;
  bool quiet = false;
};

inline config::RunConfig resolve_run_config(const TrainArgs& args) {
  config::RunConfig rc;
  if (!args.config_path.empty()) rc = config::load_run_config(args.config_path, rc);
  if (!args.data_root.empty()) rc.data_root = args.data_root;
  if (!args.out_dir.empty()) rc.out_dir = args.out_dir;
  if (args.seed) rc.train.seed = *args.seed;
  if (args.epochs) rc.train.epochs = *args.epochs;
  if (args.max_steps) rc.train.max_steps = *args.max_steps;
  if (args.gan_loss) {
    require(*args.gan_loss == "hinge" || *args.gan_loss == "log", ErrorKind::InvalidConfig,
            "--gan-loss must be hinge or log");
    rc.train.gan_loss =
        *args.gan_loss == "hinge" ? losses::GanLossKind::Hinge : losses::GanLossKind::Logistic;
  }
  if (args.no_dca) rc.train.attention = attention::AttentionKind::None;
  if (args.no_domain_loss) rc.train.use_domain_loss = false;
  if (args.no_multicrop) rc.train.use_multicrop_nce = false;
  return rc;
}

inline int cmd_train(const TrainArgs& args) {
  try {
    config::RunConfig rc = resolve_run_config(args);
    require(!rc.data_root.empty(), ErrorKind::InvalidConfig,
            "no dataset root given (use --data-root or set data_root in the config)");
    auto manifest = data::scan_dataset(rc.data_root, data::Split::Train);

    std::optional<train::Engine<double>> engine;
    if (!args.resume.empty()) {
      engine.emplace(train::Engine<double>::load_checkpoint(args.resume));
      if (args.epochs) engine->mutable_config().epochs = *args.epochs;
      if (args.max_steps) engine->mutable_config().max_steps = *args.max_steps;
      rc.train = engine->config();
    } else {
      rc.validate();
      engine.emplace(rc.train);
    }
    config::archive_resolved_config(rc, rc.out_dir);
    if (!args.dump_crops.empty()) engine->set_dump_crops_dir(args.dump_crops);

    train::FitOptions opts;
    opts.out_dir = rc.out_dir;
    opts.checkpoint_interval = rc.checkpoint_interval;
    if (!args.quiet)
      opts.sink = [](const train::StepLog& log) { std::cout << log.to_json_line() << "\n"; };
    auto result = engine->fit(manifest, opts);
    std::cerr << "[train] finished after " << result.steps_run << " steps; checkpoint at "
              << result.final_checkpoint << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

struct TranslateArgs {
  std::string checkpoint;
  std::string input_dir;
  std::string out_dir;
};

inline int cmd_translate(const TranslateArgs& args) {
  try {
    require(fs::exists(fs::path(args.checkpoint) / "manifest.json"), ErrorKind::Asset,
            "checkpoint not found: " + args.checkpoint);
    auto engine = train::Engine<double>::load_checkpoint(args.checkpoint);
    require(fs::is_directory(args.input_dir), ErrorKind::Io,
            "input directory not found: " + args.input_dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(args.input_dir))
      if (entry.is_regular_file() && data::has_image_extension(entry.path()))
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    require(!files.empty(), ErrorKind::Dataset, "no images in " + args.input_dir);
    fs::create_directories(args.out_dir);
    data::PreprocessOptions prep;
    prep.load_size = engine.config().load_size;
    prep.crop_size = engine.config().crop_size;
    Rng unused(0);
    for (const auto& file : files) {
      auto img = data::load_and_preprocess<double>(file, data::PrepMode::Eval, unused, prep);
      auto out = engine.translate(img);
      const std::string name = fs::path(file).stem().string() + ".png";
      io::write_png((fs::path(args.out_dir) / name).string(), signed_to_bytes(out));
    }
    std::cerr << "[translate] wrote " << files.size() << " images to " << args.out_dir << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string data_root;
  std::string out_dir;
  std::string extractor = "randproj";
  uint64_t extractor_seed = 0;
  int64_t max_images = 0;
  std::string grid_path;
};

// Tiles (input | translated) pairs top to bottom.
template <typename T>
Tensor<T> make_pair_grid(const std::vector<Tensor<T>>& inputs, const std::vector<Tensor<T>>& outputs) {
  require(!inputs.empty() && inputs.size() == outputs.size(), ErrorKind::InvalidInput,
          "pair grid: mismatched image lists");
  const int64_t h = inputs[0].dim(1), w = inputs[0].dim(2);
  const int64_t rows = static_cast<int64_t>(inputs.size());
  Tensor<T> grid({3, rows * h, 2 * w});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          grid.at(c, r * h + i, j) = inputs[static_cast<size_t>(r)].at(c, i, j);
          grid.at(c, r * h + i, w + j) = outputs[static_cast<size_t>(r)].at(c, i, j);
        }
  return grid;
}

inline int cmd_evaluate(const EvaluateArgs& args) {
  try {
    require(fs::exists(fs::path(args.checkpoint) / "manifest.json"), ErrorKind::Asset,
            "checkpoint not found: " + args.checkpoint);
    auto engine = train::Engine<double>::load_checkpoint(args.checkpoint);
    auto manifest = data::scan_dataset(args.data_root, data::Split::Test);
    auto extractor = eval::make_extractor(args.extractor, args.extractor_seed);
    eval::EvaluateOptions opts;
    opts.max_images = args.max_images;
    auto report = eval::evaluate_run(engine, manifest, *extractor, opts);
    std::cout << report.to_json().dump(2) << "\n";
    if (!args.out_dir.empty()) {
      fs::create_directories(args.out_dir);
      std::ofstream os((fs::path(args.out_dir) / "metrics.json").string());
      require(os.good(), ErrorKind::Io, "cannot write metrics.json in " + args.out_dir);
      os << report.to_json().dump(2) << "\n";
    }
    if (!args.grid_path.empty()) {
      data::PreprocessOptions prep;
      prep.crop_size = engine.config().crop_size;
      Rng unused(0);
      std::vector<Tensor<double>> ins, outs;
      const size_t rows = std::min<size_t>(8, manifest.domain_a_files.size());
      for (size_t i = 0; i < rows; ++i) {
        auto img = data::load_and_preprocess<double>(manifest.domain_a_files[i],
                                                     data::PrepMode::Eval, unused, prep);
        ins.push_back(img);
        outs.push_back(engine.translate(img));
      }
      io::write_png(args.grid_path, signed_to_bytes(make_pair_grid(ins, outs)));
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace mcdut::cli
