#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mcdut/data/dataset.hpp"
#include "mcdut/losses/contrastive.hpp"
#include "mcdut/nets/discriminator.hpp"
#include "mcdut/nets/generator.hpp"
#include "mcdut/nets/projections.hpp"
#include "mcdut/sampling/multicrop.hpp"
#include "mcdut/train/checkpoint.hpp"
#include "mcdut/train/optim.hpp"

namespace mcdut::train {

using nlohmann::json;

struct TrainConfig {
  // schedule
  int64_t epochs = 400;
  int64_t decay_start_epoch = 200;
  double base_lr = 0.0002;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int64_t batch_size = 1;
  int64_t load_size = 286;
  int64_t crop_size = 256;
  bool random_flip = true;
  uint64_t seed = 1;
  int64_t max_steps = 0;  // 0 = run all epochs

  // objective
  losses::LossWeights weights;
  multicrop::CropConfig crop_cfg;
  int64_t patches_per_layer = 256;
  int64_t num_negatives = 256;

  // ablation toggles
  bool use_multicrop_nce = true;
  bool use_domain_loss = true;
  losses::GanLossKind gan_loss = losses::GanLossKind::Hinge;

  // architecture
  int64_t base_channels = 64;
  int64_t num_resnet_blocks = 9;
  int64_t disc_channels = 64;
  int64_t disc_downsampling = 3;
  attention::AttentionKind attention = attention::AttentionKind::Dca;
  attention::DcaBranch dca_branch = attention::DcaBranch::Dual;
  int64_t attention_reduction = 16;
  int64_t embed_dim = 256;
  int64_t style_dim = 128;

  bool use_dca() const { return attention != attention::AttentionKind::None; }

  nets::GeneratorSpec generator_spec() const {
    nets::GeneratorSpec s;
    s.base_channels = base_channels;
    s.num_resnet_blocks = num_resnet_blocks;
    s.attention = attention;
    s.dca_branch = dca_branch;
    s.attention_reduction = attention_reduction;
    return s;
  }

  void validate() const {
    require(epochs >= 1, ErrorKind::InvalidConfig, "epochs must be >= 1");
    require(decay_start_epoch >= 0 && decay_start_epoch <= epochs, ErrorKind::InvalidConfig,
            "decay_start_epoch must lie in [0, epochs]");
    require(base_lr > 0, ErrorKind::InvalidConfig, "base_lr must be positive");
    require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
            ErrorKind::InvalidConfig, "adam betas must lie in [0,1)");
    require(batch_size >= 1, ErrorKind::InvalidConfig, "batch_size must be >= 1");
    require(load_size >= crop_size && crop_size >= 8, ErrorKind::InvalidConfig,
            "need load_size >= crop_size >= 8");
    require(crop_size % 4 == 0, ErrorKind::InvalidConfig, "crop_size must be divisible by 4");
    require(patches_per_layer >= 1, ErrorKind::InvalidConfig, "patches_per_layer must be >= 1");
    require(num_negatives >= 1, ErrorKind::InvalidConfig, "num_negatives must be >= 1");
    require(max_steps >= 0, ErrorKind::InvalidConfig, "max_steps must be >= 0");
    weights.validate();
    crop_cfg.validate();
    generator_spec().validate();
    require(disc_channels >= 1, ErrorKind::InvalidConfig, "disc_channels must be >= 1");
    nets::DiscriminatorSpec ds;
    ds.base_channels = disc_channels;
    ds.num_downsampling = disc_downsampling;
    ds.validate();
    require(crop_size >= ds.min_input_size(), ErrorKind::InvalidConfig,
            "crop_size too small for the discriminator depth (need >= " +
                std::to_string(ds.min_input_size()) + ")");
    require(embed_dim >= 1 && style_dim >= 1, ErrorKind::InvalidConfig,
            "embed_dim and style_dim must be >= 1");
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"decay_start_epoch", c.decay_start_epoch},
           {"base_lr", c.base_lr},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"batch_size", c.batch_size},
           {"load_size", c.load_size},
           {"crop_size", c.crop_size},
           {"random_flip", c.random_flip},
           {"seed", c.seed},
           {"max_steps", c.max_steps},
           {"lambda_gan", c.weights.lambda_gan},
           {"lambda_nce", c.weights.lambda_nce},
           {"lambda_dom", c.weights.lambda_dom},
           {"lambda_ide", c.weights.lambda_ide},
           {"tau", c.weights.tau},
           {"num_center", c.crop_cfg.num_center},
           {"num_random", c.crop_cfg.num_random},
           {"center_scale", c.crop_cfg.center_scale},
           {"random_scale_lo", c.crop_cfg.random_scale_lo},
           {"random_scale_hi", c.crop_cfg.random_scale_hi},
           {"patches_per_layer", c.patches_per_layer},
           {"num_negatives", c.num_negatives},
           {"use_multicrop_nce", c.use_multicrop_nce},
           {"use_domain_loss", c.use_domain_loss},
           {"gan_loss", c.gan_loss == losses::GanLossKind::Hinge ? "hinge" : "log"},
           {"base_channels", c.base_channels},
           {"num_resnet_blocks", c.num_resnet_blocks},
           {"disc_channels", c.disc_channels},
           {"disc_downsampling", c.disc_downsampling},
           {"attention", attention::to_string(c.attention)},
           {"dca_branch", attention::to_string(c.dca_branch)},
           {"attention_reduction", c.attention_reduction},
           {"embed_dim", c.embed_dim},
           {"style_dim", c.style_dim}};
}

inline void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.decay_start_epoch = j.value("decay_start_epoch", d.decay_start_epoch);
  c.base_lr = j.value("base_lr", d.base_lr);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.load_size = j.value("load_size", d.load_size);
  c.crop_size = j.value("crop_size", d.crop_size);
  c.random_flip = j.value("random_flip", d.random_flip);
  c.seed = j.value("seed", d.seed);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.weights.lambda_gan = j.value("lambda_gan", d.weights.lambda_gan);
  c.weights.lambda_nce = j.value("lambda_nce", d.weights.lambda_nce);
  c.weights.lambda_dom = j.value("lambda_dom", d.weights.lambda_dom);
  c.weights.lambda_ide = j.value("lambda_ide", d.weights.lambda_ide);
  c.weights.tau = j.value("tau", d.weights.tau);
  c.crop_cfg.num_center = j.value("num_center", d.crop_cfg.num_center);
  c.crop_cfg.num_random = j.value("num_random", d.crop_cfg.num_random);
  c.crop_cfg.center_scale = j.value("center_scale", d.crop_cfg.center_scale);
  c.crop_cfg.random_scale_lo = j.value("random_scale_lo", d.crop_cfg.random_scale_lo);
  c.crop_cfg.random_scale_hi = j.value("random_scale_hi", d.crop_cfg.random_scale_hi);
  c.patches_per_layer = j.value("patches_per_layer", d.patches_per_layer);
  c.num_negatives = j.value("num_negatives", d.num_negatives);
  c.use_multicrop_nce = j.value("use_multicrop_nce", d.use_multicrop_nce);
  c.use_domain_loss = j.value("use_domain_loss", d.use_domain_loss);
  const std::string gl = j.value("gan_loss", std::string("hinge"));
  require(gl == "hinge" || gl == "log", ErrorKind::InvalidConfig, "gan_loss must be hinge or log");
  c.gan_loss = gl == "hinge" ? losses::GanLossKind::Hinge : losses::GanLossKind::Logistic;
  c.base_channels = j.value("base_channels", d.base_channels);
  c.num_resnet_blocks = j.value("num_resnet_blocks", d.num_resnet_blocks);
  c.disc_channels = j.value("disc_channels", d.disc_channels);
  c.disc_downsampling = j.value("disc_downsampling", d.disc_downsampling);
  c.attention = attention::attention_kind_from_string(j.value("attention", std::string("dca")));
  c.dca_branch = attention::dca_branch_from_string(j.value("dca_branch", std::string("dual")));
  c.attention_reduction = j.value("attention_reduction", d.attention_reduction);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.style_dim = j.value("style_dim", d.style_dim);
}

// Constant at base_lr through decay_start_epoch, then one linear ramp to
// exactly zero at cfg.epochs.
inline double lr_at_epoch(int64_t epoch, const TrainConfig& cfg) {
  require(epoch >= 0 && epoch <= cfg.epochs, ErrorKind::InvalidInput,
          "lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
              "]");
  if (epoch <= cfg.decay_start_epoch) return cfg.base_lr;
  return cfg.base_lr * static_cast<double>(cfg.epochs - epoch) /
         static_cast<double>(cfg.epochs - cfg.decay_start_epoch);
}

struct StepLog {
  uint64_t step = 0;
  int64_t epoch = 0;
  losses::LossReport report;
  double lr = 0;

  std::string to_json_line() const {
    json j{{"step", step},         {"epoch", epoch},     {"gan_g", report.gan_g},
           {"gan_d", report.gan_d}, {"nce", report.nce},  {"domain", report.domain},
           {"identity", report.identity}, {"total_g", report.total_g}, {"lr", lr}};
    return j.dump();
  }
};

struct FitOptions {
  std::string out_dir;              // empty: no checkpoints or metrics file
  int64_t checkpoint_interval = 0;  // in epochs; 0 = final checkpoint only
  std::function<void(const StepLog&)> sink;
};

struct FitResult {
  uint64_t steps_run = 0;
  std::string final_checkpoint;
};

inline constexpr int kCheckpointFormatVersion = 1;

// Owns the five sub-networks, both optimizers and the sampling rng; runs the
// alternating discriminator/generator updates.
template <typename T>
class Engine {
 public:
  explicit Engine(const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng init_rng(mix_seed(cfg_.seed, 0x1217));
    gen_ = nets::ResnetGenerator<T>::create(cfg_.generator_spec(), init_rng);
    nets::DiscriminatorSpec dspec;
    dspec.base_channels = cfg_.disc_channels;
    dspec.num_downsampling = cfg_.disc_downsampling;
    disc_ = nets::PatchDiscriminator<T>::create(dspec, init_rng);
    proj_f_ = nets::PatchProjection<T>::create(gen_.spec().tap_channels(), cfg_.embed_dim, init_rng);
    head_hf_ = nets::DomainProjection<T>::create(gen_.spec().tap_channels(), cfg_.style_dim, init_rng);
    head_hr_ = nets::DomainProjection<T>::create(gen_.spec().tap_channels(), cfg_.style_dim, init_rng);

    gen_.collect(reg_g_, "gen");
    disc_.collect(reg_d_, "disc");
    proj_f_.collect(reg_f_, "proj_f");
    head_hf_.collect(reg_hf_, "proj_hf");
    head_hr_.collect(reg_hr_, "proj_hr");
    gen_.collect(reg_gen_side_, "gen");
    proj_f_.collect(reg_gen_side_, "proj_f");
    head_hf_.collect(reg_gen_side_, "proj_hf");
    head_hr_.collect(reg_gen_side_, "proj_hr");

    opt_g_ = Adam<T>(reg_gen_side_.variables(), cfg_.adam_beta1, cfg_.adam_beta2);
    opt_d_ = Adam<T>(reg_d_.variables(), cfg_.adam_beta1, cfg_.adam_beta2);
    sample_rng_ = Rng(mix_seed(cfg_.seed, 0x5a3));
  }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;
  Engine(Engine&&) = default;
  Engine& operator=(Engine&&) = default;

  const TrainConfig& config() const { return cfg_; }

  // Schedule fields (epochs, max_steps, checkpoint cadence) may be adjusted
  // between runs, e.g. when resuming; architecture fields must not change.
  TrainConfig& mutable_config() { return cfg_; }
  const nets::ResnetGenerator<T>& generator() const { return gen_; }
  const nets::PatchDiscriminator<T>& discriminator() const { return disc_; }
  const nets::ParamRegistry<T>& generator_params() const { return reg_g_; }
  const nets::ParamRegistry<T>& discriminator_params() const { return reg_d_; }
  const nets::ParamRegistry<T>& generator_side_params() const { return reg_gen_side_; }
  const nets::ParamRegistry<T>& hf_params() const { return reg_hf_; }
  const nets::ParamRegistry<T>& hr_params() const { return reg_hr_; }
  int64_t epoch() const { return epoch_; }
  int64_t step_in_epoch() const { return step_in_epoch_; }
  uint64_t global_step() const { return global_step_; }

  void set_update_discriminator(bool on) { update_d_ = on; }
  void set_debug_freeze_checks(bool on) { debug_freeze_checks_ = on; }
  void set_dump_crops_dir(const std::string& dir) {
    dump_crops_dir_ = dir;
    dump_pending_ = !dir.empty();
  }

  // Translates one (3,H,W) image in [-1,1]; inference only.
  Tensor<T> translate(const Tensor<T>& image) const {
    require(is_image(image), ErrorKind::InvalidInput, "translate: not an image tensor");
    auto x = Variable<T>::constant(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}));
    auto out = gen_.forward(x);
    return out.image.value().reshaped({image.dim(0), image.dim(1), image.dim(2)});
  }

  // One alternating update: discriminator first on the detached translation,
  // then the joint generator-side update of G, F, Hf and Hr.
  losses::LossReport train_step(const Tensor<T>& x_batch, const Tensor<T>& y_batch, double lr = -1.0) {
    if (lr < 0) lr = lr_at_epoch(std::min(epoch_, cfg_.epochs), cfg_);
    Tensor<T> xb = as_batch(x_batch);
    Tensor<T> yb = as_batch(y_batch);
    require(xb.shape() == yb.shape(), ErrorKind::InvalidInput,
            "train_step: domain batches must share shape, got " + shape_str(xb.shape()) + " vs " +
                shape_str(yb.shape()));
    const int64_t n_batch = xb.shape()[0];
    const double inv_b = 1.0 / static_cast<double>(n_batch);
    const auto& w = cfg_.weights;
    const bool want_identity = w.lambda_ide > 0;
    const bool want_domain = cfg_.use_domain_loss && w.lambda_dom > 0;
    const bool want_nce = w.lambda_nce > 0;

    struct SampleCtx {
      Variable<T> fake;
      std::vector<Variable<T>> taps_x;
      Variable<T> idt;
      std::vector<Variable<T>> taps_y;
      Tensor<T> x_img;  // (3,H,W) copy for the crop sampler
      Tensor<T> y_img;
    };
    std::vector<SampleCtx> ctxs(static_cast<size_t>(n_batch));

    losses::LossReport rep;

    // ---- discriminator phase -------------------------------------------
    const auto g_sum_before = debug_freeze_checks_ ? checksum(reg_gen_side_) : 0.0;
    opt_d_.zero_grad();
    for (int64_t n = 0; n < n_batch; ++n) {
      SampleCtx& ctx = ctxs[static_cast<size_t>(n)];
      ctx.x_img = slice_sample(xb, n);
      ctx.y_img = slice_sample(yb, n);
      auto xn = Variable<T>::constant(ctx.x_img.reshaped({1, xb.shape()[1], xb.shape()[2], xb.shape()[3]}));
      auto yn = Variable<T>::constant(ctx.y_img.reshaped({1, xb.shape()[1], xb.shape()[2], xb.shape()[3]}));
      auto fw = gen_.forward(xn);
      ctx.fake = fw.image;
      ctx.taps_x = std::move(fw.taps);
      if (want_identity) {
        auto fy = gen_.forward(yn);
        ctx.idt = fy.image;
        ctx.taps_y = std::move(fy.taps);
      } else if (want_domain) {
        ctx.taps_y = gen_.encode(yn);
      }
      auto d_loss =
          losses::gan_d_loss(cfg_.gan_loss, disc_.forward(yn), disc_.forward(ctx.fake.detach()));
      check_finite(d_loss.value()[0], "gan_d");
      rep.gan_d += d_loss.value()[0] * inv_b;
      backward(ops::mul_scalar(d_loss, T(inv_b)));
    }
    if (update_d_) opt_d_.step(lr);
    if (debug_freeze_checks_)
      require(checksum(reg_gen_side_) == g_sum_before, ErrorKind::InternalConsistency,
              "discriminator update touched generator-side parameters");

    // ---- generator phase -----------------------------------------------
    const auto d_sum_before = debug_freeze_checks_ ? checksum(reg_d_) : 0.0;
    opt_g_.zero_grad();
    for (int64_t n = 0; n < n_batch; ++n) {
      SampleCtx& ctx = ctxs[static_cast<size_t>(n)];
      auto gan_g = losses::gan_g_loss(cfg_.gan_loss, disc_.forward(ctx.fake));
      check_finite(gan_g.value()[0], "gan_g");

      std::vector<Variable<T>> taps_hat;  // encoder view of the translated image
      auto ensure_taps_hat = [&] {
        if (taps_hat.empty()) taps_hat = gen_.encode(ctx.fake);
      };

      Variable<T> nce_var, dom_var, ide_var;
      if (want_nce) {
        ensure_taps_hat();
        nce_var = contrastive_term(taps_hat, ctx.taps_x, ctx.x_img, /*dump=*/dump_pending_ && n == 0);
        check_finite(nce_var.value()[0], "nce");
      }
      if (want_identity) {
        auto taps_idt_hat = gen_.encode(ctx.idt);
        ide_var = contrastive_term(taps_idt_hat, ctx.taps_y, ctx.y_img, false);
        check_finite(ide_var.value()[0], "identity");
      }
      if (want_domain) {
        ensure_taps_hat();
        dom_var = losses::domain_consistency_loss(nets::project_domain(ctx.taps_y, head_hr_),
                                                  nets::project_domain(taps_hat, head_hf_));
        check_finite(dom_var.value()[0], "domain");
      }
      auto total = losses::total_generator_objective(gan_g, nce_var, dom_var, ide_var, w);
      rep.gan_g += gan_g.value()[0] * inv_b;
      if (nce_var.defined()) rep.nce += nce_var.value()[0] * inv_b;
      if (dom_var.defined()) rep.domain += dom_var.value()[0] * inv_b;
      if (ide_var.defined()) rep.identity += ide_var.value()[0] * inv_b;
      backward(ops::mul_scalar(total, T(inv_b)));
    }
    opt_g_.step(lr);
    if (debug_freeze_checks_)
      require(checksum(reg_d_) == d_sum_before, ErrorKind::InternalConsistency,
              "generator update touched discriminator parameters");

    rep.total_g = losses::total_generator_objective(rep.gan_g, rep.nce, rep.domain, rep.identity, w);
    check_finite(rep.gan_d, "gan_d");
    check_finite(rep.gan_g, "gan_g");
    check_finite(rep.nce, "nce");
    check_finite(rep.domain, "domain");
    check_finite(rep.identity, "identity");
    rep.validate(w);
    ++global_step_;
    return rep;
  }

  // Epoch loop with the linear-decay schedule, deterministic unpaired
  // pairing, streaming metrics and periodic checkpoints.
  FitResult fit(const data::DatasetManifest& manifest, const FitOptions& opts = {}) {
    namespace fs = std::filesystem;
    cfg_.validate();
    data::PreprocessOptions prep;
    prep.load_size = cfg_.load_size;
    prep.crop_size = cfg_.crop_size;
    prep.random_flip = cfg_.random_flip;

    std::ofstream metrics;
    if (!opts.out_dir.empty()) {
      fs::create_directories(opts.out_dir);
      metrics.open((fs::path(opts.out_dir) / "metrics.jsonl").string(), std::ios::app);
      require(metrics.good(), ErrorKind::Io, "cannot open metrics log in " + opts.out_dir);
    }

    FitResult result;
    const int64_t na = static_cast<int64_t>(manifest.domain_a_files.size());
    const int64_t nb = static_cast<int64_t>(manifest.domain_b_files.size());
    bool stop = false;
    for (; epoch_ < cfg_.epochs && !stop; ) {
      const double lr = lr_at_epoch(epoch_, cfg_);
      Rng order_rng(mix_seed(cfg_.seed, 0xda7a, static_cast<uint64_t>(epoch_)));
      const auto pairs = data::epoch_pairs(na, nb, order_rng);
      const int64_t steps =
          (static_cast<int64_t>(pairs.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
      for (; step_in_epoch_ < steps; ++step_in_epoch_) {
        const int64_t begin = step_in_epoch_ * cfg_.batch_size;
        const int64_t count =
            std::min<int64_t>(cfg_.batch_size, static_cast<int64_t>(pairs.size()) - begin);
        Tensor<T> xb({count, 3, cfg_.crop_size, cfg_.crop_size});
        Tensor<T> yb({count, 3, cfg_.crop_size, cfg_.crop_size});
        for (int64_t i = 0; i < count; ++i) {
          const auto [ai, bi] = pairs[static_cast<size_t>(begin + i)];
          Rng rng_a(mix_seed(cfg_.seed, 0xa000 + static_cast<uint64_t>(epoch_),
                             static_cast<uint64_t>(begin + i)));
          Rng rng_b(mix_seed(cfg_.seed, 0xb000 + static_cast<uint64_t>(epoch_),
                             static_cast<uint64_t>(begin + i)));
          place_sample(xb, i,
                       data::load_and_preprocess<T>(manifest.domain_a_files[static_cast<size_t>(ai)],
                                                    data::PrepMode::Train, rng_a, prep));
          place_sample(yb, i,
                       data::load_and_preprocess<T>(manifest.domain_b_files[static_cast<size_t>(bi)],
                                                    data::PrepMode::Train, rng_b, prep));
        }
        StepLog log;
        log.epoch = epoch_;
        log.lr = lr;
        log.report = train_step(xb, yb, lr);
        log.step = global_step_;  // already advanced by train_step
        ++result.steps_run;
        if (metrics.is_open()) metrics << log.to_json_line() << "\n";
        if (opts.sink) opts.sink(log);
        if (cfg_.max_steps > 0 && global_step_ >= static_cast<uint64_t>(cfg_.max_steps)) {
          ++step_in_epoch_;
          stop = true;
          break;
        }
      }
      if (!stop) {
        step_in_epoch_ = 0;
        ++epoch_;
        if (!opts.out_dir.empty() && opts.checkpoint_interval > 0 &&
            epoch_ % opts.checkpoint_interval == 0 && epoch_ < cfg_.epochs) {
          save_checkpoint(
              (fs::path(opts.out_dir) / "checkpoints" / ("epoch_" + std::to_string(epoch_))).string());
        }
      }
    }
    if (!opts.out_dir.empty()) {
      result.final_checkpoint = (fs::path(opts.out_dir) / "checkpoints" / "final").string();
      save_checkpoint(result.final_checkpoint);
    }
    return result;
  }

  void save_checkpoint(const std::string& dir) const {
    const auto parent = std::filesystem::path(dir).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    CheckpointWriter w(dir);
    write_param_blob(w.path("g.bin"), reg_g_);
    write_param_blob(w.path("d.bin"), reg_d_);
    write_param_blob(w.path("f.bin"), reg_f_);
    write_param_blob(w.path("hf.bin"), reg_hf_);
    write_param_blob(w.path("hr.bin"), reg_hr_);
    write_adam_blob(w.path("opt_g.bin"), opt_g_, reg_gen_side_);
    write_adam_blob(w.path("opt_d.bin"), opt_d_, reg_d_);
    json manifest{{"format_version", kCheckpointFormatVersion},
                  {"config", cfg_},
                  {"epoch", epoch_},
                  {"step_in_epoch", step_in_epoch_},
                  {"global_step", global_step_},
                  {"sample_rng", sample_rng_.serialize()}};
    std::ofstream os(w.path("manifest.json"));
    require(os.good(), ErrorKind::Io, "cannot write checkpoint manifest in " + dir);
    os << manifest.dump(2) << "\n";
    os.close();
    w.commit();
  }

  static Engine load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string mpath = (fs::path(dir) / "manifest.json").string();
    std::ifstream is(mpath);
    require(is.good(), ErrorKind::Io, "cannot open checkpoint manifest: " + mpath);
    json manifest;
    try {
      is >> manifest;
    } catch (const json::exception& e) {
      fail(ErrorKind::IncompatibleCheckpoint, "unparsable checkpoint manifest: " + std::string(e.what()));
    }
    require(manifest.value("format_version", -1) == kCheckpointFormatVersion,
            ErrorKind::IncompatibleCheckpoint,
            "checkpoint format version mismatch in " + mpath);
    TrainConfig cfg = manifest.at("config").get<TrainConfig>();
    Engine e(cfg);
    read_param_blob((fs::path(dir) / "g.bin").string(), e.reg_g_);
    read_param_blob((fs::path(dir) / "d.bin").string(), e.reg_d_);
    read_param_blob((fs::path(dir) / "f.bin").string(), e.reg_f_);
    read_param_blob((fs::path(dir) / "hf.bin").string(), e.reg_hf_);
    read_param_blob((fs::path(dir) / "hr.bin").string(), e.reg_hr_);
    read_adam_blob((fs::path(dir) / "opt_g.bin").string(), e.opt_g_, e.reg_gen_side_);
    read_adam_blob((fs::path(dir) / "opt_d.bin").string(), e.opt_d_, e.reg_d_);
    e.epoch_ = manifest.at("epoch").get<int64_t>();
    e.step_in_epoch_ = manifest.at("step_in_epoch").get<int64_t>();
    e.global_step_ = manifest.at("global_step").get<uint64_t>();
    e.sample_rng_.deserialize(manifest.at("sample_rng").get<std::string>());
    return e;
  }

 private:
  static Tensor<T> as_batch(const Tensor<T>& t) {
    if (t.ndim() == 4) return t;
    require(t.ndim() == 3, ErrorKind::InvalidInput, "train_step: expected (3,H,W) or (N,3,H,W)");
    return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
  }

  static Tensor<T> slice_sample(const Tensor<T>& batch, int64_t n) {
    const int64_t c = batch.shape()[1], h = batch.shape()[2], w = batch.shape()[3];
    Tensor<T> out({c, h, w});
    std::copy(batch.data() + n * c * h * w, batch.data() + (n + 1) * c * h * w, out.data());
    return out;
  }

  static void place_sample(Tensor<T>& batch, int64_t n, const Tensor<T>& img) {
    require(img.numel() == batch.shape()[1] * batch.shape()[2] * batch.shape()[3],
            ErrorKind::InternalConsistency, "batch slot size mismatch");
    std::copy(img.data(), img.data() + img.numel(), batch.data() + n * img.numel());
  }

  static double checksum(const nets::ParamRegistry<T>& reg) {
    double s = 0;
    for (const auto& [name, v] : reg) {
      const Tensor<T>& t = v.value();
      for (int64_t i = 0; i < t.numel(); ++i)
        s += static_cast<double>(t[i]) * (1.0 + 1e-7 * static_cast<double>(i % 97));
    }
    return s;
  }

  static void check_finite(double v, const char* term) {
    require(std::isfinite(v), ErrorKind::DivergedTraining,
            std::string("non-finite loss term: ") + term);
  }

  // Builds the patch-contrastive term for one sample. `queries_from` holds
  // the encoder taps of the generated image, `positives_from` those of the
  // source image; negatives come from crop views of the raw source image
  // (or, with multicrop disabled, from the source image's own patches).
  Variable<T> contrastive_term(const std::vector<Variable<T>>& queries_from,
                               const std::vector<Variable<T>>& positives_from, const Tensor<T>& raw_img,
                               bool dump_views) {
    std::vector<multicrop::CropView<T>> views;
    if (cfg_.use_multicrop_nce)
      views = multicrop::make_multicrop_views(raw_img, cfg_.crop_cfg, sample_rng_);
    if (dump_views && !views.empty()) {
      std::filesystem::create_directories(dump_crops_dir_);
      int64_t idx = 0;
      for (const auto& v : views) {
        const std::string kind = v.kind == multicrop::CropKind::Center ? "center" : "random";
        io::write_png((std::filesystem::path(dump_crops_dir_) /
                       (kind + "_" + std::to_string(idx++) + ".png"))
                          .string(),
                      signed_to_bytes(v.image));
      }
      dump_pending_ = false;
    }

    const size_t L = positives_from.size();
    std::vector<multicrop::PatchIndexSet> ids(L);
    for (size_t l = 0; l < L; ++l) {
      const auto& s = positives_from[l].value().shape();
      const int64_t count = std::min<int64_t>(cfg_.patches_per_layer, s[2] * s[3]);
      ids[l] = multicrop::sample_patch_ids(s[2], s[3], count, sample_rng_, static_cast<int64_t>(l));
    }
    auto q = nets::project_patches(queries_from, ids, proj_f_);
    auto p = nets::project_patches(positives_from, ids, proj_f_);

    if (!cfg_.use_multicrop_nce) {
      // input-internal negatives: the other sampled patches of the same image
      Variable<T> acc;
      for (size_t l = 0; l < L; ++l) {
        auto layer_mean = ops::mean(losses::internal_nce_patch_losses(q[l], p[l], cfg_.weights.tau));
        acc = acc.defined() ? ops::add(acc, layer_mean) : layer_mean;
      }
      return ops::mul_scalar(acc, T(1.0 / static_cast<double>(L)));
    }

    // per-view encoder passes and projections
    std::vector<std::vector<Variable<T>>> view_embs(views.size());
    for (size_t v = 0; v < views.size(); ++v) {
      const auto& img = views[v].image;
      auto xv = Variable<T>::constant(img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}));
      auto taps_v = gen_.encode(xv);
      std::vector<multicrop::PatchIndexSet> ids_v(L);
      for (size_t l = 0; l < L; ++l) {
        const auto& s = taps_v[l].value().shape();
        const int64_t count = std::min<int64_t>(cfg_.patches_per_layer, s[2] * s[3]);
        ids_v[l] = multicrop::sample_patch_ids(s[2], s[3], count, sample_rng_, static_cast<int64_t>(l));
      }
      view_embs[v] = nets::project_patches(taps_v, ids_v, proj_f_);
    }

    // one shared negative pool per layer, drawn across all views
    std::vector<Variable<T>> negs(L);
    for (size_t l = 0; l < L; ++l) {
      std::vector<Variable<T>> parts;
      std::vector<int64_t> sizes;
      for (size_t v = 0; v < views.size(); ++v) {
        parts.push_back(view_embs[v][l]);
        sizes.push_back(view_embs[v][l].shape()[0]);
      }
      const auto sources = multicrop::pick_negative_sources(sizes, cfg_.num_negatives, sample_rng_);
      std::vector<int64_t> flat;
      flat.reserve(sources.size());
      for (const auto& [view, row] : sources) {
        int64_t off = 0;
        for (int64_t v = 0; v < view; ++v) off += sizes[static_cast<size_t>(v)];
        flat.push_back(off + row);
      }
      negs[l] = ops::gather_rows(ops::concat_rows(parts), flat);
    }
    return losses::multicrop_nce_loss(q, p, negs, ids, cfg_.weights.tau);
  }

  TrainConfig cfg_;
  nets::ResnetGenerator<T> gen_;
  nets::PatchDiscriminator<T> disc_;
  nets::PatchProjection<T> proj_f_;
  nets::DomainProjection<T> head_hf_, head_hr_;
  nets::ParamRegistry<T> reg_g_, reg_d_, reg_f_, reg_hf_, reg_hr_, reg_gen_side_;
  Adam<T> opt_g_, opt_d_;
  Rng sample_rng_;
  int64_t epoch_ = 0;
  int64_t step_in_epoch_ = 0;
  uint64_t global_step_ = 0;
  bool update_d_ = true;
  bool debug_freeze_checks_ = false;
  bool dump_pending_ = false;
  std::string dump_crops_dir_;
};

}  // namespace mcdut::train
