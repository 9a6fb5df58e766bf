// Copyright 2026 The voxtopo Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Conditional GAN training (patch discriminator + L1) and inference.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxtopo/error.hpp"
#include "voxtopo/neural/checkpoint.hpp"
#include "voxtopo/neural/model.hpp"
#include "voxtopo/neural/optim.hpp"
#include "voxtopo/voxgrid.hpp"

namespace voxtopo::nn {

struct StepLosses {
  double d_loss = 0;
  double g_adv = 0;
  double g_l1 = 0;
};

struct GanConfig {
  double lambda_l1 = 100.0;
  AdamConfig adam;
};

/// Generator, discriminator and their optimizers.
class GanTrainer {
 public:
  GanTrainer(Model<float> gen, Model<float> disc, GanConfig cfg, std::uint64_t seed)
      : gen_(std::move(gen)), disc_(std::move(disc)), cfg_(cfg), seed_(seed), opt_g_(cfg.adam), opt_d_(cfg.adam) {
    if (disc_.in_channels() != 1 + gen_.out_channels())
      throw ConfigError("discriminator takes " + std::to_string(disc_.in_channels()) +
                        " channels but blob + generator output has " + std::to_string(1 + gen_.out_channels()));
  }

  /// Fresh models initialised from seed.
  static GanTrainer fresh(int out_channels, GanConfig cfg, std::uint64_t seed, const GeneratorOptions& gopt = {},
                          const DiscriminatorOptions& dopt = {}) {
    auto g = build_generator<float>(out_channels, gopt);
    auto d = build_discriminator<float>(1 + out_channels, dopt);
    g.init(derive_seed(seed, 0x47454eu));
    d.init(derive_seed(seed, 0x444953u));
    return GanTrainer(std::move(g), std::move(d), cfg, seed);
  }

  Model<float>& generator() { return gen_; }
  Model<float>& discriminator() { return disc_; }
  Adam<float>& gen_optimizer() { return opt_g_; }
  Adam<float>& disc_optimizer() { return opt_d_; }
  const GanConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  /// One discriminator update followed by one generator update.
  StepLosses train_step(const Tensor<float>& blob, const Tensor<float>& target) {
    if (blob.c() != 1) throw std::invalid_argument("blob batch must have one channel");
    if (target.c() != gen_.out_channels() || target.n() != blob.n() || target.d() != blob.d() ||
        target.h() != blob.h() || target.w() != blob.w())
      throw std::invalid_argument("target batch " + to_string(target.shape()) + " does not match blob " +
                                  to_string(blob.shape()));
    const PassContext gctx{.training = true, .dropout_seed = derive_seed(seed_, 0x64726f70u, std::uint64_t(step_))};
    const PassContext dctx{.training = true};
    StepLosses out;

    Tensor<float> fake = gen_.forward(blob, gctx, true);

    // Discriminator: real pair toward 1, fake pair toward 0.
    disc_.zero_grad();
    Tensor<float> grad;
    disc_.forward(concat_channels(blob, target), dctx, true);
    const double real = bce_with_logits(disc_.logits(), 1.0, &grad);
    disc_.backward(grad, true, false);
    const Tensor<float> fake_pair = concat_channels(blob, fake);
    disc_.forward(fake_pair, dctx, true);
    const double fake_loss = bce_with_logits(disc_.logits(), 0.0, &grad);
    disc_.backward(grad, true, false);
    out.d_loss = real + fake_loss;
    if (!std::isfinite(out.d_loss)) throw NumericFault("discriminator loss is not finite");
    opt_d_.step(disc_);

    // Generator: fool the updated discriminator and stay close in L1.
    disc_.zero_grad();
    gen_.zero_grad();
    disc_.forward(fake_pair, dctx, true);
    out.g_adv = bce_with_logits(disc_.logits(), 1.0, &grad);
    Tensor<float> dpair = disc_.backward(grad, true, true);
    Tensor<float> dfake = slice_channels(dpair, 1, gen_.out_channels());
    out.g_l1 = l1_loss(fake, target, &dfake, cfg_.lambda_l1);
    if (!std::isfinite(out.g_adv) || !std::isfinite(out.g_l1)) throw NumericFault("generator loss is not finite");
    gen_.backward(dfake, false, false);
    opt_g_.step(gen_);
    disc_.zero_grad();
    gen_.clear();
    disc_.clear();
    ++step_;
    return out;
  }

 private:
  Model<float> gen_, disc_;
  GanConfig cfg_;
  std::uint64_t seed_;
  std::int64_t step_ = 0;
  Adam<float> opt_g_, opt_d_;
};

// ---------------------------------------------------------------------------

struct TrainStage {
  int resolution = 64;
  int batch_size = 8;
  int epochs = 1;
  std::int64_t max_steps = -1;  // cap per stage; -1 = no cap
};

struct TrainConfig {
  std::vector<TrainStage> stages;
  GanConfig gan;
  std::uint64_t seed = 0;
  int out_channels = 2;
  std::int64_t checkpoint_every = 0;  // steps; 0 = end of each stage only
  GeneratorOptions generator;
  DiscriminatorOptions discriminator;
};

/// 32^3 batch 8, then 64^3 at batch 8, 2 and 1.
inline std::vector<TrainStage> default_schedule(int epochs_per_stage = 10) {
  return {{32, 8, epochs_per_stage}, {64, 8, epochs_per_stage}, {64, 2, epochs_per_stage}, {64, 1, epochs_per_stage}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (auto& s : c.stages)
    stages.push_back({{"resolution", s.resolution}, {"batch_size", s.batch_size}, {"epochs", s.epochs},
                      {"max_steps", s.max_steps}});
  return {{"stages", stages},
          {"lambda_l1", c.gan.lambda_l1},
          {"adam", {{"lr", c.gan.adam.lr}, {"beta1", c.gan.adam.beta1}, {"beta2", c.gan.adam.beta2},
                    {"eps", c.gan.adam.eps}}},
          {"seed", c.seed},
          {"out_channels", c.out_channels},
          {"checkpoint_every", c.checkpoint_every},
          {"dropout_rate", c.generator.dropout_rate},
          {"discriminator_batchnorm", c.discriminator.batchnorm}};
}

struct TrainingPair {
  VoxelGrid blob;    // 1 channel
  VoxelGrid target;  // out_channels channels
};

/// Pairs available per resolution.
using TrainingData = std::map<int, std::vector<TrainingPair>>;

struct TrainReport {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<StepLosses> losses;  // steps run by this call
  std::int64_t final_step = 0;
};

inline void validate_training(const TrainConfig& cfg, const TrainingData& data) {
  if (cfg.stages.empty()) throw ConfigError("training schedule has no stages");
  if (cfg.out_channels < 1) throw ConfigError("out_channels must be positive");
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& st = cfg.stages[s];
    const std::string where = "stage " + std::to_string(s) + ": ";
    if (st.resolution <= 0 || st.resolution % 16 != 0)
      throw ConfigError(where + "resolution " + std::to_string(st.resolution) + " is not a positive multiple of 16");
    if (st.batch_size <= 0) throw ConfigError(where + "batch size must be positive");
    if (st.epochs < 0) throw ConfigError(where + "epochs must be non-negative");
    auto it = data.find(st.resolution);
    if (it == data.end() || it->second.empty())
      throw ConfigError(where + "no training pairs at resolution " + std::to_string(st.resolution));
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const auto& p = it->second[i];
      const GridDims want{st.resolution, st.resolution, st.resolution};
      if (!(p.blob.dims() == want) || !(p.target.dims() == want))
        throw ConfigError(where + "pair " + std::to_string(i) + " has dims " + to_string(p.blob.dims()) +
                          ", stage resolution is " + std::to_string(st.resolution));
      if (p.blob.channels() != 1 || p.target.channels() != cfg.out_channels)
        throw ConfigError(where + "pair " + std::to_string(i) + " has " + std::to_string(p.blob.channels()) + "+" +
                          std::to_string(p.target.channels()) + " channels, expected 1+" +
                          std::to_string(cfg.out_channels));
    }
  }
}

/// Order of pairs within one epoch; a pure function of its arguments.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, int stage, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x6f72646572u, std::uint64_t(stage), std::uint64_t(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

inline Tensor<float> stack_channels(const std::vector<const VoxelGrid*>& grids) {
  const auto& g0 = *grids.front();
  const GridDims d = g0.dims();
  Tensor<float> t({int(grids.size()), g0.channels(), d.d, d.h, d.w});
  for (std::size_t i = 0; i < grids.size(); ++i)
    std::copy(grids[i]->data().begin(), grids[i]->data().end(), t.volume(int(i), 0));
  return t;
}

inline Tensor<float> grid_to_tensor(const VoxelGrid& g) { return stack_channels({&g}); }

inline VoxelGrid tensor_to_grid(const Tensor<float>& t, int n, double voxel_size) {
  VoxelGrid g({t.d(), t.h(), t.w()}, t.c(), 0.0f, voxel_size);
  const float* src = t.volume(n, 0);
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = std::clamp(src[i], 0.0f, 1.0f);
  return g;
}

/// Runs (or resumes) the staged schedule. Checkpoints and losses.csv go to
/// out_dir. Pass a checkpoint's training state to resume.
inline TrainReport train(const TrainConfig& cfg, const TrainingData& data, const std::filesystem::path& out_dir,
                         std::optional<CheckpointContents> resume = std::nullopt,
                         const std::function<void(std::int64_t, const StepLosses&)>& on_step = {}) {
  validate_training(cfg, data);
  std::filesystem::create_directories(out_dir);

  std::optional<GanTrainer> trainer;
  int stage0 = 0, epoch0 = 0, batch0 = 0;
  if (resume) {
    if (!resume->training || !resume->generator || !resume->discriminator)
      throw ConfigError("resume checkpoint carries no training state");
    const auto& st = *resume->training;
    if (resume->generator->out_channels() != cfg.out_channels)
      throw ConfigError("resume checkpoint generator has " + std::to_string(resume->generator->out_channels()) +
                        " output channels, config asks for " + std::to_string(cfg.out_channels));
    trainer.emplace(std::move(*resume->generator), std::move(*resume->discriminator), cfg.gan, st.seed);
    trainer->gen_optimizer() = st.opt_g;
    trainer->disc_optimizer() = st.opt_d;
    trainer->set_step(st.step);
    stage0 = st.stage;
    epoch0 = st.epoch;
    batch0 = st.batch;
  } else {
    trainer.emplace(GanTrainer::fresh(cfg.out_channels, cfg.gan, cfg.seed, cfg.generator, cfg.discriminator));
  }
  GanTrainer& gan = *trainer;

  const auto csv_path = out_dir / "losses.csv";
  const bool append = resume.has_value() && std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!append) csv << "step,d_loss,g_adv,g_l1\n";
  csv.precision(9);

  TrainReport report;
  auto checkpoint = [&](int stage, int epoch, int batch, const std::string& name) {
    TrainingState st;
    st.seed = gan.seed();
    st.stage = stage;
    st.epoch = epoch;
    st.batch = batch;
    st.step = gan.step();
    st.config = to_json(cfg);
    st.opt_g = gan.gen_optimizer();
    st.opt_d = gan.disc_optimizer();
    const auto path = out_dir / name;
    save_checkpoint(path, &gan.generator(), &gan.discriminator(), &st);
    report.checkpoints.push_back(path);
  };
  auto step_name = [&](std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%08lld.v2vw", static_cast<long long>(step));
    return std::string(buf);
  };

  for (int s = stage0; s < int(cfg.stages.size()); ++s) {
    const TrainStage& st = cfg.stages[s];
    const auto& pairs = data.at(st.resolution);
    const int batches = int((pairs.size() + st.batch_size - 1) / st.batch_size);
    std::int64_t stage_steps = (s == stage0) ? std::int64_t(epoch0) * batches + batch0 : 0;
    bool capped = false;
    for (int e = (s == stage0 ? epoch0 : 0); e < st.epochs && !capped; ++e) {
      const auto order = epoch_order(gan.seed(), s, e, pairs.size());
      for (int b = (s == stage0 && e == epoch0 ? batch0 : 0); b < batches; ++b) {
        if (st.max_steps >= 0 && stage_steps >= st.max_steps) {
          capped = true;
          break;
        }
        std::vector<const VoxelGrid*> blobs, targets;
        for (std::size_t k = std::size_t(b) * st.batch_size; k < std::min(pairs.size(), std::size_t(b + 1) * st.batch_size); ++k) {
          blobs.push_back(&pairs[order[k]].blob);
          targets.push_back(&pairs[order[k]].target);
        }
        const StepLosses l = gan.train_step(stack_channels(blobs), stack_channels(targets));
        ++stage_steps;
        report.losses.push_back(l);
        csv << gan.step() << ',' << l.d_loss << ',' << l.g_adv << ',' << l.g_l1 << '\n';
        if (on_step) on_step(gan.step(), l);
        if (cfg.checkpoint_every > 0 && gan.step() % cfg.checkpoint_every == 0) {
          // Position of the next batch.
          int nb = b + 1, ne = e;
          if (nb == batches) {
            nb = 0;
            ++ne;
          }
          csv.flush();
          checkpoint(s, ne, nb, step_name(gan.step()));
        }
      }
    }
    checkpoint(s + 1, 0, 0, "stage" + std::to_string(s) + "_final.v2vw");
  }
  csv.flush();
  checkpoint(int(cfg.stages.size()), 0, 0, "final.v2vw");
  report.final_step = gan.step();
  return report;
}

/// Rebuilds a TrainConfig from the JSON stored with a checkpoint.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (auto& s : j.at("stages"))
    c.stages.push_back({s.at("resolution").get<int>(), s.at("batch_size").get<int>(), s.at("epochs").get<int>(),
                        s.value("max_steps", std::int64_t{-1})});
  c.gan.lambda_l1 = j.at("lambda_l1").get<double>();
  const auto& a = j.at("adam");
  c.gan.adam = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                a.at("eps").get<double>()};
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out_channels = j.at("out_channels").get<int>();
  c.checkpoint_every = j.value("checkpoint_every", std::int64_t{0});
  c.generator.dropout_rate = j.value("dropout_rate", 0.5);
  c.discriminator.batchnorm = j.value("discriminator_batchnorm", false);
  return c;
}

// ---------------------------------------------------------------------------

struct InferOptions {
  bool dropout_at_inference = false;
  std::uint64_t dropout_seed = 0;
};

/// Eval-mode generator pass over a single-channel blob of any size that is a
/// multiple of 16 along each axis.
inline VoxelGrid infer(Model<float>& gen, const VoxelGrid& blob, const InferOptions& opt = {}) {
  if (gen.kind() != "generator") throw std::invalid_argument("infer needs a generator model");
  if (blob.channels() != 1)
    throw InvalidInput("blob grid must have 1 channel, got " + std::to_string(blob.channels()));
  const GridDims d = blob.dims();
  const int dims[3] = {d.d, d.h, d.w};
  for (int v : dims)
    if (v % 16 != 0) {
      auto pad = [](int n) { return std::to_string((16 - n % 16) % 16); };
      throw InvalidInput("blob dims " + to_string(d) + " are not multiples of 16; pad by (" + pad(d.d) + "," +
                         pad(d.h) + "," + pad(d.w) + ") voxels");
    }
  const PassContext ctx{.training = false, .dropout_at_inference = opt.dropout_at_inference,
                        .dropout_seed = opt.dropout_seed};
  auto y = gen.forward(grid_to_tensor(blob), ctx, false);
  return tensor_to_grid(y, 0, blob.voxel_size());
}

}  // namespace voxtopo::nn
