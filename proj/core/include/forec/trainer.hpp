#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forec/augment.hpp"
#include "forec/dataset.hpp"
#include "forec/net.hpp"
#include "forec/optim.hpp"
#include "forec/rng.hpp"

namespace forec {

/// Ablation arms. Supervised trains on labeled data only; Baseline adds the
/// pseudo-label consistency loss; Rec / Forec / FgBg add an auxiliary decoder
/// trained with plain reconstruction, foreground-only reconstruction, or a
/// binary foreground head respectively.
enum class TrainMode { Supervised, Baseline, Rec, Forec, FgBg };

const char* mode_name(TrainMode m);
TrainMode mode_from_name(const std::string& name);  // throws ConfigError

struct TrainConfig {
  TrainMode mode = TrainMode::Forec;
  float lambda1 = 0.5f;  // weight of the pseudo-label CE
  float lambda2 = 1.0f;  // weight of the auxiliary loss
  float tau = 0.95f;     // pseudo-label confidence threshold
  float ema_alpha = 0.99f;
  int batch = 4;  // per-side batch size (labeled and unlabeled each)
  int epochs = 60;
  uint64_t seed = 1;

  double lr0 = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = 0.8;  // poly decay exponent

  std::string data_dir;
  double labeled_fraction = 1.0 / 16.0;
  uint64_t partition_seed = 1;

  std::vector<int> object_classes = {1, 2, 3};

  net::NetworkConfig net;  // aux head is derived from the mode, in_channels stays 3
  AugConfig augment;

  void validate() const;  // throws ConfigError
  bool uses_unlabeled() const { return mode != TrainMode::Supervised; }
  bool uses_aux() const {
    return mode == TrainMode::Rec || mode == TrainMode::Forec || mode == TrainMode::FgBg;
  }
  net::AuxKind aux_kind() const;
};

/// Flat JSON object whose keys are the dotted config fields, e.g.
/// {"train.mode": "baseline+forec", "opt.lr0": 1e-3}. Unknown keys are
/// rejected by name; omitted keys keep their defaults.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string dump_train_config(const TrainConfig& cfg);  // round-trips through parse

struct StepLosses {
  float loss_s = 0.f;
  float loss_ul = 0.f;
  float loss_rec = 0.f;
  float total = 0.f;  // loss_s + lambda1*loss_ul + lambda2*loss_rec, 32-bit
  double lr = 0.0;    // rate used by this step's sgd update

  // Teacher-side pixel counts over the weak unlabeled views.
  int64_t pseudo_pixels = 0;
  int64_t scenario3_pixels = 0;  // forec mode only
  int64_t unlabeled_pixels = 0;  // denominator; 0 in supervised mode
};

/// One training run over an in-memory dataset. The dataset's stored partition
/// is ignored; the config's labeled_fraction and partition_seed decide the
/// split so one generated dataset serves every ratio.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, Dataset ds);

  StepLosses step();
  double evaluate() const;  // teacher mIoU on the unaugmented validation split

  int steps_per_epoch() const { return steps_per_epoch_; }
  int64_t total_steps() const { return total_steps_; }
  int64_t global_step() const { return global_step_; }
  /// Schedule value after `completed` steps; what the next step will use.
  double schedule_lr(int64_t completed) const;

  const TrainConfig& config() const { return cfg_; }
  const Dataset& dataset() const { return ds_; }
  const Partition& partition() const { return part_; }
  const net::Network& student() const { return nets_.student; }
  const net::Network& teacher() const { return nets_.teacher; }
  net::Network& student() { return nets_.student; }

 private:
  TrainConfig cfg_;
  Dataset ds_;
  Partition part_;
  net::BuildResult nets_;
  optim::SgdState sgd_;
  Rng aug_rng_, labeled_rng_, unlabeled_rng_;
  std::optional<PoolSampler> labeled_sampler_, unlabeled_sampler_;
  int steps_per_epoch_ = 0;
  int64_t total_steps_ = 0;
  int64_t global_step_ = 0;
};

struct TrainResult {
  int epochs = 0;
  int64_t total_steps = 0;
  double final_val_miou = 0.0;
};

/// Full run: loads cfg.data_dir, trains epochs * steps_per_epoch steps,
/// evaluates the teacher after every epoch, and writes metrics.csv,
/// final.ckpt (student.* and teacher.* tensors) and resolved-config.json
/// under out_dir. The epoch-0 row logs the untrained model; the lr column
/// always equals schedule_lr(step).
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace forec
