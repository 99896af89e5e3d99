#pragma once

#include "mmadv/attacks.hpp"
#include "mmadv/data.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mmadv {

enum class Regime { kClean, kTecoaItr, kFare, kMat };
std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

enum class OptimizerKind { kSgdMomentum, kAdamW };
std::string to_string(OptimizerKind o);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  int steps = 5000;
  int batch_size = 128;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  uint64_t seed = 0;
  Regime regime = Regime::kClean;
  PerturbationBudget budget = PerturbationBudget::training_default();
  AttackOrder order = AttackOrder::kTextThenImage;
  TextAttackKind text_attack = TextAttackKind::kGreedy;
  double eda_alpha = 0.3;
  int eda_samples = 1;
  std::optional<PairingPolicy> pairing;  // defaults to the dataset's policy
  int log_every = 100;

  void validate() const;
};

struct RunLogEntry {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct RunLog {
  std::vector<RunLogEntry> entries;
  double total_seconds = 0.0;
  uint64_t config_hash = 0;

  double mean_step_ms() const;
  void save(const std::string& path) const;
};

struct TrainResult {
  ModelParams params;
  RunLog log;
};

// Cosine schedule: base_lr at step 0, 0 at step == total.
double lr_schedule(int step, int total, double base_lr);

struct BatchPair {
  Mat images;  // one row per pair
  std::vector<TextSample> texts;
  std::vector<int> group_ids;
};

// Draws n distinct groups, then picks the image/caption per the policy.
// kOneToMany keeps the first image and samples a caption uniformly over
// the group's originals and augments, kManyToOne mirrors that on the
// image side, kManyToMany samples both.
BatchPair sample_batch(const PairedDataset& dataset, PairingPolicy policy,
                       int n, uint64_t seed, int step);

// Momentum SGD and decoupled-decay AdamW over a flat tensor list.
// Weight decay skips any tensor whose mask entry is false.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<Mat*> params,
            std::vector<bool> decay_mask, double weight_decay,
            double momentum = 0.9, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);

  void step(const std::vector<Mat>& grads, double lr);

 private:
  OptimizerKind kind_;
  std::vector<Mat*> params_;
  std::vector<bool> decay_mask_;
  double weight_decay_, momentum_, beta1_, beta2_, eps_;
  std::vector<Mat> m_, v_;
  int t_ = 0;
};

// The four regimes behind one entry point; `reference` is required by
// kFare (the frozen encoder it trains toward) and ignored otherwise.
TrainResult train(const TrainConfig& config, const PairedDataset& dataset,
                  const ModelParams* reference = nullptr);

TrainResult train_clean(TrainConfig config, const PairedDataset& dataset);
TrainResult train_unimodal_at(TrainConfig config, const PairedDataset& dataset,
                              Regime variant,
                              const ModelParams* reference = nullptr);
TrainResult train_mat(TrainConfig config, const PairedDataset& dataset);

}  // namespace mmadv
