#pragma once

#include "mmadv/augment.hpp"
#include "mmadv/metrics.hpp"
#include "mmadv/train.hpp"

#include <string>
#include <vector>

namespace mmadv {

struct DataConfig {
  int train_groups = 512;
  int test_groups = 128;
  int images_per_group = 1;
  int captions_per_group = 5;
};

struct AugmentConfig {
  std::vector<AugmenterSpec> specs;
  Assembly assembly = Assembly::kOneToMany;
};

struct EvalConfig {
  std::vector<EvalAttack> attacks = {EvalAttack::kPgdOnly, EvalAttack::kCoAttack,
                                     EvalAttack::kSgaAnalog};
  KlEstimator kl_estimator = KlEstimator::kPerPairCategorical;
  bool augmentation_metrics = true;
  // Frozen reference for alignment/diversity/gap (and the fare regime);
  // empty means "this run's own clean checkpoint must exist".
  std::string reference_checkpoint;
};

// Everything a run needs; the serialized hash is embedded in every
// artifact the run writes.
struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out = "run";
  WorldConfig world;
  DataConfig data;
  AugmentConfig augment;
  TrainConfig train;
  PerturbationBudget attack_train;  // budget used inside training
  PerturbationBudget attack_eval;   // budget used by robust evaluation
  EvalConfig eval;

  static ExperimentConfig from_file(const std::string& path);
  // Throws on unknown keys, naming the offending field path.
  static ExperimentConfig from_json_text(const std::string& text);

  std::string canonical_json() const;
  uint64_t hash() const;
  uint64_t world_hash() const;
};

// Dotted-path patch for sweeps, e.g. "augment.specs.0.count" = "2" or
// "train.order" = "\"I->T\"" (values parse as JSON, bare words as strings).
std::string patch_config_json(const std::string& config_text,
                              const std::string& axis,
                              const std::string& value);

}  // namespace mmadv
