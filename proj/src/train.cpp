#include "mmadv/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace mmadv {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kClean: return "clean";
    case Regime::kTecoaItr: return "tecoa-itr";
    case Regime::kFare: return "fare";
    case Regime::kMat: return "mat";
  }
  throw std::logic_error("unknown regime");
}

Regime regime_from_string(const std::string& s) {
  if (s == "clean") return Regime::kClean;
  if (s == "tecoa-itr") return Regime::kTecoaItr;
  if (s == "fare") return Regime::kFare;
  if (s == "mat") return Regime::kMat;
  throw std::invalid_argument("unknown regime: " + s);
}

std::string to_string(OptimizerKind o) {
  return o == OptimizerKind::kSgdMomentum ? "sgd-momentum" : "adamw";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd-momentum") return OptimizerKind::kSgdMomentum;
  if (s == "adamw") return OptimizerKind::kAdamW;
  throw std::invalid_argument("unknown optimizer: " + s);
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("train: steps < 1");
  if (batch_size < 2)
    throw std::invalid_argument("train: contrastive batch needs >= 2 pairs");
  if (lr <= 0) throw std::invalid_argument("train: lr <= 0");
  if (weight_decay < 0) throw std::invalid_argument("train: weight decay < 0");
}

double lr_schedule(int step, int total, double base_lr) {
  if (step < 0 || step > total)
    throw std::invalid_argument("lr_schedule: step outside [0, total]");
  return base_lr * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                   static_cast<double>(total))) /
         2.0;
}

double RunLog::mean_step_ms() const {
  if (entries.empty()) return 0.0;
  double s = 0.0;
  for (const RunLogEntry& e : entries) s += e.wall_ms;
  return s / static_cast<double>(entries.size());
}

void RunLog::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("runlog: cannot open " + path);
  os.precision(17);
  os << "# config_hash=" << config_hash << " total_seconds=" << total_seconds
     << "\n";
  os << "step,loss,lr,wall_ms\n";
  for (const RunLogEntry& e : entries)
    os << e.step << "," << e.loss << "," << e.lr << "," << e.wall_ms << "\n";
}

BatchPair sample_batch(const PairedDataset& dataset, PairingPolicy policy,
                       int n, uint64_t seed, int step) {
  int total = static_cast<int>(dataset.groups.size());
  if (n > total)
    throw std::invalid_argument("sample_batch: batch of " + std::to_string(n) +
                                " exceeds " + std::to_string(total) +
                                " groups");
  Rng rng(derive_seed(seed, "batch/" + std::to_string(step)));
  // Partial Fisher-Yates for n distinct groups.
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < n; ++i)
    std::swap(idx[i], idx[i + rng.uniform_int(total - i)]);

  BatchPair batch;
  batch.images.resize(n, dataset.world.image_dim);
  for (int i = 0; i < n; ++i) {
    const SampleGroup& g = dataset.groups[idx[i]];
    int img_i = 0, cap_i = 0;
    switch (policy) {
      case PairingPolicy::kFirstOnly11:
      case PairingPolicy::kNaiveFlat11:
        break;
      case PairingPolicy::kOneToMany:
        cap_i = rng.uniform_int(static_cast<int>(g.captions.size()));
        break;
      case PairingPolicy::kManyToOne:
        img_i = rng.uniform_int(static_cast<int>(g.images.size()));
        break;
      case PairingPolicy::kManyToMany:
        img_i = rng.uniform_int(static_cast<int>(g.images.size()));
        cap_i = rng.uniform_int(static_cast<int>(g.captions.size()));
        break;
    }
    batch.images.row(i) = g.images[img_i].image;
    batch.texts.push_back(g.captions[cap_i].text);
    batch.group_ids.push_back(g.id);
  }
  return batch;
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<Mat*> params,
                     std::vector<bool> decay_mask, double weight_decay,
                     double momentum, double beta1, double beta2, double eps)
    : kind_(kind),
      params_(std::move(params)),
      decay_mask_(std::move(decay_mask)),
      weight_decay_(weight_decay),
      momentum_(momentum),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (Mat* p : params_) {
    m_.push_back(Mat::Zero(p->rows(), p->cols()));
    v_.push_back(Mat::Zero(p->rows(), p->cols()));
  }
}

void Optimizer::step(const std::vector<Mat>& grads, double lr) {
  if (grads.size() != params_.size())
    throw std::invalid_argument("optimizer: gradient count mismatch");
  ++t_;
  for (size_t i = 0; i < params_.size(); ++i) {
    Mat& p = *params_[i];
    const Mat& g = grads[i];
    if (!g.allFinite())
      throw std::runtime_error("optimizer: non-finite gradient");
    if (kind_ == OptimizerKind::kSgdMomentum) {
      Mat eff = g;
      if (decay_mask_[i] && weight_decay_ > 0) eff += weight_decay_ * p;
      m_[i] = momentum_ * m_[i] + eff;
      p -= lr * m_[i];
    } else {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
      double bc1 = 1.0 - std::pow(beta1_, t_);
      double bc2 = 1.0 - std::pow(beta2_, t_);
      Mat mhat = m_[i] / bc1;
      Mat vhat = v_[i] / bc2;
      p -= lr * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
      if (decay_mask_[i] && weight_decay_ > 0)
        p -= lr * weight_decay_ * p;  // decoupled decay
    }
  }
}

namespace {

struct StepLoss {
  double value = 0.0;
  std::vector<Mat> grads;
};

StepLoss contrastive_step(const ModelParams& params, const Mat& images,
                          const std::vector<TextSample>& texts) {
  Tape tape;
  ModelGraph g = put_params(tape, params, true);
  int img = tape.input(images);
  int ei = encode_image_node(tape, g, params.dims, img);
  int et = encode_text_node(tape, g, params.dims, texts);
  int loss = info_nce_node(tape, g, ei, et);
  tape.backward(loss);
  StepLoss out;
  out.value = tape.value(loss)(0, 0);
  for (int id : {g.w1, g.b1, g.w2, g.b2, g.tok_emb, g.wt, g.bt, g.log_tau})
    out.grads.push_back(tape.grad(id));
  return out;
}

StepLoss fare_step(const ModelParams& params, const ModelParams& reference,
                   const Mat& images) {
  Mat ref_emb = encode_image(reference, images);
  Tape tape;
  ModelGraph g = put_params(tape, params, true);
  int img = tape.input(images);
  int ei = encode_image_node(tape, g, params.dims, img);
  int diff = tape.sub(ei, tape.input(ref_emb));
  int loss = tape.scale(tape.sum_all(tape.cmul(diff, diff)),
                        1.0 / static_cast<double>(images.rows()));
  tape.backward(loss);
  StepLoss out;
  out.value = tape.value(loss)(0, 0);
  for (int id : {g.w1, g.b1, g.w2, g.b2, g.tok_emb, g.wt, g.bt, g.log_tau})
    out.grads.push_back(tape.grad(id));
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& config, const PairedDataset& dataset,
                  const ModelParams* reference) {
  config.validate();
  if (config.regime == Regime::kFare && reference == nullptr)
    throw std::invalid_argument("fare requires a frozen reference checkpoint");
  if (dataset.groups.empty())
    throw std::invalid_argument("train: empty dataset");

  PairingPolicy policy = config.pairing.value_or(dataset.policy);
  TrainResult result{ModelParams::init(dataset.world.model_dims(),
                                       derive_seed(config.seed, "init")),
                     {}};
  Optimizer opt(config.optimizer, result.params.tensors(),
                ModelParams::decay_mask(), config.weight_decay,
                config.momentum);
  Rng eda_rng(derive_seed(config.seed, "train-eda"));
  RunLog& log = result.log;
  auto t_start = std::chrono::steady_clock::now();

  for (int step = 0; step < config.steps; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    BatchPair batch =
        sample_batch(dataset, policy, config.batch_size, config.seed, step);

    Mat adv_images = batch.images;
    std::vector<TextSample> adv_texts = batch.texts;
    switch (config.regime) {
      case Regime::kClean:
        break;
      case Regime::kTecoaItr: {
        PerturbationBudget b = config.budget;
        b.image_objective = AttackObjective::kCrossModal;
        adv_images =
            pgd_image_attack(result.params, batch.images, batch.texts, b)
                .images;
        break;
      }
      case Regime::kFare: {
        PerturbationBudget b = config.budget;
        b.image_objective = AttackObjective::kUnimodal;
        adv_images =
            pgd_image_attack(result.params, batch.images, batch.texts, b)
                .images;
        break;
      }
      case Regime::kMat: {
        std::string stages;
        switch (config.order) {
          case AttackOrder::kTextThenImage: stages = "TI"; break;
          case AttackOrder::kImageThenText: stages = "IT"; break;
          case AttackOrder::kTextImageText: stages = "TIT"; break;
          case AttackOrder::kImageTextImage: stages = "ITI"; break;
        }
        for (char stage : stages) {
          if (stage == 'T') {
            if (config.budget.max_edits == 0) continue;
            for (size_t i = 0; i < adv_texts.size(); ++i) {
              ImageSample cur(adv_images.row(static_cast<int>(i)));
              if (config.text_attack == TextAttackKind::kGreedy) {
                adv_texts[i] = text_attack_greedy(result.params, adv_texts[i],
                                                  cur, config.budget)
                                   .text;
              } else {
                auto scorer = [&](const TextSample& t) {
                  return similarity(result.params, cur, t);
                };
                adv_texts[i] = eda_perturb_attack(
                    result.params, adv_texts[i], config.eda_alpha,
                    config.eda_samples, scorer, eda_rng,
                    result.params.dims.max_len);
              }
            }
          } else {
            adv_images = pgd_image_attack(result.params, adv_images, adv_texts,
                                          config.budget)
                             .images;
          }
        }
        break;
      }
    }

    double lr = lr_schedule(step, config.steps, config.lr);
    StepLoss sl = config.regime == Regime::kFare
                      ? fare_step(result.params, *reference, adv_images)
                      : contrastive_step(result.params, adv_images, adv_texts);
    if (!std::isfinite(sl.value))
      throw std::runtime_error("train: loss diverged at step " +
                               std::to_string(step) + " (" +
                               to_string(config.regime) + ")");
    opt.step(sl.grads, lr);

    auto t1 = std::chrono::steady_clock::now();
    if (step % config.log_every == 0 || step == config.steps - 1) {
      RunLogEntry e;
      e.step = step;
      e.loss = sl.value;
      e.lr = lr;
      e.wall_ms =
          std::chrono::duration<double, std::milli>(t1 - t0).count();
      log.entries.push_back(e);
    }
  }
  log.total_seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t_start)
                          .count();
  return result;
}

TrainResult train_clean(TrainConfig config, const PairedDataset& dataset) {
  config.regime = Regime::kClean;
  return train(config, dataset);
}

TrainResult train_unimodal_at(TrainConfig config, const PairedDataset& dataset,
                              Regime variant, const ModelParams* reference) {
  if (variant != Regime::kTecoaItr && variant != Regime::kFare)
    throw std::invalid_argument("train_unimodal_at: variant must be "
                                "tecoa-itr or fare");
  config.regime = variant;
  return train(config, dataset, reference);
}

TrainResult train_mat(TrainConfig config, const PairedDataset& dataset) {
  config.regime = Regime::kMat;
  return train(config, dataset);
}

}  // namespace mmadv
