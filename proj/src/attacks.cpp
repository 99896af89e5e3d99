#include "mmadv/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmadv {

void PerturbationBudget::validate(int caption_len) const {
  if (epsilon < 0) throw std::invalid_argument("budget: epsilon < 0");
  if (steps < 1) throw std::invalid_argument("budget: steps < 1");
  if (step_size < 0) throw std::invalid_argument("budget: step size < 0");
  if (max_edits < 0 || max_edits > caption_len)
    throw std::invalid_argument("budget: max_edits outside [0, caption len]");
  if (candidates < 1) throw std::invalid_argument("budget: candidates < 1");
}

PerturbationBudget PerturbationBudget::training_default() { return {}; }

PerturbationBudget PerturbationBudget::evaluation_default() {
  PerturbationBudget b;
  b.steps = 10;
  return b;
}

std::string to_string(AttackOrder o) {
  switch (o) {
    case AttackOrder::kTextThenImage: return "T->I";
    case AttackOrder::kImageThenText: return "I->T";
    case AttackOrder::kTextImageText: return "T->I->T";
    case AttackOrder::kImageTextImage: return "I->T->I";
  }
  throw std::logic_error("unknown attack order");
}

AttackOrder attack_order_from_string(const std::string& s) {
  if (s == "T->I") return AttackOrder::kTextThenImage;
  if (s == "I->T") return AttackOrder::kImageThenText;
  if (s == "T->I->T") return AttackOrder::kTextImageText;
  if (s == "I->T->I") return AttackOrder::kImageTextImage;
  throw std::invalid_argument("unknown attack order: " + s);
}

namespace {

// Shared PGD loop: descend the per-row objective <emb_row, target_row>
// summed over the view set, project to the L-inf ball, clamp to [0,1],
// and keep the best iterate per sample.
ImageAttackResult run_pgd(const ModelParams& params, const Mat& images,
                          const Mat& targets,  // one row per image row
                          const std::vector<double>& scales,
                          const PerturbationBudget& budget) {
  budget.validate();
  const int n = static_cast<int>(images.rows());
  const int d = static_cast<int>(images.cols());
  std::vector<Mat> view_mats;
  for (double s : scales) view_mats.push_back(resample_matrix(d, s).transpose());
  const double inv_views = 1.0 / static_cast<double>(scales.size());

  auto objective = [&](const Mat& x) {
    Eigen::VectorXd obj = Eigen::VectorXd::Zero(n);
    for (const Mat& rt : view_mats) {
      // Views are convex combinations of in-range coordinates, so they
      // stay in [0,1] and match the tape path exactly.
      Mat emb = encode_image(params, x * rt);
      obj += emb.cwiseProduct(targets).rowwise().sum();
    }
    return (obj * inv_views).eval();
  };

  Mat x = images;
  ImageAttackResult res;
  Eigen::VectorXd obj = objective(x);
  res.images = x;
  res.initial_objective.assign(obj.data(), obj.data() + n);
  Eigen::VectorXd best_obj = obj;

  for (int step = 0; step < budget.steps; ++step) {
    Tape tape;
    ModelGraph g = put_params(tape, params, false);
    int xin = tape.input(x, true);
    int total = -1;
    int tgt = tape.input(targets);
    for (const Mat& rt : view_mats) {
      int xv = tape.matmul(xin, tape.input(rt));
      int emb = encode_image_node(tape, g, params.dims, xv);
      int s = tape.sum_all(tape.cmul(emb, tgt));
      total = total < 0 ? s : tape.add(total, s);
    }
    tape.backward(tape.scale(total, inv_views));
    const Mat& grad = tape.grad(xin);
    if (!grad.allFinite())
      throw std::runtime_error("pgd: non-finite gradient (tau=" +
                               std::to_string(params.tau()) + ")");
    x -= budget.step_size * grad.array().sign().matrix();
    x = x.array()
            .max(images.array() - budget.epsilon)
            .min(images.array() + budget.epsilon)
            .max(0.0)
            .min(1.0)
            .matrix();
    Eigen::VectorXd cur = objective(x);
    for (int i = 0; i < n; ++i) {
      if (cur(i) < best_obj(i)) {
        best_obj(i) = cur(i);
        res.images.row(i) = x.row(i);
      }
    }
  }
  res.steps_taken = budget.steps;
  // Record a fresh evaluation of what is returned, not a cached value.
  Eigen::VectorXd fin = objective(res.images);
  res.final_objective.assign(fin.data(), fin.data() + n);
  return res;
}

}  // namespace

ImageAttackResult pgd_image_attack(const ModelParams& params, const Mat& images,
                                   const std::vector<TextSample>& targets,
                                   const PerturbationBudget& budget) {
  Mat target_emb;
  if (budget.image_objective == AttackObjective::kCrossModal) {
    if (static_cast<int>(targets.size()) != images.rows())
      throw std::invalid_argument("pgd: one target text per image required");
    target_emb = encode_text(params, targets);
  } else {
    // Unimodal: push the embedding away from the frozen clean reference;
    // on unit vectors maximizing distance is minimizing the dot product.
    target_emb = encode_image(params, images);
  }
  return run_pgd(params, images, target_emb, {1.0}, budget);
}

ImageAttackResult pgd_image_attack_set(const ModelParams& params,
                                       const Mat& images,
                                       const Mat& target_embeddings,
                                       const std::vector<double>& image_scales,
                                       const PerturbationBudget& budget) {
  // Mean similarity over a target set is the similarity with the mean
  // target embedding.
  Mat mean_t = target_embeddings.colwise().mean();
  Mat targets(images.rows(), mean_t.cols());
  for (int i = 0; i < images.rows(); ++i) targets.row(i) = mean_t.row(0);
  return run_pgd(params, images, targets, image_scales, budget);
}

std::vector<int> embedding_neighbors(const ModelParams& params, int token,
                                     int k) {
  const Mat& e = params.tok_emb;
  std::vector<std::pair<double, int>> dist;
  dist.reserve(e.rows());
  for (int t = 0; t < e.rows(); ++t) {
    if (t == token) continue;
    dist.push_back({(e.row(t) - e.row(token)).squaredNorm(), t});
  }
  std::sort(dist.begin(), dist.end());
  std::vector<int> out;
  for (int i = 0; i < std::min<int>(k, static_cast<int>(dist.size())); ++i)
    out.push_back(dist[i].second);
  return out;
}

namespace {

int neutral_token(const ModelParams& params) {
  Eigen::RowVectorXd mean = params.tok_emb.colwise().mean();
  int best = 0;
  double best_d = (params.tok_emb.row(0) - mean).squaredNorm();
  for (int t = 1; t < params.tok_emb.rows(); ++t) {
    double d = (params.tok_emb.row(t) - mean).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = t;
    }
  }
  return best;
}

// d S / d pooled for a fixed image embedding, at the cached caption.
Eigen::VectorXd pooled_similarity_gradient(const ModelParams& params,
                                           const TextEncodeCache& cache,
                                           const Eigen::VectorXd& img_emb) {
  Eigen::VectorXd u = cache.embed();
  // v = W^T p + b, u = v/||v||; dS/dv = (g - (g.u)u)/||v||, g = img_emb.
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(params.dims.tok_dim);
  for (int id : cache.text()) pooled += params.tok_emb.row(id);
  pooled /= static_cast<double>(cache.text().size());
  Eigen::VectorXd v =
      params.wt.transpose() * pooled + params.bt.row(0).transpose();
  double vn = v.norm();
  Eigen::VectorXd dv = (img_emb - img_emb.dot(u) * u) / vn;
  return params.wt * dv;
}

}  // namespace

TextAttackResult text_attack_greedy(const ModelParams& params,
                                    const TextSample& text,
                                    const ImageSample& image_target,
                                    const PerturbationBudget& budget) {
  budget.validate(static_cast<int>(text.size()));
  TextAttackResult res;
  res.text = text;
  Mat img(1, image_target.size());
  img.row(0) = image_target;
  Eigen::VectorXd img_emb = encode_image(params, img).row(0);

  TextEncodeCache cache(params, text);
  double cur = img_emb.dot(cache.embed());
  res.initial_objective = cur;
  if (budget.max_edits == 0) {
    res.final_objective = cur;
    return res;
  }

  const int len = static_cast<int>(text.size());
  std::vector<int> order(len);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> importance(len);
  if (budget.gradient_saliency) {
    Eigen::VectorXd gp = pooled_similarity_gradient(params, cache, img_emb);
    for (int pos = 0; pos < len; ++pos)
      importance[pos] =
          std::abs(gp.dot(params.tok_emb.row(text[pos])) / len);
  } else {
    int neutral = neutral_token(params);
    for (int pos = 0; pos < len; ++pos)
      importance[pos] = cur - img_emb.dot(cache.embed_with(pos, neutral));
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return importance[a] > importance[b];
  });

  while (res.edits < budget.max_edits) {
    int best_pos = -1, best_tok = -1;
    double best_val = cur;
    for (int pos : order) {
      for (int cand : embedding_neighbors(params, text[pos], budget.candidates)) {
        double val = img_emb.dot(cache.embed_with(pos, cand));
        if (val < best_val) {
          best_val = val;
          best_pos = pos;
          best_tok = cand;
        }
      }
    }
    if (best_pos < 0) break;  // no strictly improving substitution left
    cache.commit(best_pos, best_tok);
    res.text[best_pos] = best_tok;
    cur = best_val;
    ++res.edits;
  }
  res.final_objective = img_emb.dot(cache.embed());
  return res;
}

TextSample eda_edit(const ModelParams& params, const TextSample& text,
                    double alpha, Rng& rng, int max_len, int* edits_out) {
  TextSample out = text;
  int edits = 0;
  for (size_t i = 0; i < out.size(); ++i) {
    if (rng.uniform() >= alpha) continue;
    int op = rng.uniform_int(4);
    ++edits;
    if (op == 0) {  // replace with an embedding neighbor
      auto nb = embedding_neighbors(params, out[i], 3);
      out[i] = nb[rng.uniform_int(static_cast<int>(nb.size()))];
    } else if (op == 1) {  // insert a neighbor after this token
      if (static_cast<int>(out.size()) < max_len) {
        auto nb = embedding_neighbors(params, out[i], 3);
        out.insert(out.begin() + static_cast<long>(i) + 1,
                   nb[rng.uniform_int(static_cast<int>(nb.size()))]);
        ++i;  // do not revisit the inserted token
      }
    } else if (op == 2) {  // swap with a random position
      size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(out.size())));
      std::swap(out[i], out[j]);
    } else {  // delete
      if (out.size() > 1) {
        out.erase(out.begin() + static_cast<long>(i));
        --i;
      }
    }
  }
  if (edits_out) *edits_out = edits;
  return out;
}

TextSample eda_edit(const ModelParams& params, const TextSample& text,
                    double alpha, Rng& rng, int max_len) {
  return eda_edit(params, text, alpha, rng, max_len, nullptr);
}

TextSample eda_perturb_attack(
    const ModelParams& params, const TextSample& text, double alpha,
    int n_samples, const std::function<double(const TextSample&)>& scorer,
    Rng& rng, int max_len) {
  if (n_samples < 1) throw std::invalid_argument("eda: n_samples < 1");
  TextSample best = text;
  bool have = false;
  double best_score = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    TextSample cand = eda_edit(params, text, alpha, rng, max_len);
    double sc = scorer(cand);
    if (!have || sc < best_score) {
      have = true;
      best_score = sc;
      best = std::move(cand);
    }
  }
  return best;
}

ComposeResult compose_multimodal(const ModelParams& params,
                                 const ImageSample& image,
                                 const TextSample& text,
                                 const PerturbationBudget& budget,
                                 AttackOrder order, TextAttackKind text_kind,
                                 double eda_alpha, int eda_samples, Rng* rng) {
  ComposeResult res;
  res.image = Mat(1, image.size());
  res.image.row(0) = image;
  res.text = text;
  res.initial_similarity = similarity(params, image, text);

  std::string stages;
  switch (order) {
    case AttackOrder::kTextThenImage: stages = "TI"; break;
    case AttackOrder::kImageThenText: stages = "IT"; break;
    case AttackOrder::kTextImageText: stages = "TIT"; break;
    case AttackOrder::kImageTextImage: stages = "ITI"; break;
  }
  Rng local_rng(derive_seed(0, "compose-eda"));
  Rng& r = rng ? *rng : local_rng;

  // Each stage restarts from the clean input of its own modality and aims
  // at the other modality's current adversarial state, so the perturbation
  // budget always holds against the originals no matter how many times a
  // modality is revisited.
  Mat clean_img(1, image.size());
  clean_img.row(0) = image;
  for (char stage : stages) {
    if (stage == 'T') {
      ImageSample cur_img = res.image.row(0);
      if (text_kind == TextAttackKind::kGreedy) {
        res.text = text_attack_greedy(params, text, cur_img, budget).text;
      } else if (budget.max_edits > 0) {
        auto scorer = [&](const TextSample& t) {
          return similarity(params, cur_img, t);
        };
        res.text = eda_perturb_attack(params, text, eda_alpha, eda_samples,
                                      scorer, r, params.dims.max_len);
      }
    } else {
      res.image =
          pgd_image_attack(params, clean_img, {res.text}, budget).images;
    }
  }
  res.final_similarity =
      similarity(params, ImageSample(res.image.row(0)), res.text);
  return res;
}

ComposeResult eval_attack_coattack(const ModelParams& params,
                                   const ImageSample& image,
                                   const TextSample& text,
                                   const PerturbationBudget& budget) {
  return compose_multimodal(params, image, text, budget,
                            AttackOrder::kImageThenText);
}

Mat resample_matrix(int dim, double scale) {
  if (scale <= 0) throw std::invalid_argument("resample: scale must be > 0");
  Mat r = Mat::Zero(dim, dim);
  for (int i = 0; i < dim; ++i) {
    double src = static_cast<double>(i) / scale;
    int lo = static_cast<int>(std::floor(src));
    double frac = src - lo;
    int j0 = std::min(lo, dim - 1);
    int j1 = std::min(lo + 1, dim - 1);
    r(i, j0) += 1.0 - frac;
    r(i, j1) += frac;
  }
  return r;
}

ComposeResult eval_attack_sga(const ModelParams& params,
                              const SampleGroup& group,
                              const PerturbationBudget& budget,
                              int n_text_views, std::vector<double> image_scales,
                              uint64_t seed) {
  if (group.captions.empty())
    throw std::invalid_argument("sga: group has no captions");
  std::vector<TextSample> targets;
  for (const TaggedText& t : group.captions) targets.push_back(t.text);
  Rng rng(derive_seed(seed, "sga-views"));
  for (int v = 0; v < n_text_views; ++v)
    targets.push_back(eda_edit(params, group.first_caption(), 0.3, rng,
                               params.dims.max_len));
  Mat target_emb = encode_text(params, targets);

  Mat img(1, group.first_image().size());
  img.row(0) = group.first_image();
  ComposeResult res;
  res.initial_similarity =
      similarity(params, group.first_image(), group.first_caption());

  // Candidate adversarial images: the set-level attack across the scaled
  // copies, the set-level attack at native scale, and the pair-focused
  // attack against the first caption alone (the Co-Attack image stage).
  // The text attack then targets each candidate, and the strongest
  // resulting pair wins, so the set-level search can only strengthen the
  // degenerate single-pair composition.
  std::vector<Mat> candidates;
  candidates.push_back(
      pgd_image_attack_set(params, img, target_emb, image_scales, budget)
          .images);
  candidates.push_back(
      pgd_image_attack_set(params, img, target_emb, {1.0}, budget).images);
  for (const TaggedText& t : group.captions)
    candidates.push_back(pgd_image_attack(params, img, {t.text}, budget).images);

  // Cascade candidates: attack the caption set first, then aim the image
  // attack at the adversarial captions (the set-level interaction going
  // the other way around the loop).
  std::vector<TextSample> adv_caps;
  for (const TaggedText& t : group.captions)
    adv_caps.push_back(
        text_attack_greedy(params, t.text, ImageSample(img.row(0)), budget)
            .text);
  Mat adv_emb = encode_text(params, adv_caps);
  candidates.push_back(
      pgd_image_attack_set(params, img, adv_emb, image_scales, budget).images);
  for (const TextSample& t : adv_caps)
    candidates.push_back(pgd_image_attack(params, img, {t}, budget).images);

  bool first = true;
  for (const Mat& cand : candidates) {
    TextSample txt = text_attack_greedy(params, group.first_caption(),
                                        ImageSample(cand.row(0)), budget)
                         .text;
    double sim = similarity(params, ImageSample(cand.row(0)), txt);
    if (first || sim < res.final_similarity) {
      res.image = cand;
      res.text = txt;
      res.final_similarity = sim;
      first = false;
    }
  }
  return res;
}

}  // namespace mmadv
