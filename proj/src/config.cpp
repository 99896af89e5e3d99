#include "mmadv/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mmadv {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void unknown_key(const std::string& path, const std::string& key) {
  throw std::invalid_argument("config: unknown key '" +
                              (path.empty() ? key : path + "." + key) + "'");
}

// Every section lists its legal keys; anything else is a config error
// naming the full field path.
void check_keys(const json& j, const std::string& path,
                const std::vector<std::string>& allowed) {
  if (!j.is_object())
    throw std::invalid_argument("config: '" + path + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const std::string& a : allowed) ok = ok || a == k;
    if (!ok) unknown_key(path, k);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

WorldConfig parse_world(const json& j) {
  check_keys(j, "world",
             {"attributes", "values", "image_dim", "noise_sigma", "amp_lo",
              "amp_hi", "filler_tokens", "max_len"});
  WorldConfig w;
  get_if(j, "attributes", w.attributes);
  get_if(j, "values", w.values);
  get_if(j, "image_dim", w.image_dim);
  get_if(j, "noise_sigma", w.noise_sigma);
  get_if(j, "amp_lo", w.amp_lo);
  get_if(j, "amp_hi", w.amp_hi);
  get_if(j, "filler_tokens", w.filler_tokens);
  get_if(j, "max_len", w.max_len);
  if (w.image_dim < w.attributes * w.values)
    throw std::invalid_argument(
        "config: world.image_dim smaller than the attribute blocks");
  return w;
}

json world_json(const WorldConfig& w) {
  return json{{"attributes", w.attributes}, {"values", w.values},
              {"image_dim", w.image_dim},   {"noise_sigma", w.noise_sigma},
              {"amp_lo", w.amp_lo},         {"amp_hi", w.amp_hi},
              {"filler_tokens", w.filler_tokens}, {"max_len", w.max_len}};
}

AugmenterSpec parse_spec(const json& j, const std::string& path) {
  check_keys(j, path,
             {"technique", "count", "alpha", "magnitude", "strength", "shift",
              "seed"});
  AugmenterSpec s;
  if (!j.contains("technique"))
    throw std::invalid_argument("config: " + path + ".technique is required");
  s = AugmenterSpec::with(aug_technique_from_string(j.at("technique")));
  get_if(j, "count", s.count);
  get_if(j, "alpha", s.alpha);
  get_if(j, "magnitude", s.magnitude);
  get_if(j, "strength", s.strength);
  get_if(j, "shift", s.shift);
  get_if(j, "seed", s.seed);
  s.validate();
  return s;
}

json spec_json(const AugmenterSpec& s) {
  return json{{"technique", to_string(s.technique)},
              {"count", s.count},
              {"alpha", s.alpha},
              {"magnitude", s.magnitude},
              {"strength", s.strength},
              {"shift", s.shift},
              {"seed", s.seed}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") +
                                e.what());
  }
  check_keys(j, "", {"seed", "out", "world", "data", "augment", "train",
                     "attack", "eval"});
  ExperimentConfig c;
  get_if(j, "seed", c.seed);
  get_if(j, "out", c.out);
  if (j.contains("world")) c.world = parse_world(j.at("world"));

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"train_groups", "test_groups", "images_per_group",
                           "captions_per_group"});
    get_if(d, "train_groups", c.data.train_groups);
    get_if(d, "test_groups", c.data.test_groups);
    get_if(d, "images_per_group", c.data.images_per_group);
    get_if(d, "captions_per_group", c.data.captions_per_group);
  }

  if (j.contains("augment")) {
    const json& a = j.at("augment");
    check_keys(a, "augment", {"specs", "assembly"});
    if (a.contains("specs")) {
      int i = 0;
      for (const json& s : a.at("specs"))
        c.augment.specs.push_back(
            parse_spec(s, "augment.specs." + std::to_string(i++)));
    }
    if (a.contains("assembly"))
      c.augment.assembly = assembly_from_string(a.at("assembly"));
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"regime", "steps", "batch_size", "optimizer", "lr",
                "weight_decay", "momentum", "order", "text_attack",
                "eda_alpha", "eda_samples", "pairing", "log_every"});
    if (t.contains("regime"))
      c.train.regime = regime_from_string(t.at("regime"));
    get_if(t, "steps", c.train.steps);
    get_if(t, "batch_size", c.train.batch_size);
    if (t.contains("optimizer"))
      c.train.optimizer = optimizer_from_string(t.at("optimizer"));
    get_if(t, "lr", c.train.lr);
    get_if(t, "weight_decay", c.train.weight_decay);
    get_if(t, "momentum", c.train.momentum);
    if (t.contains("order"))
      c.train.order = attack_order_from_string(t.at("order"));
    if (t.contains("text_attack")) {
      std::string k = t.at("text_attack");
      if (k == "greedy") c.train.text_attack = TextAttackKind::kGreedy;
      else if (k == "eda") c.train.text_attack = TextAttackKind::kEda;
      else throw std::invalid_argument("config: unknown text_attack: " + k);
    }
    get_if(t, "eda_alpha", c.train.eda_alpha);
    get_if(t, "eda_samples", c.train.eda_samples);
    if (t.contains("pairing"))
      c.train.pairing = pairing_policy_from_string(t.at("pairing"));
    get_if(t, "log_every", c.train.log_every);
  }

  if (j.contains("attack")) {
    const json& a = j.at("attack");
    check_keys(a, "attack",
               {"epsilon", "train_steps", "eval_steps", "step_size",
                "max_edits", "candidates", "image_objective",
                "text_objective"});
    auto objective = [](const std::string& s) {
      if (s == "cross-modal") return AttackObjective::kCrossModal;
      if (s == "unimodal") return AttackObjective::kUnimodal;
      throw std::invalid_argument("config: unknown attack objective: " + s);
    };
    for (PerturbationBudget* b : {&c.attack_train, &c.attack_eval}) {
      get_if(a, "epsilon", b->epsilon);
      get_if(a, "step_size", b->step_size);
      get_if(a, "max_edits", b->max_edits);
      get_if(a, "candidates", b->candidates);
      if (a.contains("image_objective"))
        b->image_objective = objective(a.at("image_objective"));
      if (a.contains("text_objective"))
        b->text_objective = objective(a.at("text_objective"));
    }
    c.attack_train.steps = 2;
    c.attack_eval.steps = 10;
    get_if(a, "train_steps", c.attack_train.steps);
    get_if(a, "eval_steps", c.attack_eval.steps);
  } else {
    c.attack_train = PerturbationBudget::training_default();
    c.attack_eval = PerturbationBudget::evaluation_default();
  }
  c.train.budget = c.attack_train;

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval", {"attacks", "kl_estimator", "augmentation_metrics",
                           "reference_checkpoint"});
    if (e.contains("attacks")) {
      c.eval.attacks.clear();
      for (const json& s : e.at("attacks"))
        c.eval.attacks.push_back(eval_attack_from_string(s));
    }
    if (e.contains("kl_estimator")) {
      std::string k = e.at("kl_estimator");
      if (k == "per-pair-categorical")
        c.eval.kl_estimator = KlEstimator::kPerPairCategorical;
      else if (k == "gaussian-fit")
        c.eval.kl_estimator = KlEstimator::kGaussianFit;
      else throw std::invalid_argument("config: unknown kl_estimator: " + k);
    }
    get_if(e, "augmentation_metrics", c.eval.augmentation_metrics);
    get_if(e, "reference_checkpoint", c.eval.reference_checkpoint);
  }
  return c;
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["seed"] = seed;
  j["out"] = out;
  j["world"] = world_json(world);
  j["data"] = json{{"train_groups", data.train_groups},
                   {"test_groups", data.test_groups},
                   {"images_per_group", data.images_per_group},
                   {"captions_per_group", data.captions_per_group}};
  json specs = json::array();
  for (const AugmenterSpec& s : augment.specs) specs.push_back(spec_json(s));
  j["augment"] = json{{"specs", specs},
                      {"assembly", to_string(augment.assembly)}};
  j["train"] = json{
      {"regime", to_string(train.regime)},
      {"steps", train.steps},
      {"batch_size", train.batch_size},
      {"optimizer", to_string(train.optimizer)},
      {"lr", train.lr},
      {"weight_decay", train.weight_decay},
      {"momentum", train.momentum},
      {"order", to_string(train.order)},
      {"text_attack",
       train.text_attack == TextAttackKind::kGreedy ? "greedy" : "eda"},
      {"eda_alpha", train.eda_alpha},
      {"eda_samples", train.eda_samples},
      {"log_every", train.log_every}};
  if (train.pairing)
    j["train"]["pairing"] = to_string(*train.pairing);
  auto obj_name = [](AttackObjective o) {
    return o == AttackObjective::kCrossModal ? "cross-modal" : "unimodal";
  };
  j["attack"] = json{{"epsilon", attack_train.epsilon},
                     {"train_steps", attack_train.steps},
                     {"eval_steps", attack_eval.steps},
                     {"step_size", attack_train.step_size},
                     {"max_edits", attack_train.max_edits},
                     {"candidates", attack_train.candidates},
                     {"image_objective", obj_name(attack_train.image_objective)},
                     {"text_objective", obj_name(attack_train.text_objective)}};
  json attacks = json::array();
  for (EvalAttack a : eval.attacks) attacks.push_back(to_string(a));
  j["eval"] =
      json{{"attacks", attacks},
           {"kl_estimator", eval.kl_estimator == KlEstimator::kGaussianFit
                                ? "gaussian-fit"
                                : "per-pair-categorical"},
           {"augmentation_metrics", eval.augmentation_metrics},
           {"reference_checkpoint", eval.reference_checkpoint}};
  return j.dump(2);
}

uint64_t ExperimentConfig::hash() const {
  // The hash identifies the experiment, not its location: the same config
  // written to a different output directory is the same experiment.
  ExperimentConfig c = *this;
  c.out.clear();
  return fnv1a(c.canonical_json());
}

uint64_t ExperimentConfig::world_hash() const {
  return fnv1a(world_json(world).dump());
}

std::string patch_config_json(const std::string& config_text,
                              const std::string& axis,
                              const std::string& value) {
  json j = json::parse(config_text);
  json val;
  try {
    val = json::parse(value);
  } catch (const json::parse_error&) {
    val = value;  // bare word: treat as a string
  }
  json* cur = &j;
  std::stringstream ss(axis);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty())
    throw std::invalid_argument("sweep: empty axis");
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    const std::string& p = parts[i];
    if (cur->is_array()) {
      size_t idx = std::stoul(p);
      if (idx >= cur->size())
        throw std::invalid_argument("sweep: axis index out of range: " + axis);
      cur = &(*cur)[idx];
    } else if (cur->is_object()) {
      if (!cur->contains(p)) (*cur)[p] = json::object();
      cur = &(*cur)[p];
    } else {
      throw std::invalid_argument("sweep: axis does not name a config field: " +
                                  axis);
    }
  }
  const std::string& last = parts.back();
  if (cur->is_array()) {
    size_t idx = std::stoul(last);
    if (idx >= cur->size())
      throw std::invalid_argument("sweep: axis index out of range: " + axis);
    (*cur)[idx] = val;
  } else if (cur->is_object()) {
    (*cur)[last] = val;
  } else {
    throw std::invalid_argument("sweep: axis does not name a config field: " +
                                axis);
  }
  // Round-trip through the schema check so a bad axis is caught here.
  std::string out = j.dump(2);
  ExperimentConfig::from_json_text(out);
  return out;
}

}  // namespace mmadv
