#include "mmadv/runner.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace mmadv {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string resolve_outdir(const std::string& out) {
  fs::path p(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("MMADV_OUT_ROOT")) p = fs::path(root) / p;
  }
  return p.string();
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << text;
}

struct Pipeline {
  ExperimentConfig cfg;
  std::string outdir;
  uint64_t hash = 0;
  PairedDataset train_ds, test_ds;
  std::optional<ModelParams> reference;

  void stage_gen() {
    train_ds = generate_dataset(cfg.world, cfg.data.train_groups,
                                cfg.data.images_per_group,
                                cfg.data.captions_per_group,
                                derive_seed(cfg.seed, "gen-train"), "train", 0);
    test_ds = generate_dataset(cfg.world, cfg.data.test_groups,
                               cfg.data.images_per_group,
                               cfg.data.captions_per_group,
                               derive_seed(cfg.seed, "gen-test"), "test",
                               cfg.data.train_groups);
    save_dataset(train_ds, outdir + "/train.jsonl");
    save_dataset(test_ds, outdir + "/test.jsonl");
    save_vocab(cfg.world, outdir + "/vocab.tsv");
  }

  void load_reference() {
    if (!cfg.eval.reference_checkpoint.empty())
      reference = load_checkpoint(cfg.eval.reference_checkpoint);
  }

  void stage_augment() {
    if (cfg.augment.specs.empty()) return;
    // EDA and neighbor lookups need token embeddings; the frozen
    // reference when available, otherwise a seeded random table.
    ModelParams aug_params =
        reference ? *reference
                  : ModelParams::init(cfg.world.model_dims(),
                                      derive_seed(cfg.seed, "aug-ref"));
    std::vector<AugmenterSpec> specs = cfg.augment.specs;
    for (AugmenterSpec& s : specs)
      if (s.seed == 0) s.seed = derive_seed(cfg.seed, "augment");
    train_ds = build_augmented_dataset(train_ds, specs, cfg.augment.assembly,
                                       aug_params);
    save_dataset(train_ds, outdir + "/train_aug.jsonl");
  }

  TrainResult stage_train() {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train");
    tc.budget = cfg.attack_train;
    const ModelParams* ref =
        reference && cfg.train.regime == Regime::kFare ? &*reference : nullptr;
    TrainResult r = train(tc, train_ds, ref);
    r.log.config_hash = hash;
    save_checkpoint(r.params, outdir + "/checkpoint.bin", hash);
    r.log.save(outdir + "/runlog.csv");
    return r;
  }

  MetricsReport stage_eval(const TrainResult& tr) {
    MetricsReport rep;
    rep.config_hash = hash;
    rep.seed = cfg.seed;
    rep.model_tag = to_string(cfg.train.regime);
    if (!cfg.augment.specs.empty())
      rep.model_tag += "+" + to_string(cfg.augment.specs.front().technique);

    for (int k : {1, 5, 10}) {
      rep.values["clean_tr" + std::to_string(k)] =
          recall_at_k(tr.params, test_ds, k, Direction::kImageToText);
      rep.values["clean_ir" + std::to_string(k)] =
          recall_at_k(tr.params, test_ds, k, Direction::kTextToImage);
    }
    for (EvalAttack a : cfg.eval.attacks) {
      auto vals = robust_eval(tr.params, test_ds, a, cfg.attack_eval,
                              derive_seed(cfg.seed, "eval"));
      for (const auto& [k, v] : vals)
        rep.values["robust_" + to_string(a) + "_" + k] = v;
    }
    // Timing deliberately stays out of the metrics artifacts so re-runs
    // are byte-identical; cmd_report derives it from runlog.csv.
    rep.values["loss_final"] =
        tr.log.entries.empty() ? 0.0 : tr.log.entries.back().loss;

    if (cfg.eval.augmentation_metrics && !cfg.augment.specs.empty()) {
      const ModelParams& ref = reference ? *reference : tr.params;
      auto orig = original_pairs(train_ds);
      auto aug = augmented_pairs(train_ds);
      if (!aug.empty()) {
        rep.values["alignment_orig"] = alignment_score(ref, orig);
        rep.values["alignment_aug"] = alignment_score(ref, aug);
        // Diversity compares each augmented element against its group's
        // original counterpart in the same modality.
        std::vector<std::pair<ImageSample, TextSample>> matched;
        for (const auto& g : train_ds.groups) {
          for (const auto& tt : g.captions)
            if (!tt.is_original())
              matched.push_back({g.first_image(), g.first_caption()});
          for (const auto& ti : g.images)
            if (!ti.is_original())
              matched.push_back({g.first_image(), g.first_caption()});
        }
        Mat fo = embed_pairs(ref, matched);
        Mat fa = embed_pairs(ref, aug);
        rep.values["diversity_kl"] =
            diversity_kl(fo, fa, cfg.eval.kl_estimator);
        if (static_cast<int>(orig.size()) > fo.cols() &&
            static_cast<int>(aug.size()) > fa.cols())
          rep.values["frechet_gap"] = frechet_gap(ref, orig, aug);
      }
    }
    return rep;
  }
};

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config) {
  Pipeline p;
  p.cfg = config;
  p.outdir = resolve_outdir(config.out);
  p.hash = config.hash();
  fs::create_directories(p.outdir);
  write_text(p.outdir + "/config.json", config.canonical_json() + "\n");

  p.stage_gen();
  p.load_reference();
  p.stage_augment();
  TrainResult tr = p.stage_train();
  MetricsReport rep = p.stage_eval(tr);
  save_reports_jsonl({rep}, p.outdir + "/metrics.jsonl");
  save_reports_csv({rep}, p.outdir + "/metrics.csv");
  return {rep, p.outdir, tr.params};
}

namespace {
ExperimentConfig load_config(const std::string& path,
                             const std::optional<std::string>& out_override,
                             const std::optional<uint64_t>& seed_override) {
  ExperimentConfig cfg = ExperimentConfig::from_file(path);
  if (out_override) cfg.out = *out_override;
  if (seed_override) cfg.seed = *seed_override;
  return cfg;
}
}  // namespace

int cmd_run(const std::string& config_path,
            const std::optional<std::string>& out_override,
            const std::optional<uint64_t>& seed_override) {
  try {
    ExperimentConfig cfg = load_config(config_path, out_override, seed_override);
    RunOutcome o = run_experiment(cfg);
    std::cout << "run complete: " << o.outdir << "\n";
    for (const auto& [k, v] : o.report.values)
      std::cout << "  " << k << " = " << v << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_gen_data(const std::string& config_path,
                 const std::optional<std::string>& out_override,
                 const std::optional<uint64_t>& seed_override) {
  try {
    Pipeline p;
    p.cfg = load_config(config_path, out_override, seed_override);
    p.outdir = resolve_outdir(p.cfg.out);
    p.hash = p.cfg.hash();
    fs::create_directories(p.outdir);
    write_text(p.outdir + "/config.json", p.cfg.canonical_json() + "\n");
    p.stage_gen();
    p.load_reference();
    p.stage_augment();
    std::cout << "datasets written to " << p.outdir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_attack_eval(const std::string& config_path,
                    const std::string& checkpoint,
                    const std::optional<std::string>& out_override) {
  try {
    ExperimentConfig cfg = load_config(config_path, out_override, std::nullopt);
    std::string outdir = resolve_outdir(cfg.out);
    fs::create_directories(outdir);
    ModelParams params = load_checkpoint(checkpoint);
    PairedDataset test = generate_dataset(
        cfg.world, cfg.data.test_groups, cfg.data.images_per_group,
        cfg.data.captions_per_group, derive_seed(cfg.seed, "gen-test"), "test",
        cfg.data.train_groups);
    MetricsReport rep;
    rep.config_hash = cfg.hash();
    rep.seed = cfg.seed;
    rep.model_tag = "checkpoint:" + checkpoint;
    for (int k : {1, 5, 10}) {
      rep.values["clean_tr" + std::to_string(k)] =
          recall_at_k(params, test, k, Direction::kImageToText);
      rep.values["clean_ir" + std::to_string(k)] =
          recall_at_k(params, test, k, Direction::kTextToImage);
    }
    for (EvalAttack a : cfg.eval.attacks) {
      auto vals = robust_eval(params, test, a, cfg.attack_eval,
                              derive_seed(cfg.seed, "eval"));
      for (const auto& [k, v] : vals)
        rep.values["robust_" + to_string(a) + "_" + k] = v;
    }
    save_reports_jsonl({rep}, outdir + "/metrics.jsonl");
    save_reports_csv({rep}, outdir + "/metrics.csv");
    for (const auto& [k, v] : rep.values)
      std::cout << "  " << k << " = " << v << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::vector<std::string>& values,
              const std::optional<std::string>& out_override) {
  try {
    if (values.empty()) {
      std::cerr << "error: sweep needs at least one value\n";
      return 1;
    }
    std::ifstream is(config_path);
    if (!is) throw std::runtime_error("config: cannot open " + config_path);
    std::stringstream ss;
    ss << is.rdbuf();
    std::string base_text = ss.str();
    ExperimentConfig base = ExperimentConfig::from_json_text(base_text);
    std::string base_out = out_override.value_or(base.out);

    std::vector<MetricsReport> reports;
    for (const std::string& v : values) {
      std::string patched = patch_config_json(base_text, axis, v);
      ExperimentConfig cfg = ExperimentConfig::from_json_text(patched);
      std::string safe = v;
      for (char& c : safe)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
      cfg.out = base_out + "/sweep_" + safe;
      cfg.seed = derive_seed(base.seed, "sweep/" + axis + "=" + v);
      RunOutcome o = run_experiment(cfg);
      o.report.model_tag += " " + axis + "=" + v;
      reports.push_back(o.report);
    }
    std::string csv = resolve_outdir(base_out) + "/sweep.csv";
    fs::create_directories(resolve_outdir(base_out));
    save_reports_csv(reports, csv);
    std::cout << "sweep table: " << csv << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out_prefix, bool force) {
  int missing = 0;
  std::vector<MetricsReport> reports;
  std::vector<double> timing;
  std::optional<uint64_t> world_hash;
  for (const std::string& dir : run_dirs) {
    std::string mpath = dir + "/metrics.jsonl";
    if (!fs::exists(mpath)) {
      std::cerr << "warning: skipping " << dir << " (no metrics.jsonl)\n";
      ++missing;
      continue;
    }
    try {
      ExperimentConfig cfg = ExperimentConfig::from_file(dir + "/config.json");
      uint64_t wh = cfg.world_hash();
      if (world_hash && *world_hash != wh && !force) {
        std::cerr << "error: " << dir
                  << " has a different world config; use --force to merge\n";
        return 1;
      }
      if (!world_hash) world_hash = wh;
    } catch (const std::exception& e) {
      if (!force) {
        std::cerr << "error: cannot read config in " << dir << ": " << e.what()
                  << "\n";
        return 1;
      }
    }
    // Wall-clock per step comes from the runlog, not the metrics file.
    std::optional<double> sec_per_iter;
    std::string rpath = dir + "/runlog.csv";
    if (fs::exists(rpath)) {
      std::ifstream rl(rpath);
      std::string line;
      std::getline(rl, line);  // hash header
      std::getline(rl, line);  // column names
      double sum = 0.0;
      int rows = 0;
      while (std::getline(rl, line)) {
        size_t pos = line.rfind(',');
        if (pos == std::string::npos) continue;
        sum += std::stod(line.substr(pos + 1));
        ++rows;
      }
      if (rows > 0) sec_per_iter = sum / rows / 1000.0;
    }
    for (MetricsReport& r : load_reports_jsonl(mpath)) {
      if (sec_per_iter) r.values["sec_per_iter"] = *sec_per_iter;
      reports.push_back(std::move(r));
    }
  }
  if (reports.empty()) {
    std::cerr << "error: no reports found\n";
    return 1;
  }
  save_reports_csv(reports, out_prefix + "_main.csv");
  // Augmenter-quality table: only rows that carry the three measures.
  std::vector<MetricsReport> fig;
  for (const MetricsReport& r : reports) {
    if (r.values.count("alignment_aug") && r.values.count("diversity_kl")) {
      MetricsReport f;
      f.model_tag = r.model_tag;
      f.seed = r.seed;
      f.config_hash = r.config_hash;
      f.values["alignment"] = r.at("alignment_aug");
      f.values["diversity"] = r.at("diversity_kl");
      if (r.values.count("frechet_gap"))
        f.values["gap"] = r.at("frechet_gap");
      if (r.values.count("robust_sga-analog_tr1"))
        f.values["robust_tr1"] = r.at("robust_sga-analog_tr1");
      fig.push_back(std::move(f));
    }
  }
  if (!fig.empty()) save_reports_csv(fig, out_prefix + "_augmenters.csv");
  std::cout << "wrote " << out_prefix << "_main.csv (" << reports.size()
            << " rows)\n";
  return missing;
}

}  // namespace mmadv
