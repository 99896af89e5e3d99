#include "mmadv/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <stdexcept>

namespace mmadv {

using json = nlohmann::ordered_json;

ModelDims WorldConfig::model_dims() const {
  ModelDims d;
  d.image_dim = image_dim;
  d.vocab = vocab();
  d.max_len = max_len;
  return d;
}

std::string to_string(PairingPolicy p) {
  switch (p) {
    case PairingPolicy::kFirstOnly11: return "first-only-1:1";
    case PairingPolicy::kOneToMany: return "one-to-many";
    case PairingPolicy::kManyToOne: return "many-to-one";
    case PairingPolicy::kManyToMany: return "many-to-many";
    case PairingPolicy::kNaiveFlat11: return "naive-flat-1:1";
  }
  throw std::logic_error("unknown pairing policy");
}

PairingPolicy pairing_policy_from_string(const std::string& s) {
  if (s == "first-only-1:1") return PairingPolicy::kFirstOnly11;
  if (s == "one-to-many") return PairingPolicy::kOneToMany;
  if (s == "many-to-one") return PairingPolicy::kManyToOne;
  if (s == "many-to-many") return PairingPolicy::kManyToMany;
  if (s == "naive-flat-1:1") return PairingPolicy::kNaiveFlat11;
  throw std::invalid_argument("unknown pairing policy: " + s);
}

ImageSample render_image(const WorldConfig& w, const Concept& c,
                         uint64_t noise_seed) {
  if (static_cast<int>(c.size()) != w.attributes)
    throw std::invalid_argument("concept has wrong slot count");
  Rng rng(derive_seed(noise_seed, "render-image"));
  ImageSample img(w.image_dim);
  for (int slot = 0; slot < w.attributes; ++slot) {
    if (c[slot] < 0 || c[slot] >= w.values)
      throw std::invalid_argument("concept slot out of range");
    for (int v = 0; v < w.values; ++v)
      img(slot * w.values + v) = (v == c[slot]) ? w.amp_hi : w.amp_lo;
  }
  for (int i = w.attr_tokens(); i < w.image_dim; ++i)
    img(i) = rng.uniform(w.amp_lo, w.amp_hi);
  for (int i = 0; i < w.image_dim; ++i) {
    img(i) += w.noise_sigma * rng.normal();
    img(i) = std::min(1.0, std::max(0.0, img(i)));
  }
  return img;
}

TextSample render_caption(const WorldConfig& w, const Concept& c,
                          const std::vector<bool>& aspect_mask,
                          uint64_t filler_seed) {
  if (static_cast<int>(aspect_mask.size()) != w.attributes)
    throw std::invalid_argument("aspect mask has wrong slot count");
  int selected = static_cast<int>(
      std::count(aspect_mask.begin(), aspect_mask.end(), true));
  if (selected == 0)
    throw std::invalid_argument("aspect mask selects no attribute slots");
  Rng rng(derive_seed(filler_seed, "render-caption"));
  TextSample t;
  int budget = w.max_len - selected;
  for (int slot = 0; slot < w.attributes; ++slot) {
    if (!aspect_mask[slot]) continue;
    // Interleave 0..2 fillers before each attribute token, budget allowing.
    int fill = rng.uniform_int(3);
    for (int f = 0; f < fill && budget > 0; ++f, --budget)
      t.push_back(w.attr_tokens() + rng.uniform_int(w.filler_tokens));
    t.push_back(w.attr_token(slot, c[slot]));
  }
  // Pad with trailing fillers to the full length: under mean pooling this
  // fixes the leverage of any single token at 1/max_len, so a one-token
  // substitution perturbs the caption instead of rewriting it.
  while (budget > 0) {
    t.push_back(w.attr_tokens() + rng.uniform_int(w.filler_tokens));
    --budget;
  }
  return t;
}

Concept decode_image_concept(const WorldConfig& w, const ImageSample& img) {
  Concept c(w.attributes);
  for (int slot = 0; slot < w.attributes; ++slot) {
    int best = 0;
    double best_v = img(slot * w.values);
    for (int v = 1; v < w.values; ++v) {
      double x = img(slot * w.values + v);
      if (x > best_v) {
        best_v = x;
        best = v;
      }
    }
    c[slot] = best;
  }
  return c;
}

bool caption_consistent(const WorldConfig& w, const Concept& c,
                        const TextSample& t) {
  for (int id : t) {
    if (id >= w.attr_tokens()) continue;
    int slot = id / w.values;
    if (id != w.attr_token(slot, c[slot])) return false;
  }
  return true;
}

Concept random_concept(const WorldConfig& w, Rng& rng) {
  Concept c(w.attributes);
  for (int& v : c) v = rng.uniform_int(w.values);
  return c;
}

std::vector<bool> random_mask(const WorldConfig& w, Rng& rng) {
  // Keep-probability 0.8: partial captions stay the norm, but most mention
  // 3 of 4 slots, so a caption rarely matches a second group in a
  // 128-element batch (heavier masking floods InfoNCE with false
  // negatives and stalls any one-to-many training run).
  std::vector<bool> m(w.attributes, false);
  int selected = 0;
  for (int i = 0; i < w.attributes; ++i) {
    if (rng.uniform() < 0.8) {
      m[i] = true;
      ++selected;
    }
  }
  if (selected == 0) m[rng.uniform_int(w.attributes)] = true;
  return m;
}

PairedDataset generate_dataset(const WorldConfig& w, int n_groups,
                               int images_per_group, int captions_per_group,
                               uint64_t seed, const std::string& split,
                               int id_offset) {
  if (n_groups < 1) throw std::invalid_argument("n_groups must be >= 1");
  if (images_per_group < 1 || captions_per_group < 1)
    throw std::invalid_argument("groups need >= 1 image and >= 1 caption");
  PairedDataset d;
  d.world = w;
  d.split = split;
  d.groups.reserve(n_groups);
  for (int gi = 0; gi < n_groups; ++gi) {
    uint64_t gseed = derive_seed(seed, split + "/group/" + std::to_string(gi));
    Rng rng(gseed);
    SampleGroup g;
    g.id = id_offset + gi;
    g.latent = random_concept(w, rng);
    for (int i = 0; i < images_per_group; ++i)
      g.images.push_back({{"original"}, render_image(w, g.latent, rng.next_u64())});
    for (int i = 0; i < captions_per_group; ++i) {
      // First caption mentions every slot so the annotated pair is fully
      // specified; the rest use random partial masks.
      std::vector<bool> mask = i == 0 ? std::vector<bool>(w.attributes, true)
                                      : random_mask(w, rng);
      g.captions.push_back(
          {{"original"}, render_caption(w, g.latent, mask, rng.next_u64())});
    }
    d.groups.push_back(std::move(g));
  }
  return d;
}

std::vector<std::array<int, 3>> enumerate_pairs(const PairedDataset& d) {
  std::vector<std::array<int, 3>> out;
  for (int gi = 0; gi < static_cast<int>(d.groups.size()); ++gi) {
    const SampleGroup& g = d.groups[gi];
    switch (d.policy) {
      case PairingPolicy::kFirstOnly11:
      case PairingPolicy::kNaiveFlat11:
        out.push_back({gi, 0, 0});
        break;
      case PairingPolicy::kOneToMany:
        for (int c = 0; c < static_cast<int>(g.captions.size()); ++c)
          out.push_back({gi, 0, c});
        break;
      case PairingPolicy::kManyToOne:
        for (int i = 0; i < static_cast<int>(g.images.size()); ++i)
          out.push_back({gi, i, 0});
        break;
      case PairingPolicy::kManyToMany:
        for (int i = 0; i < static_cast<int>(g.images.size()); ++i)
          for (int c = 0; c < static_cast<int>(g.captions.size()); ++c)
            out.push_back({gi, i, c});
        break;
    }
  }
  return out;
}

namespace {
json world_to_json(const WorldConfig& w) {
  return json{{"attributes", w.attributes}, {"values", w.values},
              {"image_dim", w.image_dim},   {"noise_sigma", w.noise_sigma},
              {"amp_lo", w.amp_lo},         {"amp_hi", w.amp_hi},
              {"filler_tokens", w.filler_tokens}, {"max_len", w.max_len}};
}

WorldConfig world_from_json(const json& j) {
  WorldConfig w;
  w.attributes = j.at("attributes");
  w.values = j.at("values");
  w.image_dim = j.at("image_dim");
  w.noise_sigma = j.at("noise_sigma");
  w.amp_lo = j.at("amp_lo");
  w.amp_hi = j.at("amp_hi");
  w.filler_tokens = j.at("filler_tokens");
  w.max_len = j.at("max_len");
  return w;
}
}  // namespace

void save_dataset(const PairedDataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("dataset: cannot open " + path);
  json header{{"format", "mmadv-dataset"},
              {"version", 1},
              {"policy", to_string(d.policy)},
              {"split", d.split},
              {"world", world_to_json(d.world)}};
  os << header.dump() << "\n";
  for (const SampleGroup& g : d.groups) {
    json line{{"id", g.id}, {"concept", g.latent}};
    json imgs = json::array();
    for (const TaggedImage& ti : g.images) {
      std::vector<double> v(ti.image.data(), ti.image.data() + ti.image.size());
      imgs.push_back(json{{"tag", ti.tag}, {"v", v}});
    }
    json caps = json::array();
    for (const TaggedText& tt : g.captions)
      caps.push_back(json{{"tag", tt.tag}, {"t", tt.text}});
    line["images"] = std::move(imgs);
    line["captions"] = std::move(caps);
    os << line.dump() << "\n";
  }
  if (!os) throw std::runtime_error("dataset: write failed for " + path);
}

PairedDataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("dataset: cannot open " + path);
  std::string line;
  int lineno = 0;
  PairedDataset d;
  try {
    if (!std::getline(is, line))
      throw std::runtime_error("empty file");
    ++lineno;
    json header = json::parse(line);
    if (header.at("format") != "mmadv-dataset" || header.at("version") != 1)
      throw std::runtime_error("unrecognized header");
    d.world = world_from_json(header.at("world"));
    d.policy = pairing_policy_from_string(header.at("policy"));
    d.split = header.at("split");
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j = json::parse(line);
      SampleGroup g;
      g.id = j.at("id");
      g.latent = j.at("concept").get<Concept>();
      for (const json& ji : j.at("images")) {
        std::vector<double> v = ji.at("v").get<std::vector<double>>();
        if (static_cast<int>(v.size()) != d.world.image_dim)
          throw std::runtime_error("image vector has wrong dimension");
        TaggedImage ti;
        ti.tag = ji.at("tag");
        ti.image = Eigen::Map<ImageSample>(v.data(), v.size());
        g.images.push_back(std::move(ti));
      }
      for (const json& jc : j.at("captions")) {
        TaggedText tt;
        tt.tag = jc.at("tag");
        tt.text = jc.at("t").get<TextSample>();
        g.captions.push_back(std::move(tt));
      }
      if (g.images.empty() || g.captions.empty())
        throw std::runtime_error("group without images or captions");
      d.groups.push_back(std::move(g));
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("dataset parse error at " + path + ":" +
                             std::to_string(lineno) + ": " + e.what());
  }
  if (d.groups.empty())
    throw std::runtime_error("dataset parse error at " + path +
                             ": no groups");
  return d;
}

std::string token_string(const WorldConfig& w, int id) {
  static const char* kSlotNames[] = {"color", "shape", "size", "background"};
  if (id < w.attr_tokens()) {
    int slot = id / w.values;
    std::string name = slot < 4 ? kSlotNames[slot]
                                : "attr" + std::to_string(slot);
    return name + "=" + std::to_string(id % w.values);
  }
  return "filler" + std::to_string(id - w.attr_tokens());
}

void save_vocab(const WorldConfig& w, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("vocab: cannot open " + path);
  for (int id = 0; id < w.vocab(); ++id)
    os << id << "\t" << token_string(w, id) << "\n";
}

}  // namespace mmadv
