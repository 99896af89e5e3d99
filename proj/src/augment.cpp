#include "mmadv/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmadv {

std::string to_string(AugTechnique t) {
  switch (t) {
    case AugTechnique::kRandaugAnalog: return "randaug-analog";
    case AugTechnique::kEda: return "eda";
    case AugTechnique::kI2tOracle: return "i2t-oracle";
    case AugTechnique::kI2tDivcapsOracle: return "i2t-divcaps-oracle";
    case AugTechnique::kT2iOracle: return "t2i-oracle";
    case AugTechnique::kTi2iOracle: return "ti2i-oracle";
    case AugTechnique::kMisalignedControl: return "misaligned-control";
  }
  throw std::logic_error("unknown augment technique");
}

AugTechnique aug_technique_from_string(const std::string& s) {
  if (s == "randaug-analog") return AugTechnique::kRandaugAnalog;
  if (s == "eda") return AugTechnique::kEda;
  if (s == "i2t-oracle") return AugTechnique::kI2tOracle;
  if (s == "i2t-divcaps-oracle") return AugTechnique::kI2tDivcapsOracle;
  if (s == "t2i-oracle") return AugTechnique::kT2iOracle;
  if (s == "ti2i-oracle") return AugTechnique::kTi2iOracle;
  if (s == "misaligned-control") return AugTechnique::kMisalignedControl;
  throw std::invalid_argument("unknown augment technique: " + s);
}

bool technique_augments_text(AugTechnique t) {
  return t == AugTechnique::kEda || t == AugTechnique::kI2tOracle ||
         t == AugTechnique::kI2tDivcapsOracle ||
         t == AugTechnique::kMisalignedControl;
}

void AugmenterSpec::validate() const {
  if (count < 0) throw std::invalid_argument("augment: count < 0");
  if (alpha < 0 || alpha > 1)
    throw std::invalid_argument("augment: alpha outside [0,1]");
  if (strength < 0 || strength > 1)
    throw std::invalid_argument("augment: strength outside [0,1]");
  if (magnitude < 0) throw std::invalid_argument("augment: magnitude < 0");
}

AugmenterSpec AugmenterSpec::with(AugTechnique t) {
  AugmenterSpec s;
  s.technique = t;
  if (t == AugTechnique::kTi2iOracle) s.count = 2;
  return s;
}

std::string to_string(Assembly a) {
  switch (a) {
    case Assembly::kOneToMany: return "one-to-many";
    case Assembly::kManyToOne: return "many-to-one";
    case Assembly::kManyToMany: return "many-to-many";
    case Assembly::kNaiveFlat11: return "naive-flat-1:1";
    case Assembly::kOracleExtraOriginals: return "oracle-extra-originals";
  }
  throw std::logic_error("unknown assembly");
}

Assembly assembly_from_string(const std::string& s) {
  if (s == "one-to-many") return Assembly::kOneToMany;
  if (s == "many-to-one") return Assembly::kManyToOne;
  if (s == "many-to-many") return Assembly::kManyToMany;
  if (s == "naive-flat-1:1") return Assembly::kNaiveFlat11;
  if (s == "oracle-extra-originals") return Assembly::kOracleExtraOriginals;
  throw std::invalid_argument("unknown assembly: " + s);
}

std::vector<TaggedText> augment_text_intra(const ModelParams& params,
                                           const TextSample& text,
                                           const AugmenterSpec& spec,
                                           uint64_t salt) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "aug-eda/" + std::to_string(salt)));
  std::vector<TaggedText> out;
  for (int i = 0; i < spec.count; ++i)
    out.push_back({{"augmented:eda"},
                   eda_edit(params, text, spec.alpha, rng, params.dims.max_len)});
  return out;
}

std::vector<TaggedText> augment_text_i2t_oracle(const WorldConfig& w,
                                                const SampleGroup& group,
                                                const AugmenterSpec& spec,
                                                uint64_t salt) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "aug-i2t/" + std::to_string(salt)));
  std::vector<TaggedText> out;
  std::string tag = "augmented:" + to_string(spec.technique);
  for (int i = 0; i < spec.count; ++i) {
    std::vector<bool> mask;
    if (spec.technique == AugTechnique::kI2tDivcapsOracle) {
      // Fixed archetypes: full, main-attribute-only, background-slots-only,
      // style (a single random slot amid fillers).
      switch (i % 4) {
        case 0: mask.assign(w.attributes, true); break;
        case 1:
          mask.assign(w.attributes, false);
          mask[0] = true;
          break;
        case 2:
          mask.assign(w.attributes, false);
          for (int s = w.attributes / 2; s < w.attributes; ++s) mask[s] = true;
          break;
        default:
          mask.assign(w.attributes, false);
          mask[rng.uniform_int(w.attributes)] = true;
          break;
      }
    } else {
      mask = random_mask(w, rng);
    }
    out.push_back({{tag}, render_caption(w, group.latent, mask, rng.next_u64())});
  }
  return out;
}

std::vector<TaggedImage> augment_image_intra(const WorldConfig& w,
                                             const ImageSample& image,
                                             const AugmenterSpec& spec,
                                             uint64_t salt) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "aug-randaug/" + std::to_string(salt)));
  std::vector<TaggedImage> out;
  for (int i = 0; i < spec.count; ++i) {
    ImageSample img = image;
    // Jitter of the nuisance block (the spatial-transform analog); the
    // attribute blocks stay put so the depicted concept survives.
    int n_swaps = static_cast<int>(std::round(spec.magnitude * 10.0));
    for (int s = 0; s < n_swaps && w.nuisance_dims() >= 2; ++s) {
      int a = w.attr_tokens() + rng.uniform_int(w.nuisance_dims());
      int b = w.attr_tokens() + rng.uniform_int(w.nuisance_dims());
      std::swap(img(a), img(b));
    }
    // Gain/bias as the color-distortion analog, plus extra noise.
    double gain = 1.0 + spec.magnitude * (rng.uniform() - 0.5);
    double bias = spec.magnitude * 0.2 * (rng.uniform() - 0.5);
    for (int d = 0; d < w.image_dim; ++d) {
      img(d) = gain * img(d) + bias + spec.magnitude * 0.5 * w.noise_sigma *
                                          rng.normal();
      img(d) = std::min(1.0, std::max(0.0, img(d)));
    }
    out.push_back({{"augmented:randaug-analog"}, std::move(img)});
  }
  return out;
}

Concept caption_concept(const WorldConfig& w, const TextSample& t,
                        const Concept& fallback) {
  Concept c = fallback;
  for (int id : t) {
    if (id >= w.attr_tokens()) continue;
    c[id / w.values] = id % w.values;
  }
  return c;
}

std::vector<TaggedImage> augment_image_t2i_oracle(const WorldConfig& w,
                                                  const SampleGroup& group,
                                                  const AugmenterSpec& spec,
                                                  uint64_t salt) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "aug-t2i/" + std::to_string(salt)));
  std::vector<TaggedImage> out;
  std::string tag = "augmented:" + to_string(spec.technique);
  for (int i = 0; i < spec.count; ++i) {
    if (spec.technique == AugTechnique::kTi2iOracle) {
      ImageSample fresh = render_image(w, group.latent, rng.next_u64());
      ImageSample img = (1.0 - spec.strength) * group.first_image() +
                        spec.strength * fresh;
      for (int d = 0; d < w.image_dim; ++d)
        img(d) = std::min(1.0, std::max(0.0, img(d)));
      out.push_back({{tag}, std::move(img)});
    } else {
      // Slots the caption mentions stay pinned; unmentioned slots are
      // redrawn uniformly, so the image is valid for the caption but
      // diverse beyond it.
      const TextSample& cap = group.first_caption();
      Concept c(w.attributes);
      std::vector<bool> mentioned(w.attributes, false);
      for (int id : cap) {
        if (id >= w.attr_tokens()) continue;
        mentioned[id / w.values] = true;
      }
      for (int s = 0; s < w.attributes; ++s)
        c[s] = mentioned[s] ? group.latent[s] : rng.uniform_int(w.values);
      ImageSample img = render_image(w, c, rng.next_u64());
      for (int d = w.attr_tokens(); d < w.image_dim; ++d)
        img(d) = std::min(1.0, std::max(0.0, img(d) + spec.shift));
      out.push_back({{tag}, std::move(img)});
    }
  }
  return out;
}

PairedDataset build_augmented_dataset(const PairedDataset& base,
                                      const std::vector<AugmenterSpec>& specs,
                                      Assembly assembly,
                                      const ModelParams& params) {
  const WorldConfig& w = base.world;
  PairedDataset out = base;
  int n = static_cast<int>(base.groups.size());

  for (const AugmenterSpec& spec : specs) {
    spec.validate();
    if (spec.technique == AugTechnique::kMisalignedControl && n < 2)
      throw std::invalid_argument(
          "misaligned-control needs at least two groups");
    for (int gi = 0; gi < n; ++gi) {
      SampleGroup& g = out.groups[gi];
      uint64_t salt = static_cast<uint64_t>(g.id);
      switch (spec.technique) {
        case AugTechnique::kEda: {
          auto t = augment_text_intra(params, g.first_caption(), spec, salt);
          g.captions.insert(g.captions.end(), t.begin(), t.end());
          break;
        }
        case AugTechnique::kI2tOracle:
        case AugTechnique::kI2tDivcapsOracle: {
          auto t = augment_text_i2t_oracle(w, base.groups[gi], spec, salt);
          g.captions.insert(g.captions.end(), t.begin(), t.end());
          break;
        }
        case AugTechnique::kRandaugAnalog: {
          auto t = augment_image_intra(w, g.first_image(), spec, salt);
          g.images.insert(g.images.end(), t.begin(), t.end());
          break;
        }
        case AugTechnique::kT2iOracle:
        case AugTechnique::kTi2iOracle: {
          auto t = augment_image_t2i_oracle(w, base.groups[gi], spec, salt);
          g.images.insert(g.images.end(), t.begin(), t.end());
          break;
        }
        case AugTechnique::kMisalignedControl: {
          // Captions borrowed from other groups; wrong on purpose.
          Rng rng(derive_seed(spec.seed, "aug-misalign/" + std::to_string(salt)));
          for (int i = 0; i < spec.count; ++i) {
            int other = (gi + 1 + rng.uniform_int(n - 1)) % n;
            const auto& caps = base.groups[other].captions;
            g.captions.push_back(
                {{"augmented:misaligned-control"},
                 caps[rng.uniform_int(static_cast<int>(caps.size()))].text});
          }
          break;
        }
      }
    }
  }

  switch (assembly) {
    case Assembly::kOneToMany:
      out.policy = PairingPolicy::kOneToMany;
      break;
    case Assembly::kManyToOne:
      out.policy = PairingPolicy::kManyToOne;
      break;
    case Assembly::kManyToMany:
      out.policy = PairingPolicy::kManyToMany;
      break;
    case Assembly::kNaiveFlat11: {
      // Every augmented element becomes its own 1:1 group, paired with the
      // source group's first original counterpart.
      PairedDataset flat;
      flat.world = w;
      flat.split = base.split;
      flat.policy = PairingPolicy::kNaiveFlat11;
      int next_id = 0;
      for (int gi = 0; gi < n; ++gi) {
        const SampleGroup& g = out.groups[gi];
        SampleGroup orig;
        orig.id = next_id++;
        orig.latent = g.latent;
        orig.images.push_back(g.images.front());
        orig.captions.push_back(g.captions.front());
        flat.groups.push_back(std::move(orig));
        for (size_t ci = 0; ci < g.captions.size(); ++ci) {
          if (g.captions[ci].is_original()) continue;
          SampleGroup ng;
          ng.id = next_id++;
          ng.latent = g.latent;
          ng.images.push_back(g.images.front());
          ng.captions.push_back(g.captions[ci]);
          flat.groups.push_back(std::move(ng));
        }
        for (size_t ii = 1; ii < g.images.size(); ++ii) {
          if (g.images[ii].is_original()) continue;
          SampleGroup ng;
          ng.id = next_id++;
          ng.latent = g.latent;
          ng.images.push_back(g.images[ii]);
          ng.captions.push_back(g.captions.front());
          flat.groups.push_back(std::move(ng));
        }
      }
      return flat;
    }
    case Assembly::kOracleExtraOriginals: {
      // Same element budget, but spent on genuinely new ground-truth
      // groups instead of augments of existing ones.
      int extra = 0;
      for (const AugmenterSpec& s : specs) extra += s.count;
      PairedDataset fresh = base;
      fresh.policy = PairingPolicy::kFirstOnly11;
      uint64_t seed = specs.empty() ? 0 : specs.front().seed;
      int max_id = 0;
      for (const SampleGroup& g : base.groups) max_id = std::max(max_id, g.id);
      PairedDataset drawn =
          generate_dataset(w, std::max(1, extra * n), 1, 1,
                           derive_seed(seed, "oracle-extra"), base.split,
                           max_id + 1);
      fresh.groups.insert(fresh.groups.end(), drawn.groups.begin(),
                          drawn.groups.end());
      return fresh;
    }
  }
  return out;
}

}  // namespace mmadv
