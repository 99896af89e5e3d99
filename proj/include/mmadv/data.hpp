#pragma once

#include "mmadv/model.hpp"

#include <array>
#include <string>
#include <vector>

namespace mmadv {

// Generative latent behind the synthetic world: a handful of attribute
// slots (color, shape, size, background by default), each taking one of
// `values` discrete settings.
struct WorldConfig {
  int attributes = 4;
  int values = 6;
  int image_dim = 32;       // attributes*values one-hot coords + nuisance
  double noise_sigma = 0.0125;
  double amp_lo = 0.05;     // one-hot amplitude band
  double amp_hi = 0.2;
  int filler_tokens = 40;
  int max_len = 12;

  int attr_tokens() const { return attributes * values; }
  int vocab() const { return attr_tokens() + filler_tokens; }
  int nuisance_dims() const { return image_dim - attr_tokens(); }
  int attr_token(int slot, int value) const { return slot * values + value; }

  ModelDims model_dims() const;
  bool operator==(const WorldConfig&) const = default;
};

using Concept = std::vector<int>;  // one value per attribute slot

enum class Provenance { kOriginal, kAugmented, kAdversarial };

struct Tagged {
  std::string tag;  // "original" | "augmented:<technique>" | "adversarial:<attack>"
  bool is_original() const { return tag == "original"; }
};

struct TaggedImage : Tagged {
  ImageSample image;
};

struct TaggedText : Tagged {
  TextSample text;
};

// One latent concept with all images and captions that depict it. The
// first original image/caption play the role of the annotated 1:1 pair.
struct SampleGroup {
  int id = 0;
  Concept latent;
  std::vector<TaggedImage> images;
  std::vector<TaggedText> captions;

  const ImageSample& first_image() const { return images.front().image; }
  const TextSample& first_caption() const { return captions.front().text; }
};

enum class PairingPolicy {
  kFirstOnly11,
  kOneToMany,
  kManyToOne,
  kManyToMany,
  kNaiveFlat11,
};

std::string to_string(PairingPolicy p);
PairingPolicy pairing_policy_from_string(const std::string& s);

struct PairedDataset {
  WorldConfig world;
  std::vector<SampleGroup> groups;
  PairingPolicy policy = PairingPolicy::kFirstOnly11;
  std::string split = "train";
};

// Deterministic renderers. Distinct seeds give distinct nuisance draws of
// the same concept.
ImageSample render_image(const WorldConfig& w, const Concept& c,
                         uint64_t noise_seed);
// aspect_mask selects the attribute slots the caption mentions; fillers
// are interleaved from the seed. Partiality of the mask is what makes one
// image admit many captions.
TextSample render_caption(const WorldConfig& w, const Concept& c,
                          const std::vector<bool>& aspect_mask,
                          uint64_t filler_seed);

// Nearest-one-hot decoding of the attribute blocks; the ground-truth
// oracle for alignment checks.
Concept decode_image_concept(const WorldConfig& w, const ImageSample& img);
// True iff every attribute token in the caption matches the concept.
bool caption_consistent(const WorldConfig& w, const Concept& c,
                        const TextSample& t);

Concept random_concept(const WorldConfig& w, Rng& rng);
std::vector<bool> random_mask(const WorldConfig& w, Rng& rng);

PairedDataset generate_dataset(const WorldConfig& w, int n_groups,
                               int images_per_group, int captions_per_group,
                               uint64_t seed, const std::string& split = "train",
                               int id_offset = 0);

// Pairs a batch sampler may emit under the dataset's policy, as
// (group index, image index, caption index) triples. For kFirstOnly11
// this is exactly one per group.
std::vector<std::array<int, 3>> enumerate_pairs(const PairedDataset& d);

void save_dataset(const PairedDataset& d, const std::string& path);
PairedDataset load_dataset(const std::string& path);
// Sidecar vocabulary file: token id -> readable token string.
void save_vocab(const WorldConfig& w, const std::string& path);
std::string token_string(const WorldConfig& w, int id);

}  // namespace mmadv
