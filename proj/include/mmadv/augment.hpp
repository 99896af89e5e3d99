#pragma once

#include "mmadv/attacks.hpp"
#include "mmadv/data.hpp"

#include <string>
#include <vector>

namespace mmadv {

enum class AugTechnique {
  kRandaugAnalog,     // concept-blind image transforms
  kEda,               // concept-blind text edits
  kI2tOracle,         // fresh captions from the concept (random masks)
  kI2tDivcapsOracle,  // fresh captions cycling fixed mask archetypes
  kT2iOracle,         // fresh images matching a caption's masked slots
  kTi2iOracle,        // blend toward a fresh render
  kMisalignedControl, // captions swapped across concepts
};

std::string to_string(AugTechnique t);
AugTechnique aug_technique_from_string(const std::string& s);
bool technique_augments_text(AugTechnique t);

struct AugmenterSpec {
  AugTechnique technique = AugTechnique::kI2tOracle;
  int count = 4;          // per original; 2 is the ti2i default
  double alpha = 0.3;     // eda edit rate
  double magnitude = 0.1; // randaug-analog strength
  double strength = 0.5;  // ti2i blend factor
  double shift = 0.0;     // t2i nuisance mean offset (distribution gap knob)
  uint64_t seed = 0;

  void validate() const;
  static AugmenterSpec with(AugTechnique t);
};

enum class Assembly {
  kOneToMany,
  kManyToOne,
  kManyToMany,
  kNaiveFlat11,
  kOracleExtraOriginals,
};

std::string to_string(Assembly a);
Assembly assembly_from_string(const std::string& s);

// Per-group generators. EDA needs model embeddings for neighbor lookups;
// the oracle variants only need the concept.
std::vector<TaggedText> augment_text_intra(const ModelParams& params,
                                           const TextSample& text,
                                           const AugmenterSpec& spec,
                                           uint64_t salt);
std::vector<TaggedText> augment_text_i2t_oracle(const WorldConfig& w,
                                                const SampleGroup& group,
                                                const AugmenterSpec& spec,
                                                uint64_t salt);
std::vector<TaggedImage> augment_image_intra(const WorldConfig& w,
                                             const ImageSample& image,
                                             const AugmenterSpec& spec,
                                             uint64_t salt);
// t2i: fresh image agreeing with the caption's mentioned slots, the
// unmentioned slots redrawn uniformly; `shift` offsets the nuisance
// statistics to emulate a generator's distribution gap. ti2i: convex
// blend toward a fresh render of the same concept.
std::vector<TaggedImage> augment_image_t2i_oracle(const WorldConfig& w,
                                                  const SampleGroup& group,
                                                  const AugmenterSpec& spec,
                                                  uint64_t salt);

// Derives the concept a caption pins down, filling unmentioned slots
// from `fallback`.
Concept caption_concept(const WorldConfig& w, const TextSample& t,
                        const Concept& fallback);

// Applies the specs to every group. kOneToMany-style assemblies attach
// augmented elements to their source group; kNaiveFlat11 regroups every
// augmented element as its own 1:1 pair; kOracleExtraOriginals replaces
// the augmented elements with the same number of fresh ground-truth
// groups. Never mutates `base`. EDA and misaligned-control need `params`
// for embedding neighbors; pass the reference model used elsewhere.
PairedDataset build_augmented_dataset(const PairedDataset& base,
                                      const std::vector<AugmenterSpec>& specs,
                                      Assembly assembly,
                                      const ModelParams& params);

}  // namespace mmadv
