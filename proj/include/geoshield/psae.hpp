#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geoshield/encoder.hpp"
#include "geoshield/gnfd.hpp"

namespace geoshield {

/// Everything one protection run is parameterised by.
struct AttackConfig {
  double epsilon = 8.0 / 255.0;    // l-inf budget, pixel units
  double step_size = 1.0 / 255.0;  // per-iteration signed step
  int iterations = 200;
  double alpha = 1.0;  // weight of geo-exposure box terms
  double beta = 1.0;   // weight of non-geographic preservation terms
  int n_patch = 4;     // local patches per iteration; 0 disables the local branch
  int patch_size = 0;  // 0 = largest encoder input size in the ensemble
  CropSampling crop;   // global random crop
  std::uint64_t seed = 0;
  /// false replaces z_geo targets by the clean crop's own feature and drops
  /// the non-geographic terms (untargeted repulsion without disentanglement).
  bool disentangle = true;

  /// Throws DomainError naming the first violated field.
  void validate() const;
};

/// key = value lines, one per field, stable order. Budget and step size are
/// written in 1/255 units under the keys `budget` and `step-size`.
std::string to_config_text(const AttackConfig& cfg);

enum LossTerm : std::size_t {
  kGeoGlobal,
  kGeoLocal,
  kBoxGlobal,
  kBoxLocal,
  kNonGeoGlobal,
  kNonGeoLocal,
  kLossTermCount
};
inline constexpr std::array<const char*, kLossTermCount> kLossTermNames = {
    "geo_global", "geo_local", "box_global", "box_local", "nongeo_global", "nongeo_local"};

/// One optimiser step. loss and terms are evaluated at the iterate the step
/// starts from; linf is |delta| after the step.
struct IterationRecord {
  int iteration = 0;
  double loss = 0.0;
  std::vector<double> terms;  // signed, weighted; sums to loss (empty for baselines)
  double linf = 0.0;
};

struct AttackTrace {
  std::vector<IterationRecord> iterations;
  double elapsed_seconds = 0.0;
};

/// One JSON object per iteration. Timing is left out so traces of equal runs
/// are byte-identical.
void write_trace_jsonl(const AttackTrace& trace, std::ostream& out);

struct AttackResult {
  Image protected_image;
  AttackTrace trace;
};

/// Called after every step with the record and the current protected image.
using IterationObserver = std::function<void(const IterationRecord&, const Image&)>;

/// n regions of patch_size x patch_size at uniform top-left positions.
std::vector<CropRegion> sample_patch_regions(int height, int width, int n, int patch_size, Rng& rng);
std::vector<Image> sample_local_patches(const Image& img, int n, int patch_size, Rng& rng);

/// Mean of the unit-normalised patch features, renormalised.
FeatureVector local_source_feature(const EncoderPair& pair, std::span<const Image> patches);

/// Source features of the perturbed image for one pair.
struct PairViewFeatures {
  FeatureVector global;
  std::optional<FeatureVector> local;  // absent when the local branch is off
};

struct TotalLoss {
  double value = 0.0;
  std::array<double, kLossTermCount> terms{};
};

/// Sum over pairs of
///   S(g, z_geo) + S(l, z_geo) + alpha * sum_k [S(g, B_k) + S(l, B_k)]
///   - beta * [S(g, z_non_geo) + S(l, z_non_geo)]
/// with S the cosine similarity, g the global and l the local feature.
/// Local terms vanish when l is absent.
TotalLoss total_loss(std::span<const PairViewFeatures> features, std::span<const PairTargets> targets,
                     double alpha, double beta);
/// As above, looking targets up by pair id; a missing entry raises ContractError.
TotalLoss total_loss(const EncoderEnsemble& ensemble, std::span<const PairViewFeatures> features,
                     const GeoFeatureBundle& bundle, double alpha, double beta);

/// Differentiable form of total_loss over views {global_region, patches...}.
LossSpec make_total_loss_spec(std::vector<PairTargets> targets, const CropRegion& global_region,
                              std::span<const CropRegion> patches, double alpha, double beta);
/// Sum over pairs of 1 - S(f(x' crop), target_feature).
LossSpec make_targeted_loss_spec(std::vector<FeatureVector> target_features,
                                 const CropRegion& global_region);
/// Sum over pairs of S(f(x' crop), clean_feature).
LossSpec make_untargeted_loss_spec(std::vector<FeatureVector> clean_features,
                                   const CropRegion& global_region);

/// Ensemble I-FGSM on the full protection objective. Each iteration draws
/// one global crop (applied to the perturbed image for the source feature and
/// to the clean image for the decomposition target) and n_patch local patches.
AttackResult ifgsm_protect(const Image& img, const EncoderEnsemble& ensemble,
                           const GeoFeatureBundle& bundle, const AttackConfig& cfg,
                           const IterationObserver& observer = {});

/// Feature-alignment baseline: pull features of img towards target_img.
AttackResult targeted_baseline(const Image& img, const Image& target_img,
                               const EncoderEnsemble& ensemble, const AttackConfig& cfg,
                               const IterationObserver& observer = {});

/// Repulsion baseline: push features away from the clean image's. Starts
/// from a seeded random perturbation of at most one step, since the
/// repulsion gradient vanishes at delta = 0.
AttackResult untargeted_baseline(const Image& img, const EncoderEnsemble& ensemble,
                                 const AttackConfig& cfg, const IterationObserver& observer = {});

/// Mean over pairs of S(f(img), z) for the bundle's whole-image z_geo and
/// z_non_geo respectively.
double mean_geo_similarity(const EncoderEnsemble& ensemble, const Image& img,
                           const GeoFeatureBundle& bundle);
double mean_nongeo_similarity(const EncoderEnsemble& ensemble, const Image& img,
                              const GeoFeatureBundle& bundle);

}  // namespace geoshield
