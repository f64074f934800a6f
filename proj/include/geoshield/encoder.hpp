#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geoshield/image.hpp"

namespace geoshield {

/// Dense embedding in an encoder pair's shared image/text space.
class FeatureVector {
 public:
  FeatureVector() = default;
  explicit FeatureVector(std::vector<double> values) : values_(std::move(values)) {}
  static FeatureVector zeros(std::size_t dim) { return FeatureVector(std::vector<double>(dim)); }

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  double norm() const noexcept;
  bool is_finite() const noexcept;
  /// Unit-length copy. Throws DomainError for a zero or non-finite vector.
  FeatureVector normalized() const;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<double> values_;
};

double dot(const FeatureVector& a, const FeatureVector& b);
FeatureVector operator-(const FeatureVector& a, const FeatureVector& b);

/// <a, b> / (|a| |b|). Zero vectors raise DomainError.
double cosine_similarity(const FeatureVector& a, const FeatureVector& b);
/// d cosine_similarity(a, b) / d a.
FeatureVector cosine_similarity_grad(const FeatureVector& a, const FeatureVector& b);

struct EncoderCapabilities {
  bool value = true;
  bool input_gradient = false;
};

/// A surrogate image encoder and the text encoder that shares its output
/// space. Implementations are immutable after construction.
///
/// embed_image receives an image already resized to image_input_size(); use
/// the free encode_* functions, which do that preprocessing.
class EncoderPair {
 public:
  virtual ~EncoderPair() = default;

  virtual std::string id() const = 0;
  virtual int image_input_size() const = 0;
  virtual int feature_dim() const = 0;
  virtual EncoderCapabilities capabilities() const = 0;

  virtual FeatureVector embed_image(const Image& prepared) const = 0;
  /// Vector-Jacobian product: d<upstream, embed_image(x)>/dx at x = prepared.
  virtual Image embed_image_vjp(const Image& prepared, const FeatureVector& upstream) const;
  virtual FeatureVector embed_text(const std::string& text) const = 0;
};

using EncoderPtr = std::shared_ptr<const EncoderPair>;

/// Raw (unnormalised) feature of the whole image, resized to the encoder input.
FeatureVector encode_image(const EncoderPair& pair, const Image& img);
/// Raw feature of `region` of img, resized to the encoder input.
FeatureVector encode_region(const EncoderPair& pair, const Image& img, const CropRegion& region);
/// Raw text feature. Empty text raises DomainError.
FeatureVector encode_text(const EncoderPair& pair, std::string_view text);

/// Ordered, non-empty set of encoder pairs with unique ids. Every pair
/// contributes with unit weight.
class EncoderEnsemble {
 public:
  explicit EncoderEnsemble(std::vector<EncoderPtr> pairs);

  std::size_t size() const noexcept { return pairs_.size(); }
  const EncoderPair& operator[](std::size_t i) const { return *pairs_[i]; }
  const EncoderPtr& ptr(std::size_t i) const { return pairs_[i]; }
  const std::vector<EncoderPtr>& pairs() const noexcept { return pairs_; }
  int max_input_size() const;

 private:
  std::vector<EncoderPtr> pairs_;
};

/// Output of a per-pair objective over a set of image views.
struct PairObjectiveResult {
  double value = 0.0;
  /// d value / d raw view feature, one per view; empty means constant.
  std::vector<FeatureVector> view_grads;
  /// Optional breakdown; summed elementwise across pairs.
  std::vector<double> terms;
};

using PairObjective = std::function<PairObjectiveResult(
    std::size_t pair_index, std::span<const FeatureVector> view_features)>;

/// A scalar objective of an image: every pair encodes every view (a region
/// of the image resized to the pair's input), and `objective` maps the raw
/// view features of one pair to its contribution. The total is the sum over
/// pairs.
struct LossSpec {
  std::vector<CropRegion> views;
  PairObjective objective;
};

struct LossEvaluation {
  double value = 0.0;
  std::vector<double> terms;
  Image gradient;  // empty unless requested
};

LossEvaluation evaluate_loss(const EncoderEnsemble& ensemble, const LossSpec& spec,
                             const Image& img);

/// Value and d loss / d img. Every pair must report input_gradient
/// capability, otherwise CapabilityError names the first that does not.
LossEvaluation loss_input_gradient(const EncoderEnsemble& ensemble, const LossSpec& spec,
                                   const Image& img);

struct ToyEncoderOptions {
  int grid = 32;    // average-pool grid per side
  int hidden = 96;  // tanh layer width
  double input_gain = 3.0;
  double output_bias = 0.25;  // shared offset, mimics CLIP's anisotropic embedding cone
};

/// Deterministic differentiable surrogate: area pooling to a grid, one tanh
/// layer, linear read-out. The paired text encoder hashes unigrams and
/// bigrams into feature_dim signed buckets and applies a fixed projection.
/// All weights derive from `seed` alone. feature_dim must be >= 8.
EncoderPtr make_toy_encoder(std::uint64_t seed, int input_size, int feature_dim,
                            const ToyEncoderOptions& options = {});

}  // namespace geoshield
