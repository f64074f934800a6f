#include "geoshield/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "geoshield/errors.hpp"
#include "geoshield/random.hpp"
#include "geoshield/text.hpp"

namespace geoshield {

double FeatureVector::norm() const noexcept {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

bool FeatureVector::is_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

FeatureVector FeatureVector::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("cannot normalise a zero or non-finite feature");
  FeatureVector out = *this;
  for (double& v : out.values_) v /= n;
  return out;
}

namespace {

void require_same_dim(const FeatureVector& a, const FeatureVector& b, const char* op) {
  if (a.dim() != b.dim()) {
    std::ostringstream msg;
    msg << op << ": dimension mismatch " << a.dim() << " vs " << b.dim();
    throw DomainError(msg.str());
  }
}

}  // namespace

double dot(const FeatureVector& a, const FeatureVector& b) {
  require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

FeatureVector operator-(const FeatureVector& a, const FeatureVector& b) {
  require_same_dim(a, b, "subtract");
  FeatureVector out = a;
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] -= b[i];
  return out;
}

double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
  require_same_dim(a, b, "cosine_similarity");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("cosine_similarity: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

FeatureVector cosine_similarity_grad(const FeatureVector& a, const FeatureVector& b) {
  require_same_dim(a, b, "cosine_similarity_grad");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("cosine_similarity: zero vector");
  const double cos = dot(a, b) / (na * nb);
  FeatureVector g = FeatureVector::zeros(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) g[i] = b[i] / (na * nb) - cos * a[i] / (na * na);
  return g;
}

Image EncoderPair::embed_image_vjp(const Image&, const FeatureVector&) const {
  throw CapabilityError("encoder pair '" + id() + "' does not provide input gradients");
}

namespace {

Image prepare(const EncoderPair& pair, const Image& img, const CropRegion& region) {
  const int s = pair.image_input_size();
  Image prepared = resize_region(img, region, s, s);
  if (prepared.height() != s || prepared.width() != s)
    throw ContractError("preprocessing produced the wrong shape for pair '" + pair.id() + "'");
  return prepared;
}

void check_feature(const EncoderPair& pair, const FeatureVector& f, const char* what) {
  if (f.dim() != static_cast<std::size_t>(pair.feature_dim())) {
    std::ostringstream msg;
    msg << "pair '" << pair.id() << "' returned a " << what << " feature of dim " << f.dim()
        << ", declared " << pair.feature_dim();
    throw ContractError(msg.str());
  }
}

}  // namespace

FeatureVector encode_image(const EncoderPair& pair, const Image& img) {
  return encode_region(pair, img, full_region(img));
}

FeatureVector encode_region(const EncoderPair& pair, const Image& img, const CropRegion& region) {
  FeatureVector f = pair.embed_image(prepare(pair, img, region));
  check_feature(pair, f, "image");
  return f;
}

FeatureVector encode_text(const EncoderPair& pair, std::string_view text) {
  if (text.empty()) throw DomainError("encode_text: text must be non-empty");
  FeatureVector f = pair.embed_text(std::string(text));
  check_feature(pair, f, "text");
  return f;
}

EncoderEnsemble::EncoderEnsemble(std::vector<EncoderPtr> pairs) : pairs_(std::move(pairs)) {
  if (pairs_.empty()) throw DomainError("encoder ensemble must contain at least one pair");
  std::set<std::string> ids;
  for (const auto& p : pairs_) {
    if (!p) throw DomainError("encoder ensemble contains a null pair");
    if (!ids.insert(p->id()).second)
      throw DomainError("duplicate encoder pair id in ensemble: " + p->id());
  }
}

int EncoderEnsemble::max_input_size() const {
  int m = 0;
  for (const auto& p : pairs_) m = std::max(m, p->image_input_size());
  return m;
}

namespace {

LossEvaluation run_loss(const EncoderEnsemble& ensemble, const LossSpec& spec, const Image& img,
                        bool want_gradient) {
  if (!spec.objective) throw ContractError("loss spec has no objective");
  if (want_gradient) {
    for (const auto& p : ensemble.pairs()) {
      if (!p->capabilities().input_gradient)
        throw CapabilityError("encoder pair '" + p->id() + "' lacks value_and_input_gradient");
    }
  }

  LossEvaluation out;
  if (want_gradient) out.gradient = Image(img.height(), img.width(), 0.0);

  std::vector<FeatureVector> feats(spec.views.size());
  std::vector<Image> prepared(spec.views.size());
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const EncoderPair& pair = ensemble[i];
    for (std::size_t v = 0; v < spec.views.size(); ++v) {
      prepared[v] = prepare(pair, img, spec.views[v]);
      feats[v] = pair.embed_image(prepared[v]);
      check_feature(pair, feats[v], "image");
    }
    PairObjectiveResult r = spec.objective(i, feats);
    out.value += r.value;
    if (out.terms.size() < r.terms.size()) out.terms.resize(r.terms.size(), 0.0);
    for (std::size_t t = 0; t < r.terms.size(); ++t) out.terms[t] += r.terms[t];

    if (!want_gradient || r.view_grads.empty()) continue;
    if (r.view_grads.size() != spec.views.size())
      throw ContractError("objective returned gradients for the wrong number of views");
    for (std::size_t v = 0; v < spec.views.size(); ++v) {
      const auto& g = r.view_grads[v];
      if (std::all_of(g.values().begin(), g.values().end(), [](double x) { return x == 0.0; }))
        continue;
      const Image grad_prepared = pair.embed_image_vjp(prepared[v], g);
      resize_region_backward(grad_prepared, spec.views[v], out.gradient);
    }
  }
  return out;
}

}  // namespace

LossEvaluation evaluate_loss(const EncoderEnsemble& ensemble, const LossSpec& spec,
                             const Image& img) {
  return run_loss(ensemble, spec, img, false);
}

LossEvaluation loss_input_gradient(const EncoderEnsemble& ensemble, const LossSpec& spec,
                                   const Image& img) {
  return run_loss(ensemble, spec, img, true);
}

// ---- toy encoder -------------------------------------------------------------

namespace {

class ToyEncoder final : public EncoderPair {
 public:
  ToyEncoder(std::uint64_t seed, int input_size, int feature_dim, const ToyEncoderOptions& opt)
      : seed_(seed), input_size_(input_size), dim_(feature_dim), opt_(opt) {
    std::ostringstream id;
    id << "toy-" << seed << "-" << input_size << "-" << feature_dim;
    id_ = id.str();

    pooled_ = Image::kChannels * opt.grid * opt.grid;
    n_in_ = pooled_;
    Rng rng(seed);
    const double w1_scale = opt.input_gain / std::sqrt(static_cast<double>(pooled_));
    w1_.resize(static_cast<std::size_t>(opt.hidden) * n_in_);
    for (double& w : w1_) w = w1_scale * standard_normal(rng);
    b1_.resize(opt.hidden);
    for (double& b : b1_) b = 0.1 * standard_normal(rng);
    const double w2_scale = 1.0 / std::sqrt(static_cast<double>(opt.hidden));
    w2_.resize(static_cast<std::size_t>(dim_) * opt.hidden);
    for (double& w : w2_) w = w2_scale * standard_normal(rng);
    b2_.resize(dim_);
    for (double& b : b2_) b = opt.output_bias * standard_normal(rng);
    const double t_scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    text_proj_.resize(static_cast<std::size_t>(dim_) * dim_);
    for (double& w : text_proj_) w = t_scale * standard_normal(rng);

    cell_lo_.resize(opt.grid + 1);
    for (int g = 0; g <= opt.grid; ++g)
      cell_lo_[g] = static_cast<int>(static_cast<long long>(g) * input_size / opt.grid);
    cell_of_.resize(input_size);
    for (int g = 0; g < opt.grid; ++g)
      for (int p = cell_lo_[g]; p < cell_lo_[g + 1]; ++p) cell_of_[p] = g;
  }

  std::string id() const override { return id_; }
  int image_input_size() const override { return input_size_; }
  int feature_dim() const override { return dim_; }
  EncoderCapabilities capabilities() const override { return {true, true}; }

  FeatureVector embed_image(const Image& prepared) const override {
    check_input(prepared);
    std::vector<double> pool;
    forward_inputs(prepared, pool);
    const auto hidden = forward_hidden(pool);
    FeatureVector f = FeatureVector::zeros(dim_);
    for (int d = 0; d < dim_; ++d) {
      double acc = b2_[d];
      const double* row = &w2_[static_cast<std::size_t>(d) * opt_.hidden];
      for (int j = 0; j < opt_.hidden; ++j) acc += row[j] * hidden[j];
      f[d] = acc;
    }
    return f;
  }

  Image embed_image_vjp(const Image& prepared, const FeatureVector& upstream) const override {
    check_input(prepared);
    if (upstream.dim() != static_cast<std::size_t>(dim_))
      throw ContractError("toy encoder vjp: upstream dimension mismatch");
    std::vector<double> pool;
    forward_inputs(prepared, pool);
    const auto hidden = forward_hidden(pool);

    std::vector<double> g_h(opt_.hidden, 0.0);
    for (int d = 0; d < dim_; ++d) {
      const double* row = &w2_[static_cast<std::size_t>(d) * opt_.hidden];
      for (int j = 0; j < opt_.hidden; ++j) g_h[j] += row[j] * upstream[d];
    }
    for (int j = 0; j < opt_.hidden; ++j) g_h[j] *= 1.0 - hidden[j] * hidden[j];

    std::vector<double> g_pool(n_in_, 0.0);
    for (int j = 0; j < opt_.hidden; ++j) {
      const double* row = &w1_[static_cast<std::size_t>(j) * n_in_];
      for (int k = 0; k < n_in_; ++k) g_pool[k] += row[k] * g_h[j];
    }
    for (int gy = 0; gy < opt_.grid; ++gy)
      for (int gx = 0; gx < opt_.grid; ++gx) {
        const double area = static_cast<double>(cell_lo_[gy + 1] - cell_lo_[gy]) *
                            (cell_lo_[gx + 1] - cell_lo_[gx]);
        for (int c = 0; c < Image::kChannels; ++c) g_pool[pool_index(gy, gx, c)] /= area;
      }

    Image grad(input_size_, input_size_);
    double* out = grad.values().data();
    for (int y = 0; y < input_size_; ++y) {
      const int gy = cell_of_[y];
      for (int x = 0; x < input_size_; ++x) {
        const int gx = cell_of_[x];
        for (int c = 0; c < Image::kChannels; ++c) *out++ = g_pool[pool_index(gy, gx, c)];
      }
    }
    return grad;
  }

  FeatureVector embed_text(const std::string& text) const override {
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw DomainError("toy text encoder: text has no tokens");
    std::vector<double> buckets(dim_, 0.0);
    auto add = [&](const std::string& gram) {
      const std::uint64_t h = fnv1a64(gram, fnv1a64(std::to_string(seed_)));
      const double sign = (h >> 63) ? -1.0 : 1.0;
      buckets[h % static_cast<std::uint64_t>(dim_)] += sign;
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      add(tokens[i]);
      if (i + 1 < tokens.size()) add(tokens[i] + ' ' + tokens[i + 1]);
    }
    FeatureVector f = FeatureVector::zeros(dim_);
    for (int d = 0; d < dim_; ++d) {
      double acc = 0.0;
      const double* row = &text_proj_[static_cast<std::size_t>(d) * dim_];
      for (int k = 0; k < dim_; ++k) acc += row[k] * buckets[k];
      f[d] = acc;
    }
    if (!(f.norm() > 0.0)) f[0] = 1.0;  // all n-grams cancelled; keep the vector usable
    return f;
  }

 private:
  int pool_index(int gy, int gx, int c) const { return (c * opt_.grid + gy) * opt_.grid + gx; }

  void check_input(const Image& prepared) const {
    if (prepared.height() != input_size_ || prepared.width() != input_size_)
      throw ContractError("toy encoder '" + id_ + "' expects " + std::to_string(input_size_) +
                          "x" + std::to_string(input_size_) + " input");
  }

  void forward_inputs(const Image& prepared, std::vector<double>& pool) const {
    pool.assign(n_in_, 0.0);
    for (int y = 0; y < input_size_; ++y) {
      const int gy = cell_of_[y];
      const double* row = prepared.values().data() + static_cast<std::size_t>(y) * input_size_ * Image::kChannels;
      for (int x = 0; x < input_size_; ++x) {
        const int gx = cell_of_[x];
        for (int c = 0; c < Image::kChannels; ++c) pool[pool_index(gy, gx, c)] += row[x * Image::kChannels + c];
      }
    }
    for (int gy = 0; gy < opt_.grid; ++gy)
      for (int gx = 0; gx < opt_.grid; ++gx) {
        const double area = static_cast<double>(cell_lo_[gy + 1] - cell_lo_[gy]) *
                            (cell_lo_[gx + 1] - cell_lo_[gx]);
        for (int c = 0; c < Image::kChannels; ++c) {
          double& v = pool[pool_index(gy, gx, c)];
          v = v / area - 0.5;
        }
      }
  }

  std::vector<double> forward_hidden(const std::vector<double>& pool) const {
    std::vector<double> hidden(opt_.hidden);
    for (int j = 0; j < opt_.hidden; ++j) {
      double acc = b1_[j];
      const double* row = &w1_[static_cast<std::size_t>(j) * n_in_];
      for (int k = 0; k < n_in_; ++k) acc += row[k] * pool[k];
      hidden[j] = std::tanh(acc);
    }
    return hidden;
  }

  std::uint64_t seed_;
  int input_size_;
  int dim_;
  ToyEncoderOptions opt_;
  std::string id_;
  int pooled_ = 0;
  int n_in_ = 0;
  std::vector<double> w1_, b1_, w2_, b2_, text_proj_;
  std::vector<int> cell_lo_, cell_of_;
};

}  // namespace

EncoderPtr make_toy_encoder(std::uint64_t seed, int input_size, int feature_dim,
                            const ToyEncoderOptions& options) {
  if (feature_dim < 8) throw DomainError("toy encoder feature_dim must be >= 8");
  if (input_size <= 0) throw DomainError("toy encoder input_size must be positive");
  if (options.grid <= 0 || options.grid > input_size)
    throw DomainError("toy encoder grid must be in [1, input_size]");
  if (options.hidden <= 0) throw DomainError("toy encoder hidden width must be positive");
  return std::make_shared<ToyEncoder>(seed, input_size, feature_dim, options);
}

}  // namespace geoshield
