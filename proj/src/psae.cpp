#include "geoshield/psae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "geoshield/errors.hpp"
#include "json.hpp"

namespace geoshield {

void AttackConfig::validate() const {
  auto fail = [](const std::string& m) { throw DomainError("AttackConfig." + m); };
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail("epsilon must be positive");
  if (!(step_size > 0.0) || step_size > epsilon) fail("step_size must be in (0, epsilon]");
  if (iterations < 0) fail("iterations must be non-negative");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be non-negative");
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta must be non-negative");
  if (n_patch < 0) fail("n_patch must be non-negative");
  if (patch_size < 0) fail("patch_size must be non-negative");
  if (!(crop.scale_min > 0.0) || crop.scale_min > crop.scale_max || crop.scale_max > 1.0)
    fail("crop scale range must satisfy 0 < lo <= hi <= 1");
  if (!(crop.ratio_min > 0.0) || crop.ratio_min > crop.ratio_max)
    fail("crop ratio range must satisfy 0 < lo <= hi");
}

std::string to_config_text(const AttackConfig& cfg) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto per255 = [&num](double v) {
    const double k = v * 255.0;
    return std::abs(k - std::round(k)) < 1e-9 ? num(std::round(k)) : num(k);
  };
  std::ostringstream s;
  s << "budget = " << per255(cfg.epsilon) << '\n'
    << "step-size = " << per255(cfg.step_size) << '\n'
    << "steps = " << cfg.iterations << '\n'
    << "alpha = " << num(cfg.alpha) << '\n'
    << "beta = " << num(cfg.beta) << '\n'
    << "patches = " << cfg.n_patch << '\n'
    << "patch-size = " << cfg.patch_size << '\n'
    << "crop-scale-min = " << num(cfg.crop.scale_min) << '\n'
    << "crop-scale-max = " << num(cfg.crop.scale_max) << '\n'
    << "crop-ratio-min = " << num(cfg.crop.ratio_min) << '\n'
    << "crop-ratio-max = " << num(cfg.crop.ratio_max) << '\n'
    << "seed = " << cfg.seed << '\n'
    << "disentangle = " << (cfg.disentangle ? "true" : "false") << '\n';
  return s.str();
}

void write_trace_jsonl(const AttackTrace& trace, std::ostream& out) {
  for (const auto& r : trace.iterations) {
    nlohmann::json j = {{"iteration", r.iteration}, {"loss", r.loss}, {"linf", r.linf}};
    if (!r.terms.empty()) {
      nlohmann::json terms = nlohmann::json::object();
      for (std::size_t t = 0; t < r.terms.size() && t < kLossTermCount; ++t)
        terms[kLossTermNames[t]] = r.terms[t];
      j["terms"] = std::move(terms);
    }
    out << j.dump() << '\n';
  }
}

std::vector<CropRegion> sample_patch_regions(int height, int width, int n, int patch_size, Rng& rng) {
  if (patch_size <= 0) throw DomainError("patch_size must be positive");
  if (patch_size > height || patch_size > width) {
    std::ostringstream msg;
    msg << "patch " << patch_size << "px does not fit a " << height << "x" << width
        << " image; resize the image or reduce patch_size";
    throw DomainError(msg.str());
  }
  std::vector<CropRegion> out;
  out.reserve(std::max(n, 0));
  for (int i = 0; i < n; ++i) {
    const int top = static_cast<int>(uniform_int(rng, 0, height - patch_size));
    const int left = static_cast<int>(uniform_int(rng, 0, width - patch_size));
    out.push_back({top, left, patch_size, patch_size});
  }
  return out;
}

std::vector<Image> sample_local_patches(const Image& img, int n, int patch_size, Rng& rng) {
  std::vector<Image> out;
  for (const auto& r : sample_patch_regions(img.height(), img.width(), n, patch_size, rng))
    out.push_back(crop(img, r));
  return out;
}

FeatureVector local_source_feature(const EncoderPair& pair, std::span<const Image> patches) {
  if (patches.empty()) throw DomainError("local_source_feature: no patches");
  FeatureVector mean = FeatureVector::zeros(pair.feature_dim());
  for (const auto& p : patches) {
    const FeatureVector f = encode_image(pair, p).normalized();
    for (std::size_t d = 0; d < mean.dim(); ++d) mean[d] += f[d];
  }
  for (double& v : mean.values()) v /= static_cast<double>(patches.size());
  return mean.normalized();
}

namespace {

// Weighted, signed contributions of one pair.
std::array<double, kLossTermCount> pair_terms(const FeatureVector& global,
                                              const FeatureVector* local, const PairTargets& t,
                                              double alpha, double beta) {
  std::array<double, kLossTermCount> terms{};
  terms[kGeoGlobal] = cosine_similarity(global, t.z_geo);
  for (const auto& b : t.boxes) terms[kBoxGlobal] += alpha * cosine_similarity(global, b);
  if (beta != 0.0) terms[kNonGeoGlobal] = -beta * cosine_similarity(global, t.z_non_geo);
  if (local) {
    terms[kGeoLocal] = cosine_similarity(*local, t.z_geo);
    for (const auto& b : t.boxes) terms[kBoxLocal] += alpha * cosine_similarity(*local, b);
    if (beta != 0.0) terms[kNonGeoLocal] = -beta * cosine_similarity(*local, t.z_non_geo);
  }
  return terms;
}

double sum_terms(const std::array<double, kLossTermCount>& terms) {
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

// d/dv of sum_j w_j S(v, target_j), accumulated into grad.
void add_cosine_grads(FeatureVector& grad, const FeatureVector& v, const PairTargets& t,
                      double alpha, double beta) {
  auto add = [&](const FeatureVector& target, double w) {
    if (w == 0.0) return;
    const FeatureVector g = cosine_similarity_grad(v, target);
    for (std::size_t d = 0; d < grad.dim(); ++d) grad[d] += w * g[d];
  };
  add(t.z_geo, 1.0);
  for (const auto& b : t.boxes) add(b, alpha);
  add(t.z_non_geo, -beta);
}

}  // namespace

TotalLoss total_loss(std::span<const PairViewFeatures> features, std::span<const PairTargets> targets,
                     double alpha, double beta) {
  if (features.size() != targets.size())
    throw ContractError("total_loss: one target set per encoder pair required");
  TotalLoss out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    const auto terms = pair_terms(f.global, f.local ? &*f.local : nullptr, targets[i], alpha, beta);
    for (std::size_t t = 0; t < kLossTermCount; ++t) out.terms[t] += terms[t];
  }
  out.value = sum_terms(out.terms);
  return out;
}

TotalLoss total_loss(const EncoderEnsemble& ensemble, std::span<const PairViewFeatures> features,
                     const GeoFeatureBundle& bundle, double alpha, double beta) {
  std::vector<PairTargets> targets;
  for (const auto& p : ensemble.pairs()) targets.push_back(bundle.for_pair(p->id()));
  return total_loss(features, targets, alpha, beta);
}

LossSpec make_total_loss_spec(std::vector<PairTargets> targets, const CropRegion& global_region,
                              std::span<const CropRegion> patches, double alpha, double beta) {
  LossSpec spec;
  spec.views.push_back(global_region);
  spec.views.insert(spec.views.end(), patches.begin(), patches.end());
  const std::size_t n_patch = patches.size();
  spec.objective = [targets = std::move(targets), n_patch, alpha, beta](
                       std::size_t pair_index, std::span<const FeatureVector> feats) {
    if (pair_index >= targets.size())
      throw ContractError("total loss: no targets for pair index " + std::to_string(pair_index));
    const PairTargets& t = targets[pair_index];
    const FeatureVector& global = feats[0];

    std::vector<FeatureVector> unit(n_patch);
    FeatureVector mean;
    if (n_patch > 0) {
      mean = FeatureVector::zeros(global.dim());
      for (std::size_t p = 0; p < n_patch; ++p) {
        unit[p] = feats[1 + p].normalized();
        for (std::size_t d = 0; d < mean.dim(); ++d) mean[d] += unit[p][d] / n_patch;
      }
    }

    PairObjectiveResult r;
    const auto terms = pair_terms(global, n_patch > 0 ? &mean : nullptr, t, alpha, beta);
    r.terms.assign(terms.begin(), terms.end());
    r.value = sum_terms(terms);

    r.view_grads.assign(feats.size(), FeatureVector::zeros(global.dim()));
    add_cosine_grads(r.view_grads[0], global, t, alpha, beta);
    if (n_patch > 0) {
      // Cosine is scale-invariant, so the gradient w.r.t. the unnormalised
      // mean equals the one through the renormalised local feature.
      FeatureVector g_mean = FeatureVector::zeros(global.dim());
      add_cosine_grads(g_mean, mean, t, alpha, beta);
      for (std::size_t p = 0; p < n_patch; ++p) {
        const FeatureVector& u = unit[p];
        const double norm = feats[1 + p].norm();
        double proj = 0.0;
        for (std::size_t d = 0; d < u.dim(); ++d) proj += u[d] * g_mean[d];
        auto& g = r.view_grads[1 + p];
        for (std::size_t d = 0; d < u.dim(); ++d)
          g[d] = (g_mean[d] - u[d] * proj) / (static_cast<double>(n_patch) * norm);
      }
    }
    return r;
  };
  return spec;
}

LossSpec make_targeted_loss_spec(std::vector<FeatureVector> target_features,
                                 const CropRegion& global_region) {
  LossSpec spec;
  spec.views = {global_region};
  spec.objective = [targets = std::move(target_features)](std::size_t i,
                                                           std::span<const FeatureVector> feats) {
    if (i >= targets.size()) throw ContractError("targeted loss: no target for pair index");
    PairObjectiveResult r;
    r.value = 1.0 - cosine_similarity(feats[0], targets[i]);
    FeatureVector g = cosine_similarity_grad(feats[0], targets[i]);
    for (double& v : g.values()) v = -v;
    r.view_grads.push_back(std::move(g));
    return r;
  };
  return spec;
}

LossSpec make_untargeted_loss_spec(std::vector<FeatureVector> clean_features,
                                   const CropRegion& global_region) {
  LossSpec spec;
  spec.views = {global_region};
  spec.objective = [clean = std::move(clean_features)](std::size_t i,
                                                        std::span<const FeatureVector> feats) {
    if (i >= clean.size()) throw ContractError("untargeted loss: no clean feature for pair index");
    PairObjectiveResult r;
    r.value = cosine_similarity(feats[0], clean[i]);
    r.view_grads.push_back(cosine_similarity_grad(feats[0], clean[i]));
    return r;
  };
  return spec;
}

namespace {

using SpecFactory = std::function<LossSpec(Rng&)>;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

AttackResult run_ifgsm(const Image& img, const EncoderEnsemble& ensemble, const AttackConfig& cfg,
                       const SpecFactory& next_spec, const IterationObserver& observer,
                       bool random_start = false) {
  cfg.validate();
  if (img.empty() || !img.in_unit_range())
    throw DomainError("attack input must be a non-empty image with values in [0, 1]");

  const auto start = std::chrono::steady_clock::now();
  AttackResult result{img, {}};
  Image& current = result.protected_image;
  auto clean = img.values();
  auto x = current.values();
  Rng rng(cfg.seed);
  if (random_start && cfg.iterations > 0) {
    // separate stream so crops match the non-random runs
    Rng init(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = std::clamp(clean[i] + uniform_real(init, -cfg.step_size, cfg.step_size), 0.0, 1.0);
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    const LossSpec spec = next_spec(rng);
    const LossEvaluation eval = loss_input_gradient(ensemble, spec, current);
    if (!std::isfinite(eval.value) || !all_finite(eval.terms) || !all_finite(eval.gradient.values())) {
      std::ostringstream msg;
      msg << "non-finite loss or gradient at iteration " << it << " (loss " << eval.value;
      for (std::size_t t = 0; t < eval.terms.size() && t < kLossTermCount; ++t)
        msg << ", " << kLossTermNames[t] << " " << eval.terms[t];
      msg << ")";
      throw SolverError(msg.str(), it);
    }

    auto grad = eval.gradient.values();
    double linf = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sign = (grad[i] > 0.0) - (grad[i] < 0.0);
      const double delta = std::clamp(x[i] - clean[i] - cfg.step_size * sign, -cfg.epsilon, cfg.epsilon);
      x[i] = std::clamp(clean[i] + delta, 0.0, 1.0);
      linf = std::max(linf, std::abs(x[i] - clean[i]));
    }

    IterationRecord rec{it, eval.value, eval.terms, linf};
    if (observer) observer(rec, current);
    result.trace.iterations.push_back(std::move(rec));
  }
  result.trace.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

int resolve_patch_size(const AttackConfig& cfg, const EncoderEnsemble& ensemble) {
  return cfg.patch_size > 0 ? cfg.patch_size : ensemble.max_input_size();
}

}  // namespace

AttackResult ifgsm_protect(const Image& img, const EncoderEnsemble& ensemble,
                           const GeoFeatureBundle& bundle, const AttackConfig& cfg,
                           const IterationObserver& observer) {
  std::vector<PairTargets> base;
  for (const auto& p : ensemble.pairs()) base.push_back(bundle.for_pair(p->id()));
  const int patch_size = resolve_patch_size(cfg, ensemble);
  if (cfg.n_patch > 0 && cfg.iterations > 0 && (patch_size > img.height() || patch_size > img.width()))
    throw DomainError("patch size " + std::to_string(patch_size) + " exceeds the image; resize first");
  const double beta = cfg.disentangle ? cfg.beta : 0.0;

  auto factory = [&](Rng& rng) {
    const CropRegion region = sample_random_crop_region(img.height(), img.width(), rng, cfg.crop);
    const auto patches = cfg.n_patch > 0
                             ? sample_patch_regions(img.height(), img.width(), cfg.n_patch, patch_size, rng)
                             : std::vector<CropRegion>{};
    std::vector<PairTargets> targets = base;
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
      if (cfg.disentangle) {
        targets[i].z_geo =
            per_iteration_geo_target(ensemble[i], img, region, targets[i].z_non_geo, bundle.mode);
      } else {
        targets[i].z_geo = encode_region(ensemble[i], img, region).normalized();
      }
    }
    return make_total_loss_spec(std::move(targets), region, patches, cfg.alpha, beta);
  };
  return run_ifgsm(img, ensemble, cfg, factory, observer);
}

AttackResult targeted_baseline(const Image& img, const Image& target_img,
                               const EncoderEnsemble& ensemble, const AttackConfig& cfg,
                               const IterationObserver& observer) {
  std::vector<FeatureVector> target_features;
  for (const auto& p : ensemble.pairs()) target_features.push_back(encode_image(*p, target_img));
  auto factory = [&](Rng& rng) {
    const CropRegion region = sample_random_crop_region(img.height(), img.width(), rng, cfg.crop);
    return make_targeted_loss_spec(target_features, region);
  };
  return run_ifgsm(img, ensemble, cfg, factory, observer);
}

AttackResult untargeted_baseline(const Image& img, const EncoderEnsemble& ensemble,
                                 const AttackConfig& cfg, const IterationObserver& observer) {
  auto factory = [&](Rng& rng) {
    const CropRegion region = sample_random_crop_region(img.height(), img.width(), rng, cfg.crop);
    std::vector<FeatureVector> clean;
    for (const auto& p : ensemble.pairs()) clean.push_back(encode_region(*p, img, region));
    return make_untargeted_loss_spec(std::move(clean), region);
  };
  return run_ifgsm(img, ensemble, cfg, factory, observer, true);
}

double mean_geo_similarity(const EncoderEnsemble& ensemble, const Image& img,
                           const GeoFeatureBundle& bundle) {
  double s = 0.0;
  for (const auto& p : ensemble.pairs())
    s += cosine_similarity(encode_image(*p, img), bundle.for_pair(p->id()).z_geo);
  return s / static_cast<double>(ensemble.size());
}

double mean_nongeo_similarity(const EncoderEnsemble& ensemble, const Image& img,
                              const GeoFeatureBundle& bundle) {
  double s = 0.0;
  for (const auto& p : ensemble.pairs())
    s += cosine_similarity(encode_image(*p, img), bundle.for_pair(p->id()).z_non_geo);
  return s / static_cast<double>(ensemble.size());
}

}  // namespace geoshield
