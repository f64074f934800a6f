#include <gtest/gtest.h>

#include "geoshield/encoder.hpp"
#include "geoshield/errors.hpp"
#include "geoshield/psae.hpp"
#include "geoshield/synthetic.hpp"
#include "support.hpp"

using namespace geoshield;
using geoshield::test_support::random_image;
using geoshield::test_support::relative_error;

namespace {

void expect_prefix(const FeatureVector& v, std::initializer_list<double> golden) {
  std::size_t i = 0;
  for (double g : golden) {
    EXPECT_NEAR(v[i], g, 1e-9 * std::max(1.0, std::abs(g))) << "component " << i;
    ++i;
  }
}

/// Encoder without input gradients, for capability checks.
class OpaquePair final : public EncoderPair {
 public:
  std::string id() const override { return "opaque"; }
  int image_input_size() const override { return 8; }
  int feature_dim() const override { return 8; }
  EncoderCapabilities capabilities() const override { return {true, false}; }
  FeatureVector embed_image(const Image& x) const override {
    FeatureVector f = FeatureVector::zeros(8);
    f[0] = x.values()[0] + 1.0;
    return f;
  }
  FeatureVector embed_text(const std::string&) const override { return FeatureVector::zeros(8); }
};

TEST(Cosine, Identities) {
  const FeatureVector v({0.3, -1.2, 2.0});
  FeatureVector neg = v;
  for (double& x : neg.values()) x = -x;
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(v, neg), -1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(FeatureVector({1, 0, 0}), FeatureVector({0, 1, 0})), 0.0);
  EXPECT_THROW(cosine_similarity(v, FeatureVector::zeros(3)), DomainError);
}

TEST(Cosine, GradientMatchesFiniteDifferences) {
  const FeatureVector a({0.3, -1.2, 2.0, 0.4}), b({1.0, 0.5, -0.7, 0.2});
  const FeatureVector g = cosine_similarity_grad(a, b);
  for (std::size_t i = 0; i < a.dim(); ++i) {
    FeatureVector p = a, m = a;
    p[i] += 1e-6;
    m[i] -= 1e-6;
    EXPECT_NEAR(g[i], (cosine_similarity(p, b) - cosine_similarity(m, b)) / 2e-6, 1e-8);
  }
}

TEST(ToyEncoder, GoldenZeroImageFeature) {
  const auto enc = make_toy_encoder(11, 224, 64);
  const FeatureVector z = encode_image(*enc, Image(224, 224, 0.0));
  ASSERT_EQ(z.dim(), 64u);
  expect_prefix(z, {1.1462529747185892, -0.11732962885682385, 1.1117521533885462, 0.91517540406726539,
                    0.60539930405423892, -0.21393507819139623});
  EXPECT_NEAR(z.norm(), 5.7330419571270097, 1e-9);
}

TEST(ToyEncoder, GoldenTextFeature) {
  const auto enc = make_toy_encoder(11, 224, 64);
  const FeatureVector t = encode_text(*enc, "a quiet street with parked cars");
  expect_prefix(t, {-0.034207580266200299, 0.29037854746437558, -0.21490822764758175, -0.4350371237651155,
                    0.27071780568035464, -0.56691520626912029});
  EXPECT_NEAR(t.norm(), 3.1362190620111083, 1e-9);
}

TEST(ToyEncoder, DeterministicAndSeedSensitive) {
  const Image img = random_image(3, 100, 120);
  const auto a = make_toy_encoder(5, 64, 16), b = make_toy_encoder(5, 64, 16), c = make_toy_encoder(6, 64, 16);
  EXPECT_EQ(encode_image(*a, img), encode_image(*a, img));
  EXPECT_EQ(encode_image(*a, img), encode_image(*b, img));
  EXPECT_NE(encode_image(*a, img), encode_image(*c, img));
  EXPECT_EQ(encode_text(*a, "red car"), encode_text(*b, "red car"));
  EXPECT_NE(encode_text(*a, "red car"), encode_text(*c, "red car"));
  EXPECT_NE(encode_image(*a, img), encode_image(*a, random_image(4, 100, 120)));
}

TEST(ToyEncoder, SharedSpaceDimensions) {
  for (int dim : {8, 32, 64}) {
    const auto enc = make_toy_encoder(1, 48, dim);
    EXPECT_EQ(enc->feature_dim(), dim);
    EXPECT_EQ(encode_image(*enc, random_image(1, 30, 30)).dim(), static_cast<std::size_t>(dim));
    EXPECT_EQ(encode_text(*enc, "some words").dim(), static_cast<std::size_t>(dim));
  }
}

TEST(ToyEncoder, ParameterValidation) {
  EXPECT_THROW(make_toy_encoder(1, 64, 7), DomainError);
  EXPECT_THROW(make_toy_encoder(1, 0, 16), DomainError);
  const auto enc = make_toy_encoder(1, 64, 16);
  EXPECT_THROW(encode_text(*enc, ""), DomainError);
  EXPECT_THROW(encode_text(*enc, "!!! ..."), DomainError);
}

TEST(ToyEncoder, LipschitzBound) {
  // measured C ~ 0.0113 over random perturbations; frozen with margin
  const auto enc = make_toy_encoder(11, 224, 64);
  Rng rng(3);
  for (int k = 0; k < 10; ++k) {
    const Image x = random_image(k, 224, 224);
    Image y = x;
    double dn = 0.0;
    for (double& v : y.values()) {
      const double d = (uniform01(rng) - 0.5) * 0.02;
      v += d;
      dn += d * d;
    }
    EXPECT_LE((encode_image(*enc, x) - encode_image(*enc, y)).norm(), 0.02 * std::sqrt(dn));
  }
}

TEST(ToyEncoder, VjpMatchesFiniteDifferences) {
  const auto enc = make_toy_encoder(2, 40, 16);
  const Image x = random_image(8, 40, 40);
  Rng rng(4);
  FeatureVector up = FeatureVector::zeros(16);
  for (double& u : up.values()) u = standard_normal(rng);
  const Image g = enc->embed_image_vjp(x, up);
  for (int k = 0; k < 16; ++k) {
    const int y = static_cast<int>(uniform_int(rng, 0, 39)), xx = static_cast<int>(uniform_int(rng, 0, 39));
    const int c = static_cast<int>(uniform_int(rng, 0, 2));
    Image p = x, m = x;
    p.at(y, xx, c) += 1e-6;
    m.at(y, xx, c) -= 1e-6;
    const double fd = (dot(up, enc->embed_image(p)) - dot(up, enc->embed_image(m))) / 2e-6;
    EXPECT_LT(relative_error(g.at(y, xx, c), fd, 1e-7), 1e-4);
  }
}

LossSpec region_sum_spec(const CropRegion& r, std::vector<FeatureVector> weights) {
  LossSpec spec;
  spec.views = {r};
  spec.objective = [weights](std::size_t i, std::span<const FeatureVector> f) {
    PairObjectiveResult out;
    out.value = dot(weights[i], f[0]);
    out.view_grads = {weights[i]};
    return out;
  };
  return spec;
}

TEST(LossGradient, ConstantLossHasZeroGradient) {
  const auto ens = test_support::toy_ensemble(2, 32, 16);
  LossSpec spec;
  spec.views = {{0, 0, 20, 20}};
  spec.objective = [](std::size_t, std::span<const FeatureVector>) {
    PairObjectiveResult r;
    r.value = 3.0;
    return r;
  };
  const auto ev = loss_input_gradient(ens, spec, random_image(1, 40, 40));
  EXPECT_EQ(ev.value, 6.0);
  EXPECT_EQ(ev.gradient.max_abs(), 0.0);
}

TEST(LossGradient, LinearInLossTerms) {
  const auto ens = test_support::toy_ensemble(2, 32, 16);
  const Image img = random_image(2, 50, 60);
  Rng rng(6);
  auto rand_vec = [&] {
    FeatureVector v = FeatureVector::zeros(16);
    for (double& x : v.values()) x = standard_normal(rng);
    return v;
  };
  const std::vector<FeatureVector> w1 = {rand_vec(), rand_vec()}, w2 = {rand_vec(), rand_vec()};
  std::vector<FeatureVector> w12 = w1;
  for (int i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 16; ++j) w12[i][j] += w2[i][j];
  const CropRegion r{5, 7, 40, 44};
  const Image g1 = loss_input_gradient(ens, region_sum_spec(r, w1), img).gradient;
  const Image g2 = loss_input_gradient(ens, region_sum_spec(r, w2), img).gradient;
  const Image g12 = loss_input_gradient(ens, region_sum_spec(r, w12), img).gradient;
  for (std::size_t i = 0; i < img.size(); ++i)
    ASSERT_NEAR(g12.values()[i], g1.values()[i] + g2.values()[i], 1e-8);
}

TEST(LossGradient, MissingCapabilityNamesThePair) {
  EncoderEnsemble ens({std::make_shared<OpaquePair>()});
  const auto spec = region_sum_spec({0, 0, 8, 8}, {FeatureVector::zeros(8)});
  EXPECT_NO_THROW(evaluate_loss(ens, spec, Image(8, 8, 0.5)));
  try {
    loss_input_gradient(ens, spec, Image(8, 8, 0.5));
    FAIL();
  } catch (const CapabilityError& e) {
    EXPECT_NE(std::string(e.what()).find("opaque"), std::string::npos);
  }
}

TEST(Ensemble, RejectsEmptyAndDuplicates) {
  EXPECT_THROW(EncoderEnsemble({}), DomainError);
  const auto a = make_toy_encoder(1, 32, 8);
  EXPECT_THROW(EncoderEnsemble({a, a}), DomainError);
}

TEST(Ensemble, LossIsUnweightedSumOverPairs) {
  const auto a = make_toy_encoder(1, 32, 16), b = make_toy_encoder(2, 32, 16);
  const Image img = random_image(3, 40, 40);
  const auto spec = region_sum_spec({0, 0, 40, 40}, {FeatureVector(std::vector<double>(16, 1.0)),
                                                     FeatureVector(std::vector<double>(16, 1.0))});
  const double both = evaluate_loss(EncoderEnsemble({a, b}), spec, img).value;
  const double only_a = evaluate_loss(EncoderEnsemble({a}), spec, img).value;
  const double only_b = evaluate_loss(EncoderEnsemble({b}), spec, img).value;
  EXPECT_NEAR(both, only_a + only_b, 1e-12);
}

}  // namespace
