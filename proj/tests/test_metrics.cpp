#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "phaseforge/metrics.hpp"
#include "phaseforge/rng.hpp"

using namespace phaseforge;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.0,
                    double hi = 1.0) {
  Tensor t({h, w});
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("nrmse identities") {
  Tensor x = random_image(16, 16, 1, 0.1, 1.0);
  Tensor zero({16, 16});
  CHECK(nrmse(x, x) == 0.0);
  CHECK(nrmse(x, zero) == doctest::Approx(1.0).epsilon(1e-14));

  Tensor x2 = x;
  for (std::size_t i = 0; i < x2.size(); ++i) x2[i] *= 2.0;
  CHECK(nrmse(x, x2) == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(nrmse(zero, x), contract_error);
}

TEST_CASE("psnr closed forms") {
  Tensor x = random_image(32, 32, 2);
  CHECK(std::isinf(psnr(x, x, 1.0)));

  Tensor shifted = x;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.1;
  CHECK(psnr(x, shifted, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(x, shifted, 2.0) - psnr(x, shifted, 1.0) ==
        doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-12));
}

TEST_CASE("ssim identities and closed form on constant images") {
  Tensor x = random_image(32, 32, 3);
  CHECK(ssim(x, x, 1.0) == doctest::Approx(1.0).epsilon(1e-14));

  Tensor a({16, 16}), b({16, 16});
  a.fill(0.5);
  b.fill(0.7);
  const double c1 = 0.01 * 0.01;
  const double expected = (2.0 * 0.5 * 0.7 + c1) / (0.5 * 0.5 + 0.7 * 0.7 + c1);
  CHECK(ssim(a, b, 1.0) == doctest::Approx(expected).epsilon(1e-12));

  Tensor y = random_image(32, 32, 4);
  CHECK(ssim(x, y, 1.0) == doctest::Approx(ssim(y, x, 1.0)).epsilon(1e-13));

  SUBCASE("affine rescaling invariance") {
    Tensor xs = x, ys = y;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      xs[i] *= 3.0;
      ys[i] *= 3.0;
    }
    CHECK(ssim(xs, ys, 3.0) == doctest::Approx(ssim(x, y, 1.0)).epsilon(1e-12));
  }

  SUBCASE("window contract") {
    CHECK_THROWS_AS(ssim(x, y, 1.0, 8), contract_error);
    CHECK_THROWS_AS(ssim(x, y, 1.0, 33), contract_error);
  }
}

TEST_CASE("psnr and nrmse order candidate estimates oppositely") {
  Tensor gt = random_image(24, 24, 5, 0.2, 1.0);
  Rng noise(6);
  std::vector<Tensor> candidates;
  for (double level : {0.01, 0.05, 0.1, 0.2}) {
    Tensor est = gt;
    for (std::size_t i = 0; i < est.size(); ++i) est[i] += level * noise.normal();
    candidates.push_back(est);
  }
  for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
    CHECK(nrmse(gt, candidates[i]) < nrmse(gt, candidates[i + 1]));
    CHECK(psnr(gt, candidates[i], 1.0) > psnr(gt, candidates[i + 1], 1.0));
  }
}

TEST_CASE("feature statistics") {
  auto extractor = random_conv_extractor(77, 16);

  SUBCASE("identical images give zero covariance") {
    std::vector<Tensor> images(5, random_image(32, 32, 7));
    const FeatureStats st = embed_features(images, extractor);
    CHECK(st.n == 5);
    CHECK(st.cov.norm() == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("deterministic for a fixed extractor seed") {
    std::vector<Tensor> images{random_image(32, 32, 8), random_image(32, 32, 9)};
    const FeatureStats a = embed_features(images, random_conv_extractor(5, 8));
    const FeatureStats b = embed_features(images, random_conv_extractor(5, 8));
    CHECK((a.mean - b.mean).norm() == 0.0);
    CHECK((a.cov - b.cov).norm() == 0.0);
  }

  SUBCASE("recovers moments of injected standard-normal features") {
    // Bypass the conv extractor: images hold the feature vectors directly.
    const int d = 8;
    auto identity_extract = [d](const Tensor& img) {
      Eigen::VectorXd f(d);
      for (int i = 0; i < d; ++i) f[i] = img[static_cast<std::size_t>(i)];
      return f;
    };
    Rng rng(10);
    std::vector<Tensor> images;
    for (int n = 0; n < 1000; ++n) {
      Tensor t({8, 1});
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
      images.push_back(t);
    }
    const FeatureStats st = embed_features(images, identity_extract);
    for (int i = 0; i < d; ++i) {
      CHECK(std::abs(st.mean[i]) < 0.1);
      CHECK(std::abs(st.cov(i, i) - 1.0) < 0.1);
    }
  }

  SUBCASE("empty set is rejected") {
    CHECK_THROWS_AS(embed_features({}, extractor), contract_error);
  }
}

TEST_CASE("frechet distance closed forms") {
  auto stats1d = [](double mu, double var) {
    FeatureStats st;
    st.mean = Eigen::VectorXd::Constant(1, mu);
    st.cov = Eigen::MatrixXd::Constant(1, 1, var);
    st.n = 100;
    return st;
  };

  CHECK(frechet_distance(stats1d(0.0, 1.0), stats1d(0.0, 1.0)) <= 1e-8);
  // (mu1-mu2)^2 + (sd1-sd2)^2
  CHECK(frechet_distance(stats1d(0.0, 1.0), stats1d(2.0, 1.0)) ==
        doctest::Approx(4.0).epsilon(1e-10));
  CHECK(frechet_distance(stats1d(0.0, 1.0), stats1d(0.0, 4.0)) ==
        doctest::Approx(1.0).epsilon(1e-10));

  SUBCASE("symmetric and nonnegative in higher dimensions") {
    Rng rng(11);
    auto random_stats = [&](int d) {
      FeatureStats st;
      st.mean = Eigen::VectorXd::Zero(d);
      Eigen::MatrixXd a(d, d);
      for (int i = 0; i < d; ++i) {
        st.mean[i] = rng.normal();
        for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
      }
      st.cov = a * a.transpose() / d + 0.1 * Eigen::MatrixXd::Identity(d, d);
      st.n = 50;
      return st;
    };
    for (int trial = 0; trial < 5; ++trial) {
      const FeatureStats a = random_stats(6), b = random_stats(6);
      const double ab = frechet_distance(a, b);
      const double ba = frechet_distance(b, a);
      CHECK(ab >= 0.0);
      CHECK(ab == doctest::Approx(ba).epsilon(1e-8));
      CHECK(frechet_distance(a, a) <= 1e-8);
    }
  }

  SUBCASE("dimension mismatch is rejected") {
    FeatureStats a = stats1d(0.0, 1.0);
    FeatureStats b;
    b.mean = Eigen::VectorXd::Zero(2);
    b.cov = Eigen::MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(frechet_distance(a, b), contract_error);
  }
}
