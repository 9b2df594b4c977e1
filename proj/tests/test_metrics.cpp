#include <gtest/gtest.h>

#include "support.hpp"

using namespace lama;
using namespace lama::testing;

namespace {

Image filled(std::size_t n, double v) { return Image(square_grid(n), Vec(n * n, v)); }

}  // namespace

TEST(Psnr, KnownMse) {
  EXPECT_NEAR(psnr(filled(16, 0.1), filled(16, 0.0), 1.0), 20.0, 1e-12);
  EXPECT_NEAR(psnr(filled(16, 0.2), filled(16, 0.0), 2.0), 20.0, 1e-12);
}

TEST(Psnr, IdenticalIsInfinite) {
  std::mt19937_64 rng(1);
  const Image a = random_image(rng, square_grid(16));
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  const MetricReport r = compare(a, a);
  EXPECT_TRUE(r.identical());
  EXPECT_EQ(r.to_json()["psnr_db"], "inf");
  EXPECT_NEAR(r.ssim, 1.0, 1e-12);
}

TEST(Psnr, MatchesDirectFormula) {
  std::mt19937_64 rng(2);
  const Image ref = random_image(rng, square_grid(20), 0.0, 3.0);
  const Image test = random_image(rng, square_grid(20), 0.0, 3.0);
  double mse = 0.0;
  for (std::size_t i = 0; i < ref.values.size(); ++i) mse += std::pow(test.values[i] - ref.values[i], 2);
  mse /= static_cast<double>(ref.values.size());
  const auto [lo, hi] = std::minmax_element(ref.values.begin(), ref.values.end());
  EXPECT_NEAR(psnr(test, ref), 10.0 * std::log10((*hi - *lo) * (*hi - *lo) / mse), 1e-12);
}

TEST(Psnr, ConstantReferenceUsesUnitRange) {
  EXPECT_NEAR(psnr(filled(8, 1.1), filled(8, 1.0)), 20.0, 1e-9);
}

TEST(Psnr, InvariantToCommonOffset) {
  std::mt19937_64 rng(3);
  Image ref = random_image(rng, square_grid(16)), test = random_image(rng, square_grid(16));
  const double before = psnr(test, ref);
  for (double& v : ref.values) v += 7.0;
  for (double& v : test.values) v += 7.0;
  EXPECT_NEAR(psnr(test, ref), before, 1e-9);
}

TEST(Psnr, RejectsShapeMismatchAndBadRange) {
  EXPECT_THROW(psnr(filled(8, 0.0), filled(9, 0.0)), InputError);
  EXPECT_THROW(psnr(filled(8, 0.0), filled(8, 1.0), 0.0), ParameterError);
}

TEST(Ssim, SelfSimilarityIsOne) {
  std::mt19937_64 rng(4);
  const Image a = random_image(rng, square_grid(24));
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, SymmetricForFixedRange) {
  std::mt19937_64 rng(5);
  const Image a = random_image(rng, square_grid(24)), b = random_image(rng, square_grid(24));
  EXPECT_NEAR(ssim(a, b, 2.0), ssim(b, a, 2.0), 1e-14);
  EXPECT_LT(ssim(a, b, 2.0), 1.0);
}

TEST(Ssim, InvertedPatternIsAnticorrelated) {
  Image a = filled(16, 0.0), b = filled(16, 0.0);
  for (std::size_t j = 0; j < 16; ++j)
    for (std::size_t i = 0; i < 16; ++i) {
      a.at(i, j) = (i + j) % 2 == 0 ? 1.0 : 0.0;
      b.at(i, j) = 1.0 - a.at(i, j);
    }
  EXPECT_LT(ssim(b, a), 0.0);
}

TEST(Ssim, ConstantImagesClosedForm) {
  // Zero variance leaves the luminance term (2ab + c1) / (a^2 + b^2 + c1).
  const double a = 0.7, b = 0.5, c1 = 0.01 * 0.01;
  EXPECT_NEAR(ssim(filled(12, a), filled(12, b), 1.0), (2 * a * b + c1) / (a * a + b * b + c1), 1e-12);
}

TEST(Ssim, RejectsImagesSmallerThanWindow) { EXPECT_THROW(ssim(filled(8, 0.0), filled(8, 0.0)), InputError); }

TEST(Loss, PerfectReconstructionIsZero) {
  const auto geo = parallel_geometry(16, 10);
  std::mt19937_64 rng(6);
  const Image truth = random_image(rng, geo.grid, 0.0, 1.0);
  EXPECT_EQ(evaluate_loss(DualState{truth, forward_project(truth, geo)}, truth, geo), 0.0);
}

TEST(Loss, TermByTerm) {
  const auto geo = parallel_geometry(16, 10);
  std::mt19937_64 rng(7);
  const Image truth = random_image(rng, geo.grid, 0.0, 1.0);
  const DualState rec{random_image(rng, geo.grid, 0.0, 1.0), random_full_sinogram(rng, geo)};
  const Sinogram ax = forward_project(truth, geo);
  double ex = 0.0, ez = 0.0;
  for (std::size_t i = 0; i < truth.values.size(); ++i) ex += std::pow(rec.x.values[i] - truth.values[i], 2);
  for (std::size_t i = 0; i < ax.values.size(); ++i) ez += std::pow(rec.z.values[i] - ax.values[i], 2);
  EXPECT_NEAR(evaluate_loss(rec, truth, geo, 0.0), ex + ez, 1e-10 * (ex + ez));
  const double s = ssim(rec.x, truth);
  EXPECT_NEAR(evaluate_loss(rec, truth, geo, 0.5), ex + ez + 0.5 * (1.0 - s), 1e-10 * (ex + ez));
}

TEST(Loss, RejectsBadInputs) {
  const auto geo = parallel_geometry(16, 10);
  const Image truth = filled(16, 0.5);
  const DualState rec{truth, forward_project(truth, geo)};
  EXPECT_THROW(evaluate_loss(rec, truth, geo, -1.0), ParameterError);
  const DualState sparse{truth, subsample_views(rec.z, ViewMask::uniform(10, 5))};
  EXPECT_THROW(evaluate_loss(sparse, truth, geo), InputError);
}
