#include "ugttt/linalg.hpp"
#include "ugttt/oracles.hpp"
#include "ugttt/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace ugttt;

TEST(LogSoftmax, MatchesDirectFormula) {
  const std::vector<double> logits{1.0, -2.0, 0.5, 3.0};
  const auto lp = log_softmax(logits);
  double z = 0.0;
  for (double x : logits) z += std::exp(x);
  for (std::size_t i = 0; i < logits.size(); ++i) EXPECT_NEAR(lp[i], logits[i] - std::log(z), 1e-14);
}

TEST(LogSoftmax, StableForHugeLogits) {
  const auto lp = log_softmax(std::vector<double>{1000.0, 1000.0});
  EXPECT_NEAR(lp[0], -std::numbers::ln2, 1e-14);
  EXPECT_NEAR(lp[1], -std::numbers::ln2, 1e-14);
}

TEST(LogSoftmax, RejectsBadInput) {
  EXPECT_THROW(log_softmax(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(log_softmax(std::vector<double>{1.0, NAN}), std::invalid_argument);
}

TEST(Distribution, ValidatesProbabilities) {
  EXPECT_NO_THROW(Distribution({0.25, 0.75}));
  EXPECT_THROW(Distribution({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(Distribution({-0.1, 1.1}), std::invalid_argument);
  EXPECT_THROW(Distribution(std::vector<double>{}), std::invalid_argument);
}

TEST(Entropy, UniformAndPointMass) {
  EXPECT_NEAR(entropy(Distribution({0.25, 0.25, 0.25, 0.25}), LogBase::Two), 2.0, 1e-14);
  EXPECT_EQ(entropy(Distribution({1.0, 0.0})), 0.0);
  EXPECT_NEAR(entropy(Distribution({0.5, 0.5})), std::numbers::ln2, 1e-15);
}

TEST(Svd, ReconstructsAndSortsDescending) {
  Rng rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(5, 7);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  const auto s = svd(m);
  ASSERT_EQ(s.singular_values.size(), 5);
  for (Eigen::Index i = 1; i < s.singular_values.size(); ++i)
    EXPECT_GE(s.singular_values[i - 1], s.singular_values[i]);
  const Matrix back = s.left_vectors * s.singular_values.asDiagonal() * s.right_vectors.transpose();
  EXPECT_LT((back - m).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NuclearNorm, DiagonalIsSumOfAbs) {
  Matrix m = Matrix::Zero(3, 3);
  m(0, 0) = 2.0;
  m(1, 1) = -3.0;
  m(2, 2) = 0.5;
  EXPECT_NEAR(nuclear_norm(m), 5.5, 1e-13);
}

TEST(NuclearNorm, SubgradientMatchesFiniteDifferences) {
  Rng rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(4, 6);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  const auto sg = nuclear_norm_subgradient(m);
  EXPECT_FALSE(sg.nonunique);
  std::vector<double> x(m.data(), m.data() + m.size());
  const auto fd = oracle::finite_difference_gradient(
      [&](const std::vector<double>& v) { return nuclear_norm(Eigen::Map<const Matrix>(v.data(), 4, 6)); }, x);
  for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_NEAR(sg.gradient.data()[i], fd[i], 1e-4);
}

TEST(NuclearNorm, RankDeficientFlagsNonunique) {
  Matrix m = Matrix::Zero(3, 4);
  m(0, 0) = 1.0;
  m(1, 1) = 2.0;
  const auto sg = nuclear_norm_subgradient(m);
  EXPECT_TRUE(sg.nonunique);
  EXPECT_NEAR(sg.gradient(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(sg.gradient(1, 1), 1.0, 1e-14);
  EXPECT_NEAR(sg.gradient.cwiseAbs().sum(), 2.0, 1e-13);
}

TEST(NuclearNorm, RejectsNonFinite) {
  Matrix m = Matrix::Ones(2, 2);
  m(0, 1) = NAN;
  EXPECT_THROW(nuclear_norm(m), std::invalid_argument);
}

TEST(DeriveSeed, DependsOnEveryPathElement) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(2, {2, 3}));
  EXPECT_NE(derive_seed(1, {0}), derive_seed(1, {}));
}
