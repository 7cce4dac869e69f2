#include "ugttt/oracles.hpp"
#include "ugttt/propcheck.hpp"
#include "ugttt/regularizer.hpp"

#include <gtest/gtest.h>

using namespace ugttt;

namespace {

PolicyArchitecture arch(std::size_t k, std::size_t r, AdapterInit init = AdapterInit::Independent) {
  PolicyArchitecture a;
  a.vocab_size = 5;
  a.feature_dim = 24;
  a.tracked_layers = 2;
  a.adapter_rank = r;
  a.ensemble_size = k;
  a.adapter_init_std = 0.3;
  a.init = init;
  return a;
}

}  // namespace

TEST(NnmLoss, IsNegativeMeanNuclearNorm) {
  const auto ens = init_ensemble(arch(3, 2), 1);
  double expect = 0.0;
  for (std::size_t l = 0; l < ens.layers(); ++l) expect += nuclear_norm(stack_blocks(ens, l));
  EXPECT_NEAR(nnm_loss(ens), -expect / 2.0, 1e-13);
  EXPECT_LE(nnm_loss(ens), 0.0);
}

TEST(StackBlocks, RoundTrip) {
  const auto ens = init_ensemble(arch(3, 2), 1);
  const Matrix w = stack_blocks(ens, 1);
  EXPECT_EQ(w.rows(), 6);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(unstack_block(w, k, 2), ens.adapter(k).a[1]);
}

TEST(NnmGradients, MatchFiniteDifferences) {
  auto ens = init_ensemble(arch(3, 2), 5);
  const double coef = 0.075;
  const auto g = nnm_gradients(ens, coef);
  EXPECT_FALSE(g.nonunique);
  for (std::size_t k = 0; k < ens.size(); ++k)
    for (std::size_t l = 0; l < ens.layers(); ++l) {
      Matrix& a = ens.adapter(k).a[l];
      std::vector<double> x(a.data(), a.data() + a.size());
      const auto fd = oracle::finite_difference_gradient(
          [&](const std::vector<double>& v) {
            const Matrix saved = a;
            std::copy(v.begin(), v.end(), a.data());
            const double f = coef * nnm_loss(ens);
            a = saved;
            return f;
          },
          x);
      for (Eigen::Index i = 0; i < a.size(); ++i) EXPECT_NEAR(g.per_adapter[k].a[l].data()[i], fd[i], 1e-7);
      EXPECT_EQ(g.per_adapter[k].b[l].cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(NnmGradients, ZeroCoefficientIsZero) {
  const auto ens = init_ensemble(arch(2, 2), 5);
  const auto g = nnm_gradients(ens, 0.0);
  for (const auto& t : g.per_adapter) EXPECT_EQ(t.max_abs(), 0.0);
  EXPECT_THROW(nnm_gradients(ens, -1.0), std::invalid_argument);
}

TEST(NnmGradients, TiedAdaptersAreRankDeficient) {
  const auto ens = init_ensemble(arch(3, 2, AdapterInit::Tied), 5);
  EXPECT_TRUE(nnm_gradients(ens, 0.1).nonunique);
}

TEST(BlockCosine, TiedIsOne) {
  EXPECT_NEAR(mean_pairwise_block_cosine(init_ensemble(arch(3, 2, AdapterInit::Tied), 2)), 1.0, 1e-14);
  EXPECT_EQ(mean_pairwise_block_cosine(init_ensemble(arch(1, 2), 2)), 1.0);
}

TEST(ProjectedAscent, ReachesOrthogonalMaximum) {
  const auto out = propcheck::projected_nuclear_ascent(3, 2, 8, 1.5, 7);
  EXPECT_GE(out.nuclear_ratio, 0.999);
  EXPECT_LE(out.max_overlap, 1e-3);
  EXPECT_LE(out.max_sv_error, 0.01);
}

// Property: gradient ascent on the nuclear norm never shrinks it for small
// steps, from any random start.
TEST(NnmGradients, SmallAscentStepIncreasesNorm) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto ens = init_ensemble(arch(3, 2), seed);
    const double before = nnm_loss(ens);
    const auto g = nnm_gradients(ens, 1.0);
    for (std::size_t k = 0; k < ens.size(); ++k)
      for (std::size_t l = 0; l < ens.layers(); ++l) ens.adapter(k).a[l] -= 1e-4 * g.per_adapter[k].a[l];
    EXPECT_LT(nnm_loss(ens), before);
  }
}
