#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "nmt/spectral_lab.hpp"
#include "oracles.hpp"

using namespace nmt;

namespace {

NestedParams params(Eigen::Index n1, Eigen::Index n2, Eigen::Index n3, double bT, double bM, std::uint64_t seed) {
    NestedParams p;
    p.n1 = n1;
    p.n2 = n2;
    p.n3 = n3;
    p.beta_T = bT;
    p.beta_M = bM;
    p.seed = seed;
    return p;
}

RankOneFit random_point(const Dims& d, std::uint64_t seed) {
    Rng r(seed);
    RankOneFit f;
    f.u = r.unit_vector(d[0]);
    f.v = r.unit_vector(d[1]);
    f.w = r.unit_vector(d[2]);
    return f;
}

}  // namespace

TEST(Phi, NoiselessRankOneSpectrum) {
    Rng r(5);
    const Vec x = r.unit_vector(6), y = r.unit_vector(5), z = r.unit_vector(4);
    const double lambda = 2.5;
    const Tensor3 t = outer3(lambda * x, y, z);
    const auto fit = power_iteration(t);
    const auto ev = sorted_eigenvalues(build_phi(t, fit));
    ASSERT_EQ(ev.size(), 15U);
    EXPECT_NEAR(ev.front(), -lambda, 1e-10);
    EXPECT_NEAR(ev[1], -lambda, 1e-10);
    EXPECT_NEAR(ev.back(), 2 * lambda, 1e-10);
    for (std::size_t i = 2; i + 1 < ev.size(); ++i) EXPECT_NEAR(ev[i], 0.0, 1e-10);
}

TEST(Phi, ScalarTensorByHand) {
    Tensor3 t({1, 1, 1});
    t(0, 0, 0) = 3.0;
    RankOneFit f;
    f.u = f.v = f.w = Vec::Ones(1);
    const auto ev = sorted_eigenvalues(build_phi(t, f));
    EXPECT_NEAR(ev[0], -3.0, 1e-14);
    EXPECT_NEAR(ev[1], -3.0, 1e-14);
    EXPECT_NEAR(ev[2], 6.0, 1e-14);
}

TEST(Phi, StructureAndBlocks) {
    const Tensor3 t = oracle::random_tensor(7, 5, 4, 3);
    const auto f = random_point(t.dims(), 4);
    const auto B = build_phi(t, f);
    EXPECT_EQ(B.asymmetry(), 0.0);
    EXPECT_EQ(B.S.trace(), 0.0);
    for (int b = 1; b <= 3; ++b) EXPECT_EQ(B.block(b, b).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT(oracle::max_abs(B.block(1, 2) - oracle::contract(t, 3, f.w)), 1e-12);
    EXPECT_LT(oracle::max_abs(B.block(1, 3) - oracle::contract(t, 2, f.v)), 1e-12);
    EXPECT_LT(oracle::max_abs(B.block(2, 3) - oracle::contract(t, 1, f.u)), 1e-12);
    EXPECT_THROW(static_cast<void>(assemble_blocks(Mat::Zero(2, 3), Mat::Zero(3, 3), Mat::Zero(3, 3))),
                 DimensionMismatch);
    RankOneFit bad = f;
    bad.u = Vec::Ones(3);
    EXPECT_THROW(static_cast<void>(build_phi(t, bad)), DimensionMismatch);
}

TEST(Phi, SpikeEigenpairsAtCriticalPoint) {
    const auto s = gen_nested(params(30, 25, 20, 3.0, 2.0, 11));
    const auto fit = power_iteration(s.T);
    ASSERT_TRUE(fit.converged);
    const auto res = spike_residuals(build_phi(s.T, fit), fit);
    for (double r : res) EXPECT_LT(r, 1e-9);
}

TEST(Decomposition, PhiEqualsHPlusL) {
    const auto p = params(30, 25, 20, 2.0, 1.5, 7);
    const auto s = gen_nested(p, GenMode::oracle);
    // Identity holds at any (u, v, w), not only at the fit.
    for (const auto& f : {power_iteration(s.T), random_point(p.dims(), 99)}) {
        const Mat diff = build_phi(s.T, f).S - build_H(p, s, f).S - build_L(p, s, f).S;
        EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Decomposition, NoTensorSignalLeavesPureNoise) {
    const auto p = params(12, 10, 8, 0.0, 1.0, 3);
    const auto s = gen_nested(p, GenMode::oracle);
    const auto f = random_point(p.dims(), 1);
    const auto H = build_H(p, s, f);
    const double rT = 1.0 / std::sqrt(30.0);
    EXPECT_LT(oracle::max_abs(H.block(1, 2) - rT * oracle::contract(s.noise->W, 3, f.w)), 1e-12);
    EXPECT_EQ(build_L(p, s, f).S.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decomposition, LowRankRemainder) {
    const auto p = params(30, 25, 20, 2.0, 1.5, 8);
    const auto s = gen_nested(p, GenMode::oracle);
    const auto L = build_L(p, s, power_iteration(s.T));
    Eigen::JacobiSVD<Mat> svd(L.S);
    const Vec sv = svd.singularValues();
    const auto rank = (sv.array() > 1e-10 * sv[0]).count();
    EXPECT_LE(rank, 6);
    EXPECT_GE(rank, 2);
    EXPECT_LT(L.asymmetry(), 1e-15);
}

TEST(Decomposition, RequiresOracleSample) {
    const auto p = params(5, 4, 3, 1.0, 1.0, 0);
    const auto s = gen_nested(p);
    const auto f = random_point(p.dims(), 0);
    EXPECT_THROW(static_cast<void>(build_H(p, s, f)), InvalidArgument);
    EXPECT_THROW(static_cast<void>(build_L(p, s, f)), InvalidArgument);
}

TEST(EmpiricalSpectrum, BulkAndOutliersPartition) {
    const auto p = params(40, 30, 30, 3.0, 3.0, 21);
    const auto s = gen_nested(p);
    const auto fit = power_iteration(s.T);
    const auto B = build_phi(s.T, fit);
    const auto lp = LimitParams::from_dims(40, 30, 30, 3.0, 3.0);
    const auto support = support_edges(lp, default_scan_range(lp));
    const auto es = eig_spectrum(B, support);
    std::size_t total = es.bulk.size();
    for (const auto& o : es.outliers) total += static_cast<std::size_t>(o.multiplicity);
    EXPECT_EQ(total, static_cast<std::size_t>(B.n_T()));
    ASSERT_GE(es.outliers.size(), 2U);
    EXPECT_NEAR(es.outliers.back().value, 2 * fit.lambda, 1e-8);
    EXPECT_TRUE(std::is_sorted(es.eigenvalues.begin(), es.eigenvalues.end()));
    EXPECT_EQ(eig_spectrum(B).bulk.size(), static_cast<std::size_t>(B.n_T()));

    std::ostringstream os;
    write_csv(es, os);
    const auto text = os.str();
    EXPECT_EQ(text.substr(0, 25), "index,eigenvalue,outlier\n");
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), es.eigenvalues.size() + 1);
}

TEST(EmpiricalSpectrum, MergesRepeatedOutliers) {
    BlockMatrix B = assemble_blocks(Mat::Zero(1, 1), Mat::Zero(1, 1), Mat::Zero(1, 1));
    B.S = Vec(Eigen::Vector3d(-5.0, -5.0, 0.1)).asDiagonal();
    const auto es = eig_spectrum(B, {{-1.0, 1.0}});
    ASSERT_EQ(es.outliers.size(), 1U);
    EXPECT_EQ(es.outliers[0].multiplicity, 2);
    EXPECT_EQ(es.bulk.size(), 1U);
}

TEST(Kolmogorov, AgainstUniformCurve) {
    SpectrumCurve c;
    c.grid = linspace(0.0, 1.0, 101);
    c.density.assign(101, 1.0);
    c.valid.assign(101, true);
    std::vector<double> quantiles;
    for (int i = 0; i < 200; ++i) quantiles.push_back((i + 0.5) / 200.0);
    EXPECT_NEAR(kolmogorov_distance(quantiles, c), 0.5 / 200, 1e-12);
    EXPECT_NEAR(kolmogorov_distance(std::vector<double>(50, 0.5), c), 0.5, 1e-12);
    EXPECT_NEAR(kolmogorov_distance({2.0, 3.0}, c), 1.0, 1e-12);
    EXPECT_THROW(static_cast<void>(kolmogorov_distance({}, c)), InvalidArgument);
}
