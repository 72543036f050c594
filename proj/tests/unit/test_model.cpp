#include <cmath>

#include <gtest/gtest.h>

#include "nmt/model.hpp"
#include "nmt/rank_one.hpp"

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
}  // namespace

TEST(Model, ValidationRejectsBadParams) {
    auto p = params(3, 4, 5, 1, 1, 0);
    EXPECT_NO_THROW(p.validate());
    p.n1 = 0;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = params(3, 4, 5, -1, 1, 0);
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = params(3, 4, 5, 1, 1, 0);
    p.sigma_T2 = 0.0;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = params(3, 4, 5, 1, 1, 0);
    p.signals = Vec3Signals{Vec::Ones(3), Vec::Ones(4).normalized(), Vec::Ones(5).normalized()};
    EXPECT_THROW(p.validate(), InvalidArgument);
    p.signals->x = Vec::Ones(2).normalized();
    EXPECT_THROW(p.validate(), DimensionMismatch);
}

TEST(Model, NoiselessLimitIsRankOne) {
    auto p = params(6, 5, 4, 2.0, 1.5, 9);
    p.sigma_T2 = p.sigma_M2 = 1e-30;
    const auto s = gen_nested(p);
    const auto& [x, y, z] = s.signals;
    const Tensor3 expect = outer3(3.0 * x, y, z);
    EXPECT_LT(frobenius_norm(s.T - expect), 1e-10);
    EXPECT_LT((s.M - 1.5 * x * y.transpose()).norm(), 1e-10);
}

TEST(Model, PureNoiseMoments) {
    auto p = params(30, 40, 50, 0.0, 0.0, 5);
    p.sigma_T2 = 2.0;
    const auto s = gen_nested(p);
    const double nT = static_cast<double>(p.n_T());
    const double N = static_cast<double>(s.T.size());
    double m = 0.0;
    for (double v : s.T.data()) m += v * std::sqrt(nT);
    m /= N;
    double var = 0.0;
    for (double v : s.T.data()) var += (v * std::sqrt(nT) - m) * (v * std::sqrt(nT) - m);
    var /= N - 1;
    const double se_mean = std::sqrt(p.sigma_T2 / N);
    const double se_var = p.sigma_T2 * std::sqrt(2.0 / (N - 1));
    EXPECT_LT(std::abs(m), 3 * se_mean);
    EXPECT_LT(std::abs(var - p.sigma_T2), 3 * se_var);
}

TEST(Model, DeterministicForSeed) {
    const auto p = params(7, 6, 5, 1.0, 2.0, 77);
    const auto a = gen_nested(p), b = gen_nested(p);
    EXPECT_EQ(a.T, b.T);
    EXPECT_EQ(a.M, b.M);
    auto q = p;
    q.seed = 78;
    EXPECT_FALSE(gen_nested(q).T == a.T);
}

TEST(Model, OracleModeKeepsRawNoise) {
    const auto p = params(5, 4, 3, 1.2, 0.7, 3);
    const auto s = gen_nested(p, GenMode::oracle);
    ASSERT_TRUE(s.noise.has_value());
    const auto& [x, y, z] = s.signals;
    const Mat M = 0.7 * x * y.transpose() + s.noise->Z / std::sqrt(9.0);
    EXPECT_LT((M - s.M).cwiseAbs().maxCoeff(), 1e-14);
    double diff = 0.0;
    for (Eigen::Index i = 0; i < 5; ++i)
        for (Eigen::Index j = 0; j < 4; ++j)
            for (Eigen::Index k = 0; k < 3; ++k)
                diff = std::max(diff, std::abs(s.T(i, j, k) - (1.2 * M(i, j) * z[k] + s.noise->W(i, j, k) / std::sqrt(12.0))));
    EXPECT_LT(diff, 1e-14);
    EXPECT_FALSE(gen_nested(p).noise.has_value());
    EXPECT_EQ(gen_nested(p).T, s.T);
}

TEST(Model, SignalsAreUnitAndSuppliedOnesAreKept) {
    auto p = params(8, 9, 10, 1, 1, 4);
    const auto s = resolve_signals(p);
    EXPECT_NEAR(s.x.norm(), 1.0, 1e-12);
    EXPECT_NEAR(s.y.norm(), 1.0, 1e-12);
    EXPECT_NEAR(s.z.norm(), 1.0, 1e-12);
    p.signals = Vec3Signals{Vec::Unit(8, 2), Vec::Unit(9, 0), Vec::Unit(10, 9)};
    EXPECT_EQ(gen_nested(p).signals.x, Vec::Unit(8, 2));
}

TEST(Model, MultiViewDelegatesToNested) {
    const auto mv = make_multiview(6, 8, 3, 2.0, 1.5, 11);
    const auto np = to_nested(mv);
    EXPECT_NEAR(np.beta_M, 2.0, 1e-12);
    EXPECT_NEAR(np.beta_T, 1.5, 1e-12);
    EXPECT_LT((np.signals->x * 2.0 - mv.mu).norm(), 1e-12);
    EXPECT_LT((np.signals->y - mv.ybar()).norm(), 1e-12);
    EXPECT_EQ(gen_multiview(mv), gen_nested(np).T);
}

TEST(Model, MultiViewZeroNormsAllowed) {
    const auto mv = make_multiview(4, 6, 2, 0.0, 0.0, 1);
    const auto np = to_nested(mv);
    EXPECT_EQ(np.beta_M, 0.0);
    EXPECT_EQ(np.beta_T, 0.0);
    EXPECT_NO_THROW(np.validate());
    EXPECT_NO_THROW(static_cast<void>(gen_multiview(mv)));
}

TEST(Model, SingleViewIsClassicalMatrixModel) {
    MultiViewParams mv = make_multiview(5, 7, 1, 1.3, 1.0, 21);
    mv.h = Vec::Ones(1);
    const auto s = gen_multiview_sample(mv, GenMode::oracle);
    const Mat expect = mv.mu * mv.ybar().transpose() + s.noise->Z / std::sqrt(12.0) + s.noise->W.slice(0) / std::sqrt(13.0);
    EXPECT_LT((s.T.slice(0) - expect).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Model, WithinClassMeansFollowViewWeights) {
    // Average over samples of each class: X(:, i, k) has mean y_i h_k mu / sqrt(n).
    const Eigen::Index p = 3, n = 4000, m = 2;
    MultiViewParams mv = make_multiview(p, n, m, 1.0, 1.0, 5);
    mv.h << 0.5, 2.0;
    const Tensor3 X = gen_multiview(mv);
    for (Eigen::Index k = 0; k < m; ++k) {
        Vec mean = Vec::Zero(p);
        for (Eigen::Index i = 0; i < n; ++i) mean += mv.labels[static_cast<std::size_t>(i)] * X.slice(k).col(i);
        mean /= static_cast<double>(n);
        const Vec expect = mv.h[k] * mv.mu / std::sqrt(static_cast<double>(n));
        // per-entry noise sd ~ sqrt(h^2/(p+n) + 1/(p+n+m)) / sqrt(n)
        const double sd = std::sqrt(mv.h[k] * mv.h[k] / (p + n) + 1.0 / (p + n + m)) / std::sqrt(static_cast<double>(n));
        for (Eigen::Index a = 0; a < p; ++a) EXPECT_NEAR(mean[a], expect[a], 4 * sd);
    }
}

TEST(Model, MultiViewValidation) {
    auto mv = make_multiview(3, 4, 2, 1.0, 1.0, 0);
    mv.labels[0] = 0;
    EXPECT_THROW(mv.validate(), InvalidArgument);
    mv = make_multiview(3, 4, 2, 1.0, 1.0, 0);
    mv.h[0] = -1.0;
    EXPECT_THROW(mv.validate(), InvalidArgument);
    mv = make_multiview(3, 4, 2, 1.0, 1.0, 0);
    mv.mu = Vec::Ones(2);
    EXPECT_THROW(mv.validate(), DimensionMismatch);
}

TEST(Model, ConfigRoundTrip) {
    auto p = params(3, 2, 2, 1.25, 0.5, 99);
    p.signals = resolve_signals(p);
    const auto q = nested_from_config(KeyValueConfig::parse_string(to_config(p).canonical()));
    EXPECT_EQ(q.n1, 3);
    EXPECT_EQ(q.beta_T, 1.25);
    EXPECT_EQ(q.seed, 99U);
    EXPECT_EQ(q.signals->x, p.signals->x);
    const auto mv = make_multiview(3, 5, 2, 1.0, 2.0, 4);
    const auto mv2 = multiview_from_config(KeyValueConfig::parse_string(to_config(mv).canonical()));
    EXPECT_EQ(mv2.mu, mv.mu);
    EXPECT_EQ(mv2.labels, mv.labels);
    EXPECT_THROW(static_cast<void>(nested_from_config(KeyValueConfig::parse_string("n1=0\nn2=1\nn3=1\nbeta_T=0\nbeta_M=0\n"))),
                 InvalidArgument);
}

TEST(Model, PureNoiseSpectralNormStaysBounded) {
    std::vector<double> lambdas;
    for (Eigen::Index base : {50, 100, 200}) {
        const auto s = gen_nested(params(base, base, base, 0, 0, 8));
        lambdas.push_back(power_iteration(s.T).lambda);
    }
    for (double l : lambdas) {
        EXPECT_GT(l, 0.5);
        EXPECT_LT(l, 3.0);
    }
    EXPECT_LT(lambdas[2], 1.2 * lambdas[0]);
}
