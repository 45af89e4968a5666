#include "grad_check.hpp"
#include "spectral_oracle.hpp"
#include "wfm/error.hpp"
#include "wfm/fourier_mixer.hpp"

#include <gtest/gtest.h>

using namespace wfm;

namespace {

FourierUnit linear_unit(int64_t c, FourierAxes axes) {
    FourierUnit u(FourierUnitOptions{c, axes, true, true});
    u->set_bypass(true);
    u->to(torch::kFloat64);
    return u;
}

}  // namespace

TEST(FourierUnit, IdentityWeightsRoundTrip) {
    torch::manual_seed(0);
    for (auto axes : {FourierAxes::Width, FourierAxes::Height, FourierAxes::Both}) {
        FourierUnit u(FourierUnitOptions{3, axes, true, true});
        u->set_bypass(true);
        {
            torch::NoGradGuard ng;
            u->weight.copy_(torch::eye(6).view({6, 6, 1, 1}));
        }
        for (int i = 0; i < 10; ++i) {
            auto x = torch::randn({1, 3, 8, 16});
            EXPECT_LT((u->forward(x) - x).abs().max().item<double>(), 1e-5);
        }
    }
}

TEST(FourierUnit, ConstantAlongAxisStaysConstant) {
    torch::manual_seed(1);
    auto u = linear_unit(2, FourierAxes::Width);
    auto x = torch::randn({1, 2, 4, 1}, torch::kFloat64).repeat({1, 1, 1, 8});
    auto y = u->forward(x);
    EXPECT_LT((y - y.select(3, 0).unsqueeze(3)).abs().max().item<double>(), 1e-12);
    // Only the DC bin is populated, so it is mixed by the real-real block.
    auto expect = torch::einsum("oc,nchw->nohw",
                                {u->weight.squeeze(-1).squeeze(-1).slice(0, 0, 2).slice(1, 0, 2), x});
    EXPECT_LT((y - expect).abs().max().item<double>(), 1e-12);
}

TEST(FourierUnit, LinearWhenBypassed) {
    torch::manual_seed(2);
    auto u = linear_unit(3, FourierAxes::Height);
    auto a = torch::randn({1, 3, 8, 6}, torch::kFloat64);
    auto b = torch::randn({1, 3, 8, 6}, torch::kFloat64);
    auto lhs = u->forward(2.5 * a - 0.5 * b);
    auto rhs = 2.5 * u->forward(a) - 0.5 * u->forward(b);
    EXPECT_LT((lhs - rhs).abs().max().item<double>(), 1e-5);
}

TEST(FourierUnit, MatchesLinearPlusConjugateLinearDecomposition) {
    torch::manual_seed(3);
    for (int trial = 0; trial < 5; ++trial) {
        auto u = linear_unit(3, FourierAxes::Width);
        auto x = torch::randn({2, 3, 2, 8}, torch::kFloat64);
        auto oracle = wfm::testing::decomposition_oracle(u->weight, x);
        EXPECT_LT((u->forward(x) - oracle).abs().max().item<double>(), 1e-10);
    }
}

TEST(FourierUnit, DeltaResponseMirrorsColumn) {
    torch::manual_seed(4);
    int hits = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto u = linear_unit(4, FourierAxes::Width);
        const int64_t c = 1 + trial % 6;
        hits += wfm::testing::mirrored_column_dominates(u, 4, 4, 16, c);
    }
    EXPECT_GE(hits, 45);
}

TEST(FourierUnit, WidthUnitKeepsRows) {
    torch::manual_seed(5);
    auto u = linear_unit(2, FourierAxes::Width);
    auto x = torch::zeros({1, 2, 6, 16}, torch::kFloat64);
    x[0][0][2][3] = 1.0;
    auto y = u->forward(x);
    auto other_rows = torch::cat({y.slice(2, 0, 2), y.slice(2, 3, 6)}, 2);
    EXPECT_LT(other_rows.abs().max().item<double>(), 1e-12);
}

TEST(FourierUnit, TwoDimensionalUnitMirrorsThroughOrigin) {
    torch::manual_seed(6);
    int hits = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto u = linear_unit(4, FourierAxes::Both);
        hits += wfm::testing::point_mirror_dominates(u, 4, 8, 16, 1 + trial % 3, 2 + trial % 5);
    }
    EXPECT_GE(hits, 45);
}

TEST(FourierUnit, GradientMatchesFiniteDifferences) {
    torch::manual_seed(7);
    FourierUnit u(FourierUnitOptions{4, FourierAxes::Width, true, true});
    u->to(torch::kFloat64);
    auto x = torch::randn({2, 4, 4, 6}, torch::kFloat64).requires_grad_();
    auto probe = torch::randn({2, 4, 4, 6}, torch::kFloat64);
    auto f = [&] { return (u->forward(x) * probe).sum(); };
    EXPECT_LT(wfm::testing::grad_check(f, x, 20, 1).max_rel_error, 1e-5);
    EXPECT_LT(wfm::testing::grad_check(f, u->weight, 20, 2).max_rel_error, 1e-5);
}

TEST(FourierUnit, RejectsNonFiniteInput) {
    FourierUnit u(FourierUnitOptions{1, FourierAxes::Width, true, true});
    auto x = torch::zeros({1, 1, 2, 4});
    x[0][0][0][0] = std::numeric_limits<float>::infinity();
    EXPECT_THROW(u->forward(x), NumericError);
}

TEST(TokenMixer, AllVariantsPreserveShape) {
    torch::manual_seed(8);
    for (auto v : {MixerVariant::WFM, MixerVariant::FMNoWindow, MixerVariant::WFM2D,
                   MixerVariant::FFC, MixerVariant::GatedOnly}) {
        TokenMixer m(TokenMixerOptions{16, v, 3});
        EXPECT_EQ(m->forward(torch::randn({1, 16, 16, 32})).sizes(),
                  (std::vector<int64_t>{1, 16, 16, 32}))
            << mixer_name(v);
    }
    TokenMixer m(TokenMixerOptions{64, MixerVariant::WFM, 3});
    EXPECT_EQ(m->forward(torch::randn({1, 64, 32, 64})).sizes(),
              (std::vector<int64_t>{1, 64, 32, 64}));
}

TEST(TokenMixer, WfmMatchesCompositionOracle) {
    torch::manual_seed(9);
    TokenMixer m(TokenMixerOptions{8, MixerVariant::WFM, 3});
    auto x = torch::randn({1, 8, 8, 16});
    auto r = m->reduce->forward(x);
    auto [left, right] = window_split(r, Axis::Width);
    auto [top, bottom] = window_split(r, Axis::Height);
    auto b3 = window_merge(m->unit_width->forward(left), m->unit_width->forward(right), Axis::Width);
    auto b4 = window_merge(m->unit_height->forward(top), m->unit_height->forward(bottom),
                           Axis::Height);
    auto expect = m->fuse->forward(
        torch::cat({m->unit_width->forward(r), m->unit_height->forward(r), b3, b4}, 1));
    EXPECT_TRUE(torch::allclose(m->forward(x), expect, 1e-6, 1e-6));
}

TEST(TokenMixer, WindowedBranchSharesFullMapUnit) {
    torch::manual_seed(10);
    TokenMixer m(TokenMixerOptions{8, MixerVariant::WFM, 3});
    m->unit_width->set_bypass(true);
    auto r = torch::randn({1, 4, 8, 16});
    auto full = m->unit_width->forward(r);
    auto win = windowed_unit(m->unit_width, r, Axis::Width);
    {
        torch::NoGradGuard ng;
        m->unit_width->weight.mul_(3.0);
    }
    // One parameter object: scaling it scales both branches identically.
    EXPECT_TRUE(torch::allclose(m->unit_width->forward(r), 3 * full, 1e-5, 1e-6));
    EXPECT_TRUE(torch::allclose(windowed_unit(m->unit_width, r, Axis::Width), 3 * win, 1e-5, 1e-6));
    EXPECT_FALSE(torch::allclose(full, win));
    EXPECT_EQ(m->named_parameters().size(),
              TokenMixer(TokenMixerOptions{8, MixerVariant::FMNoWindow, 3})->named_parameters().size());
}

TEST(TokenMixer, ParameterCountsMatchModulesAndOrdering) {
    for (int64_t c : {8, 16, 64}) {
        for (auto v : {MixerVariant::WFM, MixerVariant::FMNoWindow, MixerVariant::WFM2D,
                       MixerVariant::FFC, MixerVariant::GatedOnly}) {
            TokenMixerOptions o{c, v, 3};
            int64_t n = 0;
            for (const auto& p : TokenMixer(o)->parameters()) {
                n += p.numel();
            }
            EXPECT_EQ(n, token_mixer_parameter_count(o)) << mixer_name(v) << " C=" << c;
        }
        const auto count = [c](MixerVariant v) {
            return token_mixer_parameter_count(TokenMixerOptions{c, v, 3});
        };
        EXPECT_EQ(count(MixerVariant::WFM), count(MixerVariant::FMNoWindow));
        EXPECT_LT(count(MixerVariant::GatedOnly), count(MixerVariant::WFM));
        EXPECT_LT(count(MixerVariant::GatedOnly), count(MixerVariant::WFM2D));
    }
    EXPECT_EQ(fourier_unit_parameter_count(4), 4 * 16 + 2 * 4 + 2);
}

TEST(TokenMixer, RejectsBadConfigurations) {
    EXPECT_THROW(TokenMixer(TokenMixerOptions{7, MixerVariant::WFM, 3}), ConfigError);
    EXPECT_THROW(TokenMixer(TokenMixerOptions{6, MixerVariant::FFC, 3}), ConfigError);
    EXPECT_THROW(parse_mixer("transformer"), ConfigError);
    EXPECT_EQ(parse_mixer("wfm_2d"), MixerVariant::WFM2D);
}

TEST(TokenMixer, GradientMatchesFiniteDifferences) {
    torch::manual_seed(11);
    TokenMixer m(TokenMixerOptions{8, MixerVariant::WFM, 3});
    m->to(torch::kFloat64);
    auto x = torch::randn({1, 8, 4, 8}, torch::kFloat64).requires_grad_();
    auto probe = torch::randn({1, 8, 4, 8}, torch::kFloat64);
    auto f = [&] { return (m->forward(x) * probe).sum(); };
    EXPECT_LT(wfm::testing::grad_check(f, x, 20, 3).max_rel_error, 1e-5);
}
