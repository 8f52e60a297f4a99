#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "ccdn/eval.hpp"
#include "ccdn/gradsuite.hpp"
#include "ccdn/train.hpp"

namespace ccdn {
namespace {

std::vector<Point> random_points(Rng& rng, std::size_t n) {
    std::vector<Point> p;
    for (std::size_t i = 0; i < n; ++i) p.push_back({uniform(rng, -1, 2), uniform(rng, -1, 2)});
    return p;
}

std::vector<double> random_nmes(Rng& rng, std::size_t n) {
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(uniform(rng, 0.0, 0.2));
    return v;
}

TEST(Nme, ExactMatchIsZero) {
    Rng rng = make_stream(1, "nme");
    const auto p = random_points(rng, 68);
    EXPECT_EQ(nme(p, p, 0.3), 0.0);
}

TEST(Nme, OneLandmarkDisplacedByTheNormDistance) {
    Rng rng = make_stream(2, "nme");
    const auto gt = random_points(rng, 68);
    auto pred = gt;
    const double d = 0.37;
    pred[17].x += d * 0.6;
    pred[17].y -= d * 0.8;
    EXPECT_NEAR(nme(pred, gt, d), 1.0 / 68.0, 1e-15);
    EXPECT_NEAR(1.0 / 68.0, 0.01471, 5e-6);
}

TEST(Nme, MatchesLoopOracle) {
    Rng rng = make_stream(3, "nme");
    for (int t = 0; t < 200; ++t) {
        const std::size_t l = 1 + static_cast<std::size_t>(uniform(rng, 0, 70));
        const auto a = random_points(rng, l), b = random_points(rng, l);
        const double d = uniform(rng, 0.05, 2.0);
        double s = 0.0;
        for (std::size_t i = 0; i < l; ++i) {
            const double dx = a[i].x - b[i].x, dy = a[i].y - b[i].y;
            s += std::sqrt(dx * dx + dy * dy) / d;
        }
        EXPECT_NEAR(nme(a, b, d), s / static_cast<double>(l), 1e-12);
    }
}

TEST(Nme, TranslationInvariantAndInverseInNorm) {
    Rng rng = make_stream(4, "nme");
    for (int t = 0; t < 100; ++t) {
        auto a = random_points(rng, 12), b = random_points(rng, 12);
        const double d = uniform(rng, 0.1, 1.0), k = uniform(rng, 0.5, 4.0);
        const double base = nme(a, b, d);
        EXPECT_NEAR(nme(a, b, k * d), base / k, 1e-12);
        const double tx = uniform(rng, -3, 3), ty = uniform(rng, -3, 3);
        for (auto& p : a) p = {p.x + tx, p.y + ty};
        for (auto& p : b) p = {p.x + tx, p.y + ty};
        EXPECT_NEAR(nme(a, b, d), base, 1e-12);
    }
}

TEST(Nme, NonPositiveNormIsAnError) {
    const std::vector<Point> p{{0, 0}, {1, 1}};
    EXPECT_THROW(nme(p, p, 0.0), DegenerateInputError);
    EXPECT_THROW(nme(p, p, -1.0), DegenerateInputError);
    EXPECT_THROW(nme(p, {{0, 0}}, 1.0), ShapeError);
}

TEST(FailureRate, Examples) {
    EXPECT_EQ(failure_rate(std::vector<double>(10, 0.0)), 0.0);
    EXPECT_EQ(failure_rate({0.05, 0.12}), 0.5);
    EXPECT_THROW(failure_rate({}), DegenerateInputError);
}

TEST(FailureRate, ReportsExactFractionsOnAFiveHundredSevenImageList) {
    const std::size_t n = 507;
    const auto failures = static_cast<std::size_t>(std::ceil(n * 0.0112));
    EXPECT_EQ(failures, 6u);
    std::vector<double> v(n, 0.03);
    for (std::size_t i = 0; i < failures; ++i) v[i * 80] = 0.15;
    const double r = failure_rate(v);
    EXPECT_EQ(r, 6.0 / 507.0);
    EXPECT_NEAR(100.0 * r, 1.183, 5e-4);
    // 1.12% of 507 images is 5.68 images, which no list can reproduce exactly.
    EXPECT_NE(r, 0.0112);
    EXPECT_NE(5.0 / 507.0, 0.0112);
}

TEST(FailureRate, BoundaryIsStrict) {
    EXPECT_EQ(failure_rate({0.10, 0.10, 0.1000001}), 1.0 / 3.0);
}

TEST(Ced, SingleZeroImageIsConstantOne) {
    for (const auto& p : ced_curve({0.0}, 0.1, 11)) EXPECT_EQ(p.fraction, 1.0);
}

TEST(Ced, CountsOnAThreePointGrid) {
    const auto c = ced_curve({0.02, 0.04}, 0.06, 3);
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c[0].threshold, 0.0);
    EXPECT_DOUBLE_EQ(c[1].threshold, 0.03);
    EXPECT_DOUBLE_EQ(c[2].threshold, 0.06);
    EXPECT_EQ(c[0].fraction, 0.0);
    EXPECT_EQ(c[1].fraction, 0.5);
    EXPECT_EQ(c[2].fraction, 1.0);
}

TEST(Ced, MatchesSortAndCountOracleAndIsMonotone) {
    Rng rng = make_stream(5, "ced");
    for (int t = 0; t < 200; ++t) {
        auto v = random_nmes(rng, 1 + static_cast<std::size_t>(uniform(rng, 0, 300)));
        const auto c = ced_curve(v, 0.25, 26);
        std::sort(v.begin(), v.end());
        for (std::size_t k = 0; k < c.size(); ++k) {
            std::size_t n = 0;
            while (n < v.size() && v[n] <= c[k].threshold) ++n;
            EXPECT_EQ(c[k].fraction, static_cast<double>(n) / static_cast<double>(v.size()));
            if (k) EXPECT_GE(c[k].fraction, c[k - 1].fraction);
        }
        EXPECT_EQ(c.back().fraction, 1.0);
    }
}

TEST(Ced, TooFewStepsIsAnError) {
    EXPECT_THROW(ced_curve({0.1}, 0.1, 1), ContractError);
}

// Strict failure and non-strict CED are exact complements at a grid point, ties included.
TEST(Summary, FailureIsOneMinusCedAtTenPercent) {
    Rng rng = make_stream(6, "sum");
    for (int t = 0; t < 200; ++t) {
        auto v = random_nmes(rng, 50);
        v.push_back(0.10);
        const EvalResult r = summarize(v, 0.10, 21);
        EXPECT_EQ(r.ced.back().threshold, 0.10);
        EXPECT_NEAR(r.failure_rate, 1.0 - r.ced.back().fraction, 1e-15);
    }
}

TEST(Summary, OffGridThresholdDiffers) {
    // With a threshold that is not on the CED grid the two views differ by the images in between.
    const std::vector<double> v{0.05, 0.095, 0.2};
    const EvalResult r = summarize(v, 0.09, 10);
    EXPECT_EQ(r.failure_rate, 1.0 / 3.0);
    EXPECT_NEAR(1.0 - r.ced.back().fraction, 2.0 / 3.0, 1e-15);
}

TEST(Summary, MeanAndCopies) {
    const EvalResult r = summarize({0.1, 0.2, 0.3});
    EXPECT_NEAR(r.mean_nme, 0.2, 1e-15);
    EXPECT_EQ(r.nme.size(), 3u);
    EXPECT_EQ(r.ced.size(), 21u);
}

// ---------------------------------------------------------------------------------------------

TEST(ActivationMap, MinMaxOfConstantIsZero) {
    std::vector<double> v(20, 3.5);
    min_max_normalize(v);
    for (double x : v) EXPECT_EQ(x, 0.0);
}

TEST(ActivationMap, ResizeOfConstantPlaneIsConstant) {
    const std::vector<double> plane(16, 0.7);
    for (double x : resize_plane(plane.data(), 4, 4, 32)) EXPECT_NEAR(x, 0.7, 1e-15);
}

class TrainedTinyModel : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        SynthSpec s;
        s.count = 64;
        s.landmarks = 3;
        s.image_size = 32;
        s.seed = 3;
        data_ = new Dataset(synth_generate(s));
        model_ = new ModelParams(init_model(detail::tiny_model_config(), 1));
        TrainOptions o;
        o.optim.epochs = 2;
        o.optim.lr = 1e-3;
        train(*model_, *data_, {}, o);
    }
    static void TearDownTestSuite() {
        delete data_;
        delete model_;
    }
    static Dataset* data_;
    static ModelParams* model_;
};
Dataset* TrainedTinyModel::data_ = nullptr;
ModelParams* TrainedTinyModel::model_ = nullptr;

TEST_F(TrainedTinyModel, DimsAndRange) {
    for (Stage st : {Stage::last, Stage::penultimate, Stage::fused}) {
        const Tensor a = activation_map(*model_, (*data_)[0].image, st, 0);
        EXPECT_EQ(a.dims(), (Shape{1, 32, 32}));
        const auto [lo, hi] = std::minmax_element(a.values().begin(), a.values().end());
        EXPECT_EQ(*lo, 0.0);
        EXPECT_EQ(*hi, 1.0);
    }
}

TEST_F(TrainedTinyModel, ExcitationsGiveDifferentMaps) {
    for (Stage st : {Stage::last, Stage::penultimate, Stage::fused}) {
        const Tensor a = activation_map(*model_, (*data_)[1].image, st, 0);
        const Tensor b = activation_map(*model_, (*data_)[1].image, st, 1);
        double diff = 0.0;
        for (std::size_t i = 0; i < a.numel(); ++i) diff += std::abs(a[i] - b[i]);
        EXPECT_GT(diff / static_cast<double>(a.numel()), 0.0);
    }
}

TEST_F(TrainedTinyModel, BadIndexIsAnError) {
    EXPECT_THROW(activation_map(*model_, (*data_)[0].image, Stage::last, 2), ContractError);
}

TEST(ActivationMapContract, UntrainedModelIsRejected) {
    ModelParams m = init_model(detail::tiny_model_config(), 1);
    const Tensor img = Tensor::zeros({1, 32, 32});
    EXPECT_THROW(activation_map(m, img, Stage::fused, 0), ContractError);
}

TEST(ActivationMapContract, BaselineHasNoExcitations) {
    ModelConfig c = detail::tiny_model_config();
    c.variant = Variant::baseline;
    ModelParams m = init_model(c, 1);
    m.epochs_trained = 1;
    EXPECT_THROW(activation_map(m, Tensor::zeros({1, 32, 32}), Stage::fused, 0), ContractError);
}

}  // namespace
}  // namespace ccdn
