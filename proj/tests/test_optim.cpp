#include <splatcal/optim.hpp>

#include <gtest/gtest.h>

using namespace splatcal;

TEST(Adam, FirstStepIsLearningRateTimesSign) {
    Rng rng(51);
    AdamState st(6);
    std::vector<double> p(6, 0.0), g(6), lr(6);
    for (std::size_t i = 0; i < 6; ++i) {
        g[i] = rng.normal() * std::pow(10.0, rng.uniform(-3, 3));
        lr[i] = rng.uniform(1e-4, 1e-1);
    }
    ASSERT_TRUE(adam_step(st, p, g, lr));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(p[i], -lr[i] * (g[i] > 0 ? 1 : -1), 1e-6 * lr[i] + 1e-12);
    EXPECT_EQ(st.step, 1);
}

TEST(Adam, ZeroGradientLeavesParams) {
    AdamState st(3);
    std::vector<double> p{1.0, -2.0, 3.0};
    const std::vector<double> g(3, 0.0), lr(3, 0.1);
    for (int k = 0; k < 100; ++k) adam_step(st, p, g, lr);
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(Adam, ScalarQuadratic) {
    AdamState st(1);
    std::vector<double> theta{1.0};
    const std::vector<double> lr{0.1};
    for (int k = 0; k < 200; ++k) {
        const std::vector<double> g{2.0 * theta[0]};
        adam_step(st, theta, g, lr);
    }
    EXPECT_LT(std::abs(theta[0]), 1e-2);
}

TEST(Adam, MatchesScalarRecurrence) {
    AdamState st(1, {0.8, 0.99, 1e-6});
    std::vector<double> p{0.5};
    const std::vector<double> lr{0.01};
    double m = 0, v = 0, x = 0.5;
    for (int n = 1; n <= 50; ++n) {
        const double g = std::sin(n * 0.3);
        adam_step(st, p, std::vector<double>{g}, lr);
        m = 0.8 * m + 0.2 * g;
        v = 0.99 * v + 0.01 * g * g;
        x -= 0.01 * (m / (1 - std::pow(0.8, n))) / (std::sqrt(v / (1 - std::pow(0.99, n))) + 1e-6);
        EXPECT_NEAR(p[0], x, 1e-15);
    }
}

TEST(Adam, NonFiniteGradientSkips) {
    AdamState st(2);
    std::vector<double> p{1.0, 2.0};
    const std::vector<double> lr(2, 0.1);
    EXPECT_FALSE(adam_step(st, p, std::vector<double>{1.0, std::nan("")}, lr));
    EXPECT_FALSE(adam_step(st, p, std::vector<double>{INFINITY, 0.0}, lr));
    EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(st.skipped, 2);
    EXPECT_EQ(st.step, 0);
    EXPECT_THROW(adam_step(st, p, std::vector<double>{1.0}, lr), DimensionMismatch);
}

TEST(Adam, Deterministic) {
    auto run = [] {
        AdamState st(4);
        std::vector<double> p{0.1, 0.2, 0.3, 0.4};
        const std::vector<double> lr(4, 0.05);
        for (int n = 0; n < 100; ++n) {
            std::vector<double> g(4);
            for (int i = 0; i < 4; ++i) g[i] = std::cos(n * 0.7 + i) * p[i];
            adam_step(st, p, g, lr);
        }
        return p;
    };
    EXPECT_EQ(run(), run());
}

TEST(Project, ValidParamsUnchanged) {
    Camera c;
    c.q = UnitQuaternion::from_axis_angle(Vec3(1, 1, 0), 0.4);
    c.fov_x = 1.0;
    c.fov_y = 0.8;
    Camera d = c;
    EXPECT_FALSE(project_camera_params(d));
    EXPECT_LT((d.q.coeffs() - c.q.coeffs()).norm(), 1e-12);
    EXPECT_EQ(d.fov_x, 1.0);
}

TEST(Project, ScaledQuaternionSameRotation) {
    Camera c;
    c.q = UnitQuaternion::from_axis_angle(Vec3(0.3, -1, 2), 1.1);
    const Mat3 r = c.rotation();
    c.q = {2 * c.q.w, 2 * c.q.x, 2 * c.q.y, 2 * c.q.z};
    project_camera_params(c);
    EXPECT_NEAR(c.q.norm(), 1.0, 1e-15);
    EXPECT_LT((c.rotation() - r).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Project, FovClamped) {
    Camera c;
    c.fov_x = kPi + 0.1;
    c.fov_y = -0.2;
    EXPECT_TRUE(project_camera_params(c));
    EXPECT_EQ(c.fov_x, kPi - 1e-3);
    EXPECT_EQ(c.fov_y, 1e-3);
}

TEST(Project, ZeroQuaternionThrows) {
    Camera c;
    c.q = {1e-10, 0, 0, 0};
    EXPECT_THROW(project_camera_params(c), ZeroQuaternion);
}

TEST(CameraOptimizer, FirstStepMovesEveryParameterByItsRate) {
    CameraLearningRates lr;
    CameraOptimizer opt(lr);
    Camera c;
    c.fov_x = c.fov_y = 1.0;
    CameraGrad g;
    g.d_t = Vec3(1, -1, 2);
    g.d_q = Vec4(0, 0, 0, 0);
    g.d_fov = Vec2(-3, 4);
    opt.step(c, g);
    EXPECT_NEAR(c.t.x(), -lr.translation, 1e-9);
    EXPECT_NEAR(c.t.y(), lr.translation, 1e-9);
    EXPECT_NEAR(c.fov_x, 1.0 + lr.fov, 1e-9);
    EXPECT_NEAR(c.fov_y, 1.0 - lr.fov, 1e-9);
}

TEST(CameraOptimizer, FovFrozenWhenDisabled) {
    CameraOptimizer opt(CameraLearningRates{}, {}, false);
    Camera c;
    c.fov_x = 1.2;
    c.fov_y = 0.9;
    CameraGrad g;
    g.d_t = Vec3(1, 1, 1);
    g.d_fov = Vec2(5, 5);
    for (int k = 0; k < 10; ++k) opt.step(c, g);
    EXPECT_EQ(c.fov_x, 1.2);
    EXPECT_EQ(c.fov_y, 0.9);
}

TEST(CameraOptimizer, SetFrameResetsAdam) {
    CameraOptimizer opt(CameraLearningRates{});
    Camera c;
    CameraGrad g;
    g.d_t = Vec3(1, 1, 1);
    opt.step(c, g);
    EXPECT_EQ(opt.adam().step, 1);
    opt.set_frame(ReparamFrame{});
    EXPECT_EQ(opt.adam().step, 0);
    EXPECT_TRUE(opt.frame().has_value());
    EXPECT_EQ(opt.abc(), Vec3::Zero());
}

TEST(CameraOptimizer, NonFiniteGradientSkipsStep) {
    CameraOptimizer opt(CameraLearningRates{});
    Camera c;
    const Camera before = c;
    CameraGrad g;
    g.d_t = Vec3(std::nan(""), 0, 0);
    EXPECT_FALSE(opt.step(c, g));
    EXPECT_EQ(c, before);
}

TEST(LearningRates, ExtentScaling) {
    EXPECT_DOUBLE_EQ(CameraLearningRates::for_extent(4.0).translation, 4e-3);
    EXPECT_DOUBLE_EQ(CameraLearningRates::for_extent(4.0).quaternion, 1e-4);
    EXPECT_DOUBLE_EQ(ModelLearningRates::for_extent(2.0).position, 3.2e-4);
    EXPECT_DOUBLE_EQ(ModelLearningRates::for_extent(2.0).opacity, 5e-2);
}
