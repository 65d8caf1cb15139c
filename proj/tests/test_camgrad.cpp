#include <splatcal/camgrad.hpp>

#include <gtest/gtest.h>

using namespace splatcal;

namespace {

struct Fixture {
    GaussianScene scene;
    Camera truth;
    Camera camera;
    Image target;
};

Fixture make_fixture(std::uint64_t seed, std::size_t n, Layout layout, int size = 48, double dt = 0.01,
                     double dtheta = 0.003, double dfov = 0.01) {
    Fixture f;
    f.scene = synth_scene(seed, n, layout);
    f.truth = synth_cameras(seed, 3, f.scene, Rig::orbit, size, size)[seed % 3];
    f.target = render(f.scene, f.truth);
    f.camera = perturb_camera(f.truth, seed + 1000, dt, dtheta, dfov);
    return f;
}

double rel_err(double a, double b, double scale) { return std::abs(a - b) / std::max(std::abs(b), scale); }

}  // namespace

TEST(BackwardDuv, ZeroAtOwnRender) {
    const Fixture f = make_fixture(1, 300, Layout::cloud);
    const RenderPass pass = render_pass(f.scene, f.camera);
    for (LossKind k : {LossKind::L1, LossKind::L2})
        for (const Vec2& g : backward_duv(pass, pass.image, k)) EXPECT_LT(g.norm(), 1e-12);
}

TEST(BackwardDuv, SingleSplatFiniteDifference) {
    Splat s;
    s.uv = Vec2(12.3, 9.8);
    s.cov << 9.0, 2.0, 2.0, 6.0;
    s.conic = s.cov.inverse();
    s.opacity = 0.8;
    s.color = Vec3(0.9, 0.4, 0.1);
    s.depth = 1.0;
    RenderSettings rs;
    rs.background = Vec3(0.1, 0.1, 0.3);
    Splat t = s;
    t.uv += Vec2(0.7, -0.4);
    const Image target = rasterize({t}, 24, 20, rs);

    const SplatList list{s};
    RenderPass pass;
    pass.splats = list;
    pass.image = rasterize(list, 24, 20, rs, &pass.trace);
    const Vec2 g = backward_duv(pass, target, LossKind::L2, rs)[0];
    for (int k = 0; k < 2; ++k) {
        SplatList p = list, m = list;
        p[0].uv[k] += 1e-3;
        m[0].uv[k] -= 1e-3;
        const double fd = (loss(rasterize_traced(p, pass.trace, rs), target, LossKind::L2) -
                           loss(rasterize_traced(m, pass.trace, rs), target, LossKind::L2)) /
                          2e-3;
        EXPECT_LT(rel_err(g[k], fd, 1e-12), 1e-4) << "component " << k;
    }
    // The image-taking overload rebuilds the same trace.
    const Vec2 g2 = backward_duv(list, pass.image, target, LossKind::L2, rs)[0];
    EXPECT_EQ(g, g2);
}

TEST(BackwardDuv, SignPullsTowardTarget) {
    Splat s;
    s.uv = Vec2(16, 16);
    s.cov = Mat2::Identity() * 9.0;
    s.conic = s.cov.inverse();
    s.opacity = 0.9;
    s.color = Vec3(1, 1, 1);
    Splat t = s;
    t.uv.x() += 1.0;
    const Image target = rasterize({t}, 32, 32);
    for (LossKind k : {LossKind::L1, LossKind::L2}) {
        const SplatList l{s};
        RenderPass pass{l, {}, {}};
        pass.image = rasterize(l, 32, 32, {}, &pass.trace);
        const Vec2 g = backward_duv(pass, target, k)[0];
        EXPECT_LT(g.x(), 0.0);  // descent moves u to the right
        EXPECT_NEAR(g.y(), 0.0, 1e-9 * std::abs(g.x()));
    }
}

TEST(BackwardSplats, ColorAndOpacityMatchFiniteDifferences) {
    const Fixture f = make_fixture(2, 60, Layout::cloud, 32);
    const RenderPass pass = render_pass(f.scene, f.camera);
    const auto dl = loss_gradient(pass.image, f.target, LossKind::L2);
    const auto grads = backward_splats(pass.splats, pass.trace, dl);
    double scale = 0.0;
    for (const auto& g : grads) scale = std::max({scale, std::abs(g.opacity), g.color.cwiseAbs().maxCoeff()});
    for (std::size_t i = 0; i < pass.splats.size(); i += 5) {
        auto eval = [&](auto&& edit) {
            SplatList l = pass.splats;
            edit(l[i]);
            return loss(rasterize_traced(l, pass.trace), f.target, LossKind::L2);
        };
        const double h = 1e-6;
        const double fd_op = (eval([&](Splat& s) { s.opacity += h; }) - eval([&](Splat& s) { s.opacity -= h; })) / (2 * h);
        if (!std::any_of(pass.trace.bands.begin(), pass.trace.bands.end(), [&](const auto& b) {
                return std::any_of(b.begin(), b.end(), [&](const auto& e) { return e.splat == i && e.clamped; });
            })) {
            EXPECT_NEAR(grads[i].opacity, fd_op, 1e-6 * scale);
        }
        for (int c = 0; c < 3; ++c) {
            const double fd = (eval([&](Splat& s) { s.color[c] += h; }) - eval([&](Splat& s) { s.color[c] -= h; })) / (2 * h);
            EXPECT_NEAR(grads[i].color[c], fd, 1e-6 * scale);
        }
        for (int k = 0; k < 3; ++k) {
            auto bump = [&](double d) {
                return [&, d](Splat& s) {
                    if (k == 0) s.conic(0, 0) += d;
                    if (k == 1) s.conic(0, 1) = s.conic(1, 0) = s.conic(0, 1) + d;
                    if (k == 2) s.conic(1, 1) += d;
                };
            };
            const double fd = (eval(bump(1e-7)) - eval(bump(-1e-7))) / 2e-7;
            EXPECT_NEAR(grads[i].conic[k], fd, 1e-5 * std::max(scale, std::abs(fd)));
        }
    }
}

TEST(GradCamera, ZeroAtOptimum) {
    const Fixture f = make_fixture(3, 300, Layout::textured_wall);
    for (LossKind k : {LossKind::L1, LossKind::L2}) {
        const CameraGrad g = grad_camera(f.scene, f.truth, f.target, k);
        EXPECT_LT(g.as_vector().cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(GradCamera, EmptyFrustumThrows) {
    const Fixture f = make_fixture(3, 50, Layout::cloud);
    Camera away = f.truth;
    away.t.z() = -100.0;
    EXPECT_THROW(grad_camera(f.scene, away, f.target, LossKind::L2), EmptyFrustum);
    EXPECT_THROW(grad_camera(f.scene, f.truth, Image(3, 3), LossKind::L2), DimensionMismatch);
}

TEST(GradCamera, MatchesFrozenCovarianceDifferences) {
    for (std::uint64_t seed = 10; seed < 14; ++seed) {
        const Fixture f = make_fixture(seed, 100 + 150 * (seed % 3), seed % 2 ? Layout::cloud : Layout::textured_wall);
        const CameraGrad g = grad_camera(f.scene, f.camera, f.target, LossKind::L2);
        const CameraGrad fd = finite_diff_grad(f.scene, f.camera, f.target, LossKind::L2, FiniteDiffMode::frozen_cov,
                                               FiniteDiffSteps::for_extent(f.scene.extent));
        const auto a = g.as_vector(), b = fd.as_vector();
        const double cut = 1e-8 * a.cwiseAbs().maxCoeff();
        for (int k = 0; k < 9; ++k) {
            if (std::abs(a[k]) < cut) continue;
            EXPECT_LT(std::abs(a[k] - b[k]) / std::abs(a[k]), 1e-3) << "seed " << seed << " component " << k;
        }
    }
}

TEST(GradCamera, L1MatchesFrozenCovarianceDifferences) {
    const Fixture f = make_fixture(21, 200, Layout::textured_wall);
    const CameraGrad g = grad_camera(f.scene, f.camera, f.target, LossKind::L1);
    const CameraGrad fd = finite_diff_grad(f.scene, f.camera, f.target, LossKind::L1, FiniteDiffMode::frozen_cov,
                                           FiniteDiffSteps::for_extent(f.scene.extent));
    const auto a = g.as_vector(), b = fd.as_vector();
    // The L1 loss is piecewise smooth; differences straddling a sign change blur the result.
    EXPECT_LT((a - b).norm(), 2e-2 * a.norm());
}

TEST(GradCamera, SmallGaussiansMatchFullDifferences) {
    Fixture f = make_fixture(5, 200, Layout::cloud);
    for (auto& g : f.scene.gaussians) g.scale *= 1e-4;  // sigma / z well below 1e-3
    f.target = render(f.scene, f.truth);
    const CameraGrad g = grad_camera(f.scene, f.camera, f.target, LossKind::L2);
    const CameraGrad full = finite_diff_grad(f.scene, f.camera, f.target, LossKind::L2, FiniteDiffMode::full,
                                             FiniteDiffSteps::for_extent(f.scene.extent));
    const CameraGrad frozen = finite_diff_grad(f.scene, f.camera, f.target, LossKind::L2, FiniteDiffMode::frozen_cov,
                                               FiniteDiffSteps::for_extent(f.scene.extent));
    const auto a = g.as_vector(), b = full.as_vector(), c = frozen.as_vector();
    const double cut = 1e-8 * a.cwiseAbs().maxCoeff();
    for (int k = 0; k < 9; ++k) {
        if (std::abs(a[k]) < cut) continue;
        EXPECT_LT(std::abs(a[k] - b[k]) / std::abs(a[k]), 5e-2) << "component " << k;
        EXPECT_LT(std::abs(b[k] - c[k]) / std::abs(b[k]), 5e-2) << "component " << k;
    }
}

TEST(GradCamera, DescentProperty) {
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Fixture f = make_fixture(100 + seed, 120, seed % 2 ? Layout::cloud : Layout::textured_wall, 32);
        const double l0 = loss(render(f.scene, f.camera), f.target, LossKind::L2);
        const CameraVector g = grad_camera(f.scene, f.camera, f.target, LossKind::L2).as_vector();
        double lr = 1e-2 / g.cwiseAbs().maxCoeff();
        bool decreased = false;
        for (int k = 0; k < 40 && !decreased; ++k, lr *= 0.5) {
            const Camera c = camera_from_vector(camera_to_vector(f.camera) - lr * g, f.camera);
            decreased = loss(render(f.scene, c), f.target, LossKind::L2) <= l0;
        }
        ok += decreased;
    }
    EXPECT_EQ(ok, 50);
}

TEST(FiniteDiff, QuadraticStubIsExact) {
    CameraVector a, x;
    for (int k = 0; k < 9; ++k) {
        a[k] = 0.5 + k;
        x[k] = 0.1 * k - 0.3;
    }
    auto f = [&](const CameraVector& v) { return (a.array() * v.array().square()).sum() + 3.0 * v.sum(); };
    const CameraVector g = central_difference(f, x, CameraVector::Constant(1e-3));
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(g[k], 2 * a[k] * x[k] + 3.0, 1e-9);
    EXPECT_THROW(central_difference(f, x, CameraVector::Zero()), DomainError);
}

TEST(FiniteDiff, SecondOrderConvergence) {
    CameraVector x;
    for (int k = 0; k < 9; ++k) x[k] = 0.2 + 0.1 * k;
    auto f = [](const CameraVector& v) { return v.array().sin().sum(); };
    const CameraVector exact = x.array().cos();
    const CameraVector e1 = central_difference(f, x, CameraVector::Constant(0.02)) - exact;
    const CameraVector e2 = central_difference(f, x, CameraVector::Constant(0.01)) - exact;
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(e1[k] / e2[k], 4.0, 0.01);
}

TEST(FiniteDiff, RenderedLossConvergesAtSecondOrder) {
    const Fixture f = make_fixture(7, 200, Layout::textured_wall);
    const RenderPass nominal = render_pass(f.scene, f.camera);
    const CameraVector g = grad_camera(nominal, f.scene, f.camera, f.target, LossKind::L2).as_vector();
    auto loss_at = [&](const CameraVector& v) {
        return traced_loss(f.scene, nominal, camera_from_vector(v, f.camera), f.target, LossKind::L2,
                           FiniteDiffMode::frozen_cov);
    };
    // Translation along the optical axis: large steps so truncation dominates rounding.
    const CameraVector x = camera_to_vector(f.camera);
    auto err = [&](double h) {
        CameraVector p = x, m = x;
        p[2] += h;
        m[2] -= h;
        return (loss_at(p) - loss_at(m)) / (2 * h) - g[2];
    };
    const double ratio = err(0.02) / err(0.01);
    EXPECT_GT(ratio, 3.0);
    EXPECT_LT(ratio, 5.0);
}

TEST(CameraVector, RoundTrip) {
    const Fixture f = make_fixture(8, 10, Layout::cloud);
    EXPECT_EQ(camera_from_vector(camera_to_vector(f.camera), f.camera), f.camera);
    CameraGrad g;
    g.d_t = Vec3(1, 2, 3);
    g.d_q = Vec4(4, 5, 6, 7);
    g.d_fov = Vec2(8, 9);
    const CameraGrad h = CameraGrad::from_vector(g.as_vector());
    EXPECT_EQ(h.as_vector(), g.as_vector());
    EXPECT_TRUE(g.all_finite());
}
