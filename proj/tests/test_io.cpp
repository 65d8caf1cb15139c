#include <splatcal/io.hpp>

#include <gtest/gtest.h>

#include <cstring>

using namespace splatcal;

namespace {

const char* kImages1 = "1 1 0 0 0 0.5 -0.25 3 1 view_000.pfm\n\n";

template <class E, class F>
E catch_as(F&& f) {
    try {
        f();
    } catch (const E& e) {
        return e;
    }
    ADD_FAILURE() << "expected exception";
    throw std::logic_error("unreachable");
}

}  // namespace

TEST(Colmap, PinholeFov) {
    const auto rec = parse_colmap_text("1 PINHOLE 800 600 400 400 400 300\n", kImages1);
    ASSERT_EQ(rec.cameras.size(), 1u);
    EXPECT_NEAR(rec.cameras.at(1).fov_x(), kPi / 2, 1e-15);
    const Camera c = to_camera(rec.images.at(1), rec.cameras.at(1));
    EXPECT_NEAR(c.fov_x, kPi / 2, 1e-15);
    EXPECT_EQ(c.t, Vec3(0.5, -0.25, 3));
    EXPECT_EQ(rec.images.at(1).name, "view_000.pfm");
}

TEST(Colmap, SimplePinhole) {
    const auto rec = parse_colmap_text("# comment\n7 SIMPLE_PINHOLE 64 32 50 32 16\n",
                                       "3 1 0 0 0 0 0 1 7 a b.pfm\n1 2 3 4\n");
    EXPECT_EQ(rec.cameras.at(7).fx, 50.0);
    EXPECT_EQ(rec.cameras.at(7).fy, 50.0);
    EXPECT_EQ(rec.images.at(3).name, "a b.pfm");
}

TEST(Colmap, UnsupportedModelNamed) {
    const auto e = catch_as<UnsupportedCameraModel>(
        [] { parse_colmap_text("1 RADIAL 800 600 400 400 300 0.1 0.01\n", kImages1); });
    EXPECT_EQ(e.model(), "RADIAL");
}

TEST(Colmap, ParseErrorCarriesLine) {
    const auto e = catch_as<ParseError>(
        [] { parse_colmap_text("# header\n\n1 PINHOLE 800 six 400 400 400 300\n", kImages1); });
    EXPECT_EQ(e.line(), 3);
    const auto f = catch_as<ParseError>(
        [] { parse_colmap_text("1 PINHOLE 8 6 4 4 4 3\n", "# x\n1 1 0 0 0 0 0 1 1\n"); });
    EXPECT_EQ(f.line(), 2);
}

TEST(Colmap, DanglingCameraReference) {
    EXPECT_THROW(parse_colmap_text("1 PINHOLE 8 6 4 4 4 3\n", "1 1 0 0 0 0 0 1 2 x.pfm\n\n"), DanglingCameraRef);
}

TEST(Colmap, EmptyReconstructionWritesHeadersOnly) {
    const ColmapText t = write_colmap_text({});
    for (const std::string* s : {&t.cameras, &t.images})
        for (const auto line : detail::split_lines(*s))
            if (!line.empty()) {
                EXPECT_EQ(line.front(), '#');
            }
    EXPECT_EQ(parse_colmap_text(t.cameras, t.images), ColmapReconstruction{});
}

TEST(Colmap, RoundTrip) {
    Rng rng(71);
    for (int trial = 0; trial < 50; ++trial) {
        ColmapReconstruction rec;
        for (int k = 0; k < 5; ++k) {
            const int cid = 10 + 3 * k, iid = 100 - 7 * k;
            rec.cameras[cid] = ColmapCamera{cid, k % 2 ? "SIMPLE_PINHOLE" : "PINHOLE", 64 + k, 48 + k,
                                            rng.uniform(10, 500), rng.uniform(10, 500), rng.uniform(0, 64),
                                            rng.uniform(0, 48)};
            if (k % 2) rec.cameras[cid].fy = rec.cameras[cid].fx;
            rec.images[iid] = ColmapImage{
                iid, UnitQuaternion::from_coeffs(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal())),
                Vec3(rng.normal(), rng.normal(), rng.normal()) * 1e3, cid, "img_" + std::to_string(k) + ".pfm"};
        }
        const ColmapText t = write_colmap_text(rec);
        const auto back = parse_colmap_text(t.cameras, t.images);
        ASSERT_EQ(back.cameras.size(), rec.cameras.size());
        ASSERT_EQ(back.images.size(), rec.images.size());
        for (const auto& [id, c] : rec.cameras) {
            const auto& b = back.cameras.at(id);
            EXPECT_EQ(b.model, c.model);
            for (auto [x, y] : {std::pair{b.fx, c.fx}, {b.fy, c.fy}, {b.cx, c.cx}, {b.cy, c.cy}})
                EXPECT_NEAR(x, y, 1e-9 * std::max(1.0, std::abs(y)));
        }
        for (const auto& [id, im] : rec.images) {
            const auto& b = back.images.at(id);
            EXPECT_EQ(b.camera_id, im.camera_id);
            EXPECT_EQ(b.name, im.name);
            EXPECT_LT((b.q.coeffs() - im.q.coeffs()).cwiseAbs().maxCoeff(), 1e-9);
            EXPECT_LT((b.t - im.t).cwiseAbs().maxCoeff(), 1e-9 * 1e3);
        }
        EXPECT_EQ(write_colmap_text(back).images, t.images);
    }
}

TEST(Colmap, CamerasRoundTrip) {
    const GaussianScene s = synth_scene(3, 50, Layout::cloud);
    const auto cams = synth_cameras(3, 4, s, Rig::orbit, 64, 48);
    const std::vector<std::string> names{"a", "b", "c", "d"};
    const auto rec = make_reconstruction(cams, names);
    const ColmapText t = write_colmap_text(rec);
    const auto back = cameras_of(parse_colmap_text(t.cameras, t.images));
    ASSERT_EQ(back.size(), cams.size());
    for (std::size_t i = 0; i < cams.size(); ++i) {
        EXPECT_LT((back[i].t - cams[i].t).norm(), 1e-12);
        EXPECT_NEAR(back[i].fov_x, cams[i].fov_x, 1e-12);
        EXPECT_NEAR(back[i].fov_y, cams[i].fov_y, 1e-12);
    }
    EXPECT_THROW(with_cameras(rec, std::span(cams).first(2)), CameraIdMismatch);
}

TEST(Ply, SingleGaussianBitIdentical) {
    GaussianScene s = synth_scene(4, 1, Layout::cloud);
    s.gaussians[0].opacity = 0.7;
    const std::string bytes = write_ply_gaussians(s);
    const GaussianScene back = read_ply_gaussians(bytes);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(write_ply_gaussians(back), bytes);
    const Gaussian& a = s.gaussians[0];
    const Gaussian& b = back.gaussians[0];
    EXPECT_LT((a.position - b.position).norm(), 1e-6);
    EXPECT_LT((a.color - b.color).norm(), 1e-6);
    EXPECT_NEAR(a.opacity, b.opacity, 1e-6);
    EXPECT_LT((a.scale - b.scale).norm(), 1e-6);
}

TEST(Ply, SceneRoundTrip) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GaussianScene s = synth_scene(seed, 200, Layout::textured_wall);
        const std::string bytes = write_ply_gaussians(s);
        const GaussianScene back = read_ply_gaussians(bytes);
        ASSERT_EQ(back.size(), s.size());
        const std::string again = write_ply_gaussians(back);
        ASSERT_EQ(again.size(), bytes.size());
        const std::size_t data = bytes.find("end_header\n") + 11;
        for (std::size_t k = data; k < bytes.size(); k += 4) {
            const float x = detail::read_f32(bytes.data() + k), y = detail::read_f32(again.data() + k);
            EXPECT_LE(std::abs(x - y), 2 * std::numeric_limits<float>::epsilon() * std::max(1.0f, std::abs(x)));
        }
    }
}

TEST(Ply, MissingOpacityNamed) {
    std::string bytes = write_ply_gaussians(synth_scene(1, 2, Layout::cloud));
    const auto at = bytes.find("property float opacity\n");
    bytes.replace(at, std::strlen("property float opacity\n"), "property float opacitx\n");
    const auto e = catch_as<MissingProperty>([&] { read_ply_gaussians(bytes); });
    EXPECT_EQ(e.name(), "opacity");
}

TEST(Ply, ExtraPropertiesSkippedWithWarning) {
    const GaussianScene s = synth_scene(2, 3, Layout::cloud);
    const std::string plain = write_ply_gaussians(s);
    const std::size_t hdr = plain.find("end_header\n");
    std::string bytes = plain.substr(0, hdr) + "property float f_rest_0\nend_header\n";
    const std::size_t data = hdr + 11;
    for (std::size_t i = 0; i < s.size(); ++i) {
        bytes += plain.substr(data + i * 56, 56);
        detail::append_f32(bytes, 9.0f);
    }
    std::vector<std::string> warnings;
    const GaussianScene back = read_ply_gaussians(bytes, &warnings);
    EXPECT_EQ(warnings.size(), 1u);
    EXPECT_EQ(write_ply_gaussians(back), plain);
}

TEST(Ply, HeaderErrors) {
    const std::string good = write_ply_gaussians(synth_scene(1, 2, Layout::cloud));
    EXPECT_THROW(read_ply_gaussians("plx\n" + good.substr(4)), PlyHeaderError);
    std::string ascii = good;
    ascii.replace(ascii.find("binary_little_endian"), 20, "ascii");
    EXPECT_THROW(read_ply_gaussians(ascii), PlyHeaderError);
    EXPECT_THROW(read_ply_gaussians(good.substr(0, good.size() - 3)), PlyHeaderError);
    std::string dbl = good;
    dbl.replace(dbl.find("property float x\n"), 17, "property double x\n");
    EXPECT_THROW(read_ply_gaussians(dbl), PlyHeaderError);
}

TEST(Ply, NonPositiveScaleRejected) {
    GaussianScene s = synth_scene(1, 1, Layout::cloud);
    s.gaussians[0].scale.x() = 0.0;
    EXPECT_THROW(write_ply_gaussians(s), DomainError);
}

TEST(Image, WhitePfmBitIdentical) {
    Image img(1, 1);
    img.pixels = {1.0, 1.0, 1.0};
    const std::string bytes = write_image(img, ImageFormat::pfm);
    const Image back = read_image(bytes);
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_EQ(write_image(back, ImageFormat::pfm), bytes);
}

TEST(Image, PfmRoundTripBitExact) {
    Rng rng(72);
    Image img(7, 5);
    for (double& v : img.pixels) v = static_cast<float>(rng.uniform(0, 1));
    const Image back = read_image(write_image(img, ImageFormat::pfm));
    EXPECT_EQ(back.width, 7);
    EXPECT_EQ(back.height, 5);
    EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Image, PpmQuantization) {
    Image img(2, 1);
    img.pixels = {0.5, 0.0, 1.0, 127.4 / 255.0, -0.2, 1.3};
    const std::string bytes = write_image(img, ImageFormat::ppm);
    const std::string raster = bytes.substr(bytes.size() - 6);
    EXPECT_EQ(static_cast<unsigned char>(raster[0]), 128);
    EXPECT_EQ(static_cast<unsigned char>(raster[1]), 0);
    EXPECT_EQ(static_cast<unsigned char>(raster[2]), 255);
    EXPECT_EQ(static_cast<unsigned char>(raster[3]), 127);
    EXPECT_EQ(static_cast<unsigned char>(raster[4]), 0);
    EXPECT_EQ(static_cast<unsigned char>(raster[5]), 255);
    const Image back = read_image(bytes);
    EXPECT_EQ(write_image(back, ImageFormat::ppm), bytes);
    EXPECT_EQ(back.pixels[0], 128 / 255.0);
}

TEST(Image, FormatErrorsCarryOffsets) {
    const auto a = catch_as<ImageFormatError>([] { read_image("P6\n2 1\n65535\n"); });
    EXPECT_EQ(a.offset(), 7u);
    const auto b = catch_as<ImageFormatError>([] { read_image("P6\n2 1\n255\nabc"); });
    EXPECT_EQ(b.offset(), 14u);
    const auto c = catch_as<ImageFormatError>([] { read_image("P5\n2 1\n255\n"); });
    EXPECT_EQ(c.offset(), 0u);
    const auto d = catch_as<ImageFormatError>([] { read_image("PF\n2 x\n-1.0\n"); });
    EXPECT_EQ(d.offset(), 5u);
    EXPECT_THROW(read_image("PF\n1 1\n1.0\n0000"), ImageFormatError);
}

TEST(Files, MissingFileIsIoError) {
    EXPECT_THROW(read_file("/nonexistent/splatcal/file"), IoError);
}
