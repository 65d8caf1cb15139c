#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace splatcal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

// Errors -------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class BehindCamera : public Error {
public:
    BehindCamera() : Error("point is behind the near plane") {}
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class EmptyFrustum : public Error {
public:
    EmptyFrustum() : Error("no gaussian is visible from this camera") {}
};

class ZeroQuaternion : public Error {
public:
    ZeroQuaternion() : Error("quaternion collapsed to zero length") {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

class UnsupportedCameraModel : public Error {
public:
    explicit UnsupportedCameraModel(const std::string& model)
        : Error("unsupported camera model: " + model), model_(model) {}
    const std::string& model() const noexcept { return model_; }

private:
    std::string model_;
};

class DanglingCameraRef : public Error {
public:
    DanglingCameraRef(int image_id, int camera_id)
        : Error("image " + std::to_string(image_id) + " references missing camera " +
                std::to_string(camera_id)) {}
};

class PlyHeaderError : public Error {
public:
    using Error::Error;
};

class MissingProperty : public Error {
public:
    explicit MissingProperty(const std::string& name)
        : Error("missing PLY property: " + name), name_(name) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class ImageFormatError : public Error {
public:
    ImageFormatError(const std::string& what, std::size_t offset)
        : Error("byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class CameraIdMismatch : public Error {
public:
    using Error::Error;
};

// Random numbers -------------------------------------------------------------

/// Seeded generator. Only the raw 64-bit engine output is used, so streams are
/// identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed ^ 0x9e3779b97f4a7c15ULL) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t next() { return engine_(); }

    /// Integer in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    Vec3 unit_vector() {
        for (;;) {
            Vec3 v(normal(), normal(), normal());
            const double n = v.norm();
            if (n > 1e-12) return v / n;
        }
    }

    /// Uniform sample in the ball of the given radius.
    Vec3 in_ball(double radius) { return unit_vector() * (radius * std::cbrt(uniform())); }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Parallelism ----------------------------------------------------------------

/// Worker count: SPLATCAL_THREADS when set to a positive integer, otherwise the
/// hardware concurrency.
inline unsigned thread_count() {
    if (const char* env = std::getenv("SPLATCAL_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count). Work items must be independent; results do
/// not depend on the number of workers.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
    };
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
}

}  // namespace splatcal
