#pragma once

#include "splatcal/renderer.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

namespace splatcal {

class IoError : public Error {
public:
    using Error::Error;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

template <class T>
T parse_number(std::string_view tok, int line, const char* what) {
    T value{};
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError(std::string("bad ") + what + " '" + std::string(tok) + "'", line);
    return value;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        std::string_view l = text.substr(start, end - start);
        if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
        lines.push_back(l);
        start = end + 1;
    }
    return lines;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

// COLMAP text ----------------------------------------------------------------

struct ColmapCamera {
    int id = 0;
    std::string model = "PINHOLE";
    int width = 0;
    int height = 0;
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;

    double fov_x() const { return focal_to_fov(fx, width); }
    double fov_y() const { return focal_to_fov(fy, height); }
    bool operator==(const ColmapCamera&) const = default;
};

struct ColmapImage {
    int id = 0;
    UnitQuaternion q;  // world-to-camera
    Vec3 t = Vec3::Zero();
    int camera_id = 0;
    std::string name;
    bool operator==(const ColmapImage&) const = default;
};

struct ColmapReconstruction {
    std::map<int, ColmapCamera> cameras;
    std::map<int, ColmapImage> images;
    bool operator==(const ColmapReconstruction&) const = default;
};

/// Parses cameras.txt and images.txt. Only PINHOLE and SIMPLE_PINHOLE are
/// accepted; the POINTS2D line after each image line is skipped.
inline ColmapReconstruction parse_colmap_text(std::string_view cameras_text, std::string_view images_text) {
    ColmapReconstruction rec;
    const auto cam_lines = detail::split_lines(cameras_text);
    for (std::size_t i = 0; i < cam_lines.size(); ++i) {
        const int line_no = static_cast<int>(i) + 1;
        const std::string_view line = detail::trim(cam_lines[i]);
        if (line.empty() || line.front() == '#') continue;
        const auto tok = detail::split_ws(line);
        if (tok.size() < 4) throw ParseError("camera line needs at least 4 fields", line_no);
        ColmapCamera c;
        c.id = detail::parse_number<int>(tok[0], line_no, "camera id");
        c.model = std::string(tok[1]);
        c.width = detail::parse_number<int>(tok[2], line_no, "width");
        c.height = detail::parse_number<int>(tok[3], line_no, "height");
        if (c.width < 1 || c.height < 1) throw ParseError("image size must be positive", line_no);
        std::vector<double> params;
        for (std::size_t k = 4; k < tok.size(); ++k) params.push_back(detail::parse_number<double>(tok[k], line_no, "parameter"));
        if (c.model == "PINHOLE") {
            if (params.size() != 4) throw ParseError("PINHOLE needs 4 parameters", line_no);
            c.fx = params[0];
            c.fy = params[1];
            c.cx = params[2];
            c.cy = params[3];
        } else if (c.model == "SIMPLE_PINHOLE") {
            if (params.size() != 3) throw ParseError("SIMPLE_PINHOLE needs 3 parameters", line_no);
            c.fx = c.fy = params[0];
            c.cx = params[1];
            c.cy = params[2];
        } else {
            throw UnsupportedCameraModel(c.model);
        }
        if (!(c.fx > 0 && c.fy > 0)) throw ParseError("focal length must be positive", line_no);
        if (rec.cameras.count(c.id)) throw ParseError("duplicate camera id " + std::to_string(c.id), line_no);
        rec.cameras[c.id] = c;
    }

    const auto img_lines = detail::split_lines(images_text);
    for (std::size_t i = 0; i < img_lines.size(); ++i) {
        const int line_no = static_cast<int>(i) + 1;
        const std::string_view line = detail::trim(img_lines[i]);
        if (line.empty() || line.front() == '#') continue;
        const auto tok = detail::split_ws(line);
        if (tok.size() < 10) throw ParseError("image line needs 10 fields", line_no);
        ColmapImage im;
        im.id = detail::parse_number<int>(tok[0], line_no, "image id");
        im.q = {detail::parse_number<double>(tok[1], line_no, "QW"), detail::parse_number<double>(tok[2], line_no, "QX"),
                detail::parse_number<double>(tok[3], line_no, "QY"), detail::parse_number<double>(tok[4], line_no, "QZ")};
        if (im.q.norm() < 1e-12) throw ParseError("zero quaternion", line_no);
        im.t = Vec3(detail::parse_number<double>(tok[5], line_no, "TX"), detail::parse_number<double>(tok[6], line_no, "TY"),
                    detail::parse_number<double>(tok[7], line_no, "TZ"));
        im.camera_id = detail::parse_number<int>(tok[8], line_no, "camera id");
        // Names may contain spaces: take the rest of the line after field 9.
        const std::size_t name_pos = static_cast<std::size_t>(tok[9].data() - line.data());
        im.name = std::string(line.substr(name_pos));
        if (!rec.cameras.count(im.camera_id)) throw DanglingCameraRef(im.id, im.camera_id);
        if (rec.images.count(im.id)) throw ParseError("duplicate image id " + std::to_string(im.id), line_no);
        rec.images[im.id] = im;
        ++i;  // POINTS2D line
    }
    return rec;
}

struct ColmapText {
    std::string cameras;
    std::string images;
};

inline ColmapText write_colmap_text(const ColmapReconstruction& rec) {
    using detail::format_double;
    ColmapText out;
    std::string& c = out.cameras;
    c += "# Camera list with one line of data per camera:\n";
    c += "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
    c += "# Number of cameras: " + std::to_string(rec.cameras.size()) + "\n";
    for (const auto& [id, cam] : rec.cameras) {
        c += std::to_string(id) + " " + cam.model + " " + std::to_string(cam.width) + " " + std::to_string(cam.height);
        if (cam.model == "SIMPLE_PINHOLE")
            c += " " + format_double(cam.fx);
        else
            c += " " + format_double(cam.fx) + " " + format_double(cam.fy);
        c += " " + format_double(cam.cx) + " " + format_double(cam.cy) + "\n";
    }
    std::string& m = out.images;
    m += "# Image list with two lines of data per image:\n";
    m += "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n";
    m += "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
    m += "# Number of images: " + std::to_string(rec.images.size()) + ", mean observations per image: 0\n";
    for (const auto& [id, im] : rec.images) {
        m += std::to_string(id);
        for (double v : {im.q.w, im.q.x, im.q.y, im.q.z, im.t.x(), im.t.y(), im.t.z()}) m += " " + format_double(v);
        m += " " + std::to_string(im.camera_id) + " " + im.name + "\n\n";
    }
    return out;
}

inline Camera to_camera(const ColmapImage& im, const ColmapCamera& cam) {
    Camera c;
    c.t = im.t;
    c.q = im.q.normalized();
    c.width = cam.width;
    c.height = cam.height;
    c.fov_x = cam.fov_x();
    c.fov_y = cam.fov_y();
    c.cx = cam.cx;
    c.cy = cam.cy;
    return c;
}

/// Cameras in image-id order.
inline std::vector<Camera> cameras_of(const ColmapReconstruction& rec) {
    std::vector<Camera> out;
    for (const auto& [id, im] : rec.images) out.push_back(to_camera(im, rec.cameras.at(im.camera_id)));
    return out;
}

/// Writes `cameras` back into a copy of `like`, image by image in id order.
/// Camera intrinsics are rewritten per image's camera id.
inline ColmapReconstruction with_cameras(const ColmapReconstruction& like, std::span<const Camera> cameras) {
    if (cameras.size() != like.images.size()) throw CameraIdMismatch("camera count differs from image count");
    ColmapReconstruction rec = like;
    std::size_t k = 0;
    for (auto& [id, im] : rec.images) {
        const Camera& c = cameras[k++];
        im.q = c.q;
        im.t = c.t;
        ColmapCamera& cc = rec.cameras.at(im.camera_id);
        cc.width = c.width;
        cc.height = c.height;
        cc.fx = c.fx();
        cc.fy = c.fy();
        if (cc.model == "SIMPLE_PINHOLE" && cc.fx != cc.fy) cc.model = "PINHOLE";
        cc.cx = c.cx;
        cc.cy = c.cy;
    }
    return rec;
}

/// One PINHOLE camera per image, ids starting at 1.
inline ColmapReconstruction make_reconstruction(std::span<const Camera> cameras, std::span<const std::string> names) {
    if (names.size() != cameras.size()) throw DimensionMismatch("one name per camera required");
    ColmapReconstruction rec;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        const Camera& c = cameras[i];
        rec.cameras[id] = ColmapCamera{id, "PINHOLE", c.width, c.height, c.fx(), c.fy(), c.cx, c.cy};
        rec.images[id] = ColmapImage{id, c.q, c.t, id, names[i]};
    }
    return rec;
}

// PLY gaussians ----------------------------------------------------------------

/// Zeroth-order spherical harmonic constant used by 3DGS checkpoints.
inline constexpr double kShC0 = 0.28209479177387814;

namespace detail {

inline void append_f32(std::string& out, float v) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char b[4];
    std::memcpy(b, &bits, 4);
    out.append(b, 4);
}

inline float read_f32(const char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    return std::bit_cast<float>(bits);
}

inline int ply_type_size(std::string_view t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

inline const std::array<const char*, 14>& ply_fields() {
    static const std::array<const char*, 14> names = {"x",       "y",       "z",       "f_dc_0", "f_dc_1",
                                                      "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                                                      "rot_0",   "rot_1",   "rot_2",   "rot_3"};
    return names;
}

}  // namespace detail

/// binary_little_endian PLY with the public 3DGS checkpoint field names:
/// scales stored as logs, opacity as logit, color as the DC SH coefficient.
inline std::string write_ply_gaussians(const GaussianScene& scene) {
    std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(scene.size()) + "\n";
    for (const char* f : detail::ply_fields()) out += std::string("property float ") + f + "\n";
    out += "end_header\n";
    for (const auto& g : scene.gaussians) {
        if (!(g.scale.minCoeff() > 0.0)) throw DomainError("cannot store non-positive scale as a logarithm");
        const double o = std::clamp(g.opacity, 0.0, 1.0);
        const double logit = std::clamp(std::log(o / (1.0 - o)), -17.0, 17.0);
        const float vals[14] = {static_cast<float>(g.position.x()),
                                static_cast<float>(g.position.y()),
                                static_cast<float>(g.position.z()),
                                static_cast<float>((g.color.x() - 0.5) / kShC0),
                                static_cast<float>((g.color.y() - 0.5) / kShC0),
                                static_cast<float>((g.color.z() - 0.5) / kShC0),
                                static_cast<float>(logit),
                                static_cast<float>(std::log(g.scale.x())),
                                static_cast<float>(std::log(g.scale.y())),
                                static_cast<float>(std::log(g.scale.z())),
                                static_cast<float>(g.rotation.w),
                                static_cast<float>(g.rotation.x),
                                static_cast<float>(g.rotation.y),
                                static_cast<float>(g.rotation.z)};
        for (float v : vals) detail::append_f32(out, v);
    }
    return out;
}

/// Reads a gaussian PLY. Unknown vertex properties are skipped; spherical
/// harmonic rest coefficients produce one warning.
inline GaussianScene read_ply_gaussians(std::string_view bytes, std::vector<std::string>* warnings = nullptr) {
    const std::size_t header_end = bytes.find("end_header\n");
    if (bytes.substr(0, 4) != "ply\n") throw PlyHeaderError("missing 'ply' magic");
    if (header_end == std::string_view::npos) throw PlyHeaderError("missing end_header");
    const auto lines = detail::split_lines(bytes.substr(0, header_end));
    bool format_ok = false, in_vertex = false, vertex_seen = false;
    std::size_t count = 0;
    struct Prop {
        std::string name;
        std::string type;
        int offset;
    };
    std::vector<Prop> props;
    int stride = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto tok = detail::split_ws(lines[i]);
        if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
        if (tok[0] == "format") {
            if (tok.size() != 3 || tok[1] != "binary_little_endian")
                throw PlyHeaderError("line " + std::to_string(i + 1) + ": only binary_little_endian is supported");
            format_ok = true;
        } else if (tok[0] == "element") {
            if (tok.size() != 3) throw PlyHeaderError("line " + std::to_string(i + 1) + ": malformed element");
            if (vertex_seen && in_vertex) in_vertex = false;
            if (tok[1] == "vertex") {
                if (vertex_seen) throw PlyHeaderError("duplicate vertex element");
                vertex_seen = in_vertex = true;
                count = static_cast<std::size_t>(detail::parse_number<long long>(tok[2], static_cast<int>(i + 1), "count"));
            } else if (!vertex_seen) {
                throw PlyHeaderError("line " + std::to_string(i + 1) + ": elements before vertex are not supported");
            }
        } else if (tok[0] == "property") {
            if (!in_vertex) continue;
            if (tok.size() != 3) throw PlyHeaderError("line " + std::to_string(i + 1) + ": unsupported property");
            const int size = detail::ply_type_size(tok[1]);
            if (size == 0) throw PlyHeaderError("line " + std::to_string(i + 1) + ": unknown type " + std::string(tok[1]));
            props.push_back({std::string(tok[2]), std::string(tok[1]), stride});
            stride += size;
        } else {
            throw PlyHeaderError("line " + std::to_string(i + 1) + ": unexpected '" + std::string(tok[0]) + "'");
        }
    }
    if (!format_ok) throw PlyHeaderError("missing format line");
    if (!vertex_seen) throw PlyHeaderError("missing vertex element");

    std::array<int, 14> offset{};
    for (std::size_t f = 0; f < offset.size(); ++f) {
        const std::string name = detail::ply_fields()[f];
        auto it = std::find_if(props.begin(), props.end(), [&](const Prop& p) { return p.name == name; });
        if (it == props.end()) throw MissingProperty(name);
        if (it->type != "float" && it->type != "float32")
            throw PlyHeaderError("property " + name + " must be float, found " + it->type);
        offset[f] = it->offset;
    }
    if (warnings && std::any_of(props.begin(), props.end(), [](const Prop& p) { return p.name.rfind("f_rest_", 0) == 0; }))
        warnings->push_back("ignoring spherical-harmonic rest coefficients (f_rest_*)");

    const std::size_t data = header_end + std::string_view("end_header\n").size();
    const std::size_t need = count * static_cast<std::size_t>(stride);
    if (bytes.size() - data < need)
        throw PlyHeaderError("vertex data truncated at byte " + std::to_string(bytes.size()) + ", expected " +
                             std::to_string(data + need));

    GaussianScene scene;
    scene.gaussians.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const char* row = bytes.data() + data + i * static_cast<std::size_t>(stride);
        double v[14];
        for (std::size_t f = 0; f < 14; ++f) v[f] = detail::read_f32(row + offset[f]);
        Gaussian& g = scene.gaussians[i];
        g.position = Vec3(v[0], v[1], v[2]);
        g.color = Vec3(0.5 + kShC0 * v[3], 0.5 + kShC0 * v[4], 0.5 + kShC0 * v[5]);
        g.opacity = 1.0 / (1.0 + std::exp(-v[6]));
        g.scale = Vec3(std::exp(v[7]), std::exp(v[8]), std::exp(v[9]));
        g.rotation = {v[10], v[11], v[12], v[13]};
        if (g.rotation.norm() > 0) g.rotation = g.rotation.normalized();
    }
    scene.recompute_extent();
    return scene;
}

// Images ------------------------------------------------------------------------

enum class ImageFormat { ppm, pfm };

namespace detail {

/// Header token reader that tracks byte offsets and skips '#' comments.
struct HeaderCursor {
    std::string_view bytes;
    std::size_t pos = 0;
    std::size_t last = 0;  // start of the most recent token

    std::string_view token() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        last = start;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos == start) throw ImageFormatError("unexpected end of header", start);
        return bytes.substr(start, pos - start);
    }

    template <class T>
    T number(const char* what) {
        const std::string_view tok = token();
        T v{};
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size())
            throw ImageFormatError(std::string("bad ") + what + " '" + std::string(tok) + "'", last);
        return v;
    }

    /// Exactly one whitespace byte separates the header from the raster.
    void end_header() {
        if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
            throw ImageFormatError("missing whitespace after header", pos);
        ++pos;
    }
};

inline std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v * 255.0 + 0.5), 0.0, 255.0));
}

}  // namespace detail

/// PPM P6 (8-bit, round-half-up quantization) or color PFM (float32, little
/// endian, rows stored bottom to top).
inline std::string write_image(const Image& img, ImageFormat format) {
    std::string out;
    if (format == ImageFormat::ppm) {
        out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
        for (double v : img.pixels) out.push_back(static_cast<char>(detail::quantize(v)));
    } else {
        out = "PF\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
        for (int y = img.height - 1; y >= 0; --y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < 3; ++c) detail::append_f32(out, static_cast<float>(img.at(x, y, c)));
    }
    return out;
}

inline Image read_image(std::string_view bytes) {
    detail::HeaderCursor cur{bytes};
    const std::string_view magic = cur.token();
    if (magic != "P6" && magic != "PF" && magic != "Pf") throw ImageFormatError("unknown magic '" + std::string(magic) + "'", 0);
    const int w = cur.number<int>("width");
    const std::size_t wpos = cur.last;
    const int h = cur.number<int>("height");
    if (w < 1 || h < 1) throw ImageFormatError("image size must be positive", wpos);
    Image img(w, h);
    const std::size_t n = img.pixel_count();
    if (magic == "P6") {
        const int maxval = cur.number<int>("maxval");
        const std::size_t mpos = cur.last;
        if (maxval != 255) throw ImageFormatError("only maxval 255 is supported, got " + std::to_string(maxval), mpos);
        cur.end_header();
        if (bytes.size() - cur.pos < n * 3) throw ImageFormatError("pixel data truncated", bytes.size());
        for (std::size_t i = 0; i < n * 3; ++i)
            img.pixels[i] = static_cast<unsigned char>(bytes[cur.pos + i]) / 255.0;
        return img;
    }
    const double scale = cur.number<double>("scale");
    const std::size_t spos = cur.last;
    if (scale == 0.0) throw ImageFormatError("PFM scale must be non-zero", spos);
    if (scale > 0.0) throw ImageFormatError("big-endian PFM is not supported", spos);
    cur.end_header();
    const int channels = magic == "PF" ? 3 : 1;
    if (bytes.size() - cur.pos < n * channels * 4) throw ImageFormatError("pixel data truncated", bytes.size());
    const char* p = bytes.data() + cur.pos;
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x) {
            if (channels == 3) {
                for (int c = 0; c < 3; ++c, p += 4) img.at(x, y, c) = detail::read_f32(p);
            } else {
                const double v = detail::read_f32(p);
                p += 4;
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
            }
        }
    return img;
}

}  // namespace splatcal
