#pragma once

// Synthetic face benchmark, .pts and PGM/PPM I/O, crop/resize and affine augmentation.
// Landmarks are crop-relative: x in [0,1] spans the image width, pixel i covers [i/W, (i+1)/W).

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "ccdn/rng.hpp"
#include "ccdn/tensor.hpp"

namespace ccdn {

struct Point {
    double x = 0.0, y = 0.0;
    bool operator==(const Point&) const = default;
};

struct Sample {
    Tensor image;  // [C,S,S] in [0,1]
    std::vector<Point> landmarks;
    std::vector<bool> visible;
    double norm_distance = 0.0;

    std::size_t visible_count() const {
        std::size_t n = 0;
        for (bool v : visible) n += v;
        return n;
    }
    bool occluded() const { return visible_count() < landmarks.size(); }
};

using Dataset = std::vector<Sample>;

struct SynthSpec {
    std::size_t count = 100;
    std::size_t landmarks = 12;
    std::size_t image_size = 64;
    double pose_sigma = 0.25;  // radians
    double occlusion_prob = 0.5;
    double occlusion_max_frac = 0.4;
    double noise_sigma = 0.03;
    std::uint64_t seed = 0;

    void validate() const {
        if (landmarks < 2) throw ConfigError("synthetic faces need at least 2 landmarks (the eyes)");
        if (image_size < 8) throw ConfigError("synthetic image size must be >= 8");
        if (occlusion_prob < 0.0 || occlusion_prob > 1.0) throw ConfigError("occlusion_prob must lie in [0,1]");
        if (occlusion_max_frac <= 0.0 || occlusion_max_frac >= 1.0) {
            throw ConfigError("occlusion_max_frac must lie in (0,1)");
        }
        if (pose_sigma < 0.0 || noise_sigma < 0.0) throw ConfigError("sigmas must be non-negative");
    }
};

/// Occluder rectangle in relative units: side lengths uniform in [0.05, max_frac], placed
/// uniformly so it lies inside the image.
struct Occluder {
    double x0, y0, x1, y1;
    bool covers(const Point& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

inline Occluder draw_occluder(Rng& rng, double max_frac) {
    const double lo = std::min(0.05, max_frac);
    const double w = uniform(rng, lo, max_frac), h = uniform(rng, lo, max_frac);
    const double x0 = uniform(rng, 0.0, 1.0 - w), y0 = uniform(rng, 0.0, 1.0 - h);
    return {x0, y0, x0 + w, y0 + h};
}

namespace detail {

struct FaceGeometry {
    Point center;
    double angle = 0.0;  // in-plane rotation
    double yaw = 0.0;    // horizontal shift of the inner features, in face units
    double half_width = 0.27, half_height = 0.34;

    // Face-local (u,v) in units of the half-width, v pointing down, to image coordinates.
    Point to_image(double u, double v) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double x = u * half_width, y = v * half_width;
        return {center.x + c * x - s * y, center.y + s * x + c * y};
    }
    std::array<double, 2> to_local(const Point& p) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double dx = p.x - center.x, dy = p.y - center.y;
        return {(c * dx + s * dy) / half_width, (-s * dx + c * dy) / half_width};
    }
    double aspect() const { return half_height / half_width; }
};

// Landmark order: eyes, nose tip, mouth corners, brows, upper and lower lip, then the jaw line.
inline std::vector<Point> face_landmarks(const FaceGeometry& f, std::size_t count) {
    const double y = f.yaw;
    std::vector<std::array<double, 2>> local = {
        {-0.38 + y, -0.22}, {0.38 + y, -0.22}, {0.0 + 1.4 * y, 0.18}, {-0.30 + y, 0.55}, {0.30 + y, 0.55},
        {-0.40 + y, -0.45}, {0.40 + y, -0.45}, {0.0 + y, 0.47},       {0.0 + y, 0.63},
    };
    const std::size_t jaw = count > local.size() ? count - local.size() : 0;
    for (std::size_t j = 0; j < jaw; ++j) {
        // Evenly along the lower half of the outline, left to right.
        const double t = std::numbers::pi * (1.0 - (static_cast<double>(j) + 1.0) / (static_cast<double>(jaw) + 1.0));
        local.push_back({std::cos(t), f.aspect() * std::sin(t)});
    }
    std::vector<Point> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(f.to_image(local[i][0], local[i][1]));
    return out;
}

// Coverage of a soft-edged shape given a signed distance (negative inside) in pixels.
inline double soft(double signed_distance_px) { return std::clamp(0.5 - signed_distance_px, 0.0, 1.0); }

inline double render_pixel(const FaceGeometry& f, const Point& p, double px) {
    const auto [u, v] = f.to_local(p);
    const double unit_px = f.half_width / px;  // pixels per face unit
    double value = 0.15;
    // Face ellipse.
    const double r = std::hypot(u, v / f.aspect());
    const double face = soft((r - 1.0) * unit_px);
    value += 0.55 * face;
    auto blob = [&](double cu, double cv, double ru, double rv) {
        return soft((std::hypot((u - cu) / ru, (v - cv) / rv) - 1.0) * std::min(ru, rv) * unit_px);
    };
    const double y = f.yaw;
    const double eyes = std::max(blob(-0.38 + y, -0.22, 0.13, 0.08), blob(0.38 + y, -0.22, 0.13, 0.08));
    const double brows = std::max(blob(-0.40 + y, -0.45, 0.18, 0.035), blob(0.40 + y, -0.45, 0.18, 0.035));
    const double nose = blob(1.4 * y, 0.10, 0.06, 0.10);
    const double mouth = blob(y, 0.55, 0.30, 0.08);
    value -= face * (0.5 * eyes + 0.45 * brows + 0.25 * nose + 0.4 * mouth);
    return value;
}

}  // namespace detail

/// One synthetic face. The stream for sample `index` depends only on (seed, index).
inline Sample synth_sample(const SynthSpec& spec, std::size_t index) {
    Rng rng = make_stream(spec.seed, "synth", index);
    const std::size_t s = spec.image_size;
    detail::FaceGeometry f;
    f.center = {0.5 + uniform(rng, -0.06, 0.06), 0.5 + uniform(rng, -0.06, 0.06)};
    f.angle = gaussian(rng, 0.0, spec.pose_sigma);
    f.yaw = std::clamp(gaussian(rng, 0.0, 0.5 * spec.pose_sigma), -0.25, 0.25);

    Sample out;
    out.landmarks = detail::face_landmarks(f, spec.landmarks);
    out.visible.assign(spec.landmarks, true);
    out.norm_distance = std::hypot(out.landmarks[1].x - out.landmarks[0].x, out.landmarks[1].y - out.landmarks[0].y);

    std::vector<double> img(s * s);
    const double px = 1.0 / static_cast<double>(s);
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
            img[i * s + j] = detail::render_pixel(f, {(j + 0.5) * px, (i + 0.5) * px}, px);
        }

    // Draw order is fixed so the occlusion decision never shifts the noise stream.
    const bool occlude = uniform(rng, 0.0, 1.0) < spec.occlusion_prob;
    const Occluder occ = draw_occluder(rng, spec.occlusion_max_frac);
    const double shade = uniform(rng, 0.0, 1.0);
    if (occlude) {
        for (std::size_t i = 0; i < s; ++i)
            for (std::size_t j = 0; j < s; ++j) {
                if (occ.covers({(j + 0.5) * px, (i + 0.5) * px})) {
                    img[i * s + j] = shade + 0.1 * std::sin(0.9 * static_cast<double>(i + 2 * j));
                }
            }
        for (std::size_t l = 0; l < spec.landmarks; ++l) out.visible[l] = !occ.covers(out.landmarks[l]);
    }
    for (double& v : img) v = std::clamp(v + gaussian(rng, 0.0, spec.noise_sigma), 0.0, 1.0);
    out.image = Tensor({1, s, s}, std::move(img));
    return out;
}

/// Samples [first, first + spec.count) of the stream defined by spec.seed.
inline Dataset synth_generate(const SynthSpec& spec, std::size_t first = 0) {
    spec.validate();
    Dataset d;
    d.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) d.push_back(synth_sample(spec, first + i));
    return d;
}

// ---------------------------------------------------------------------------------------------
// .pts files

inline std::vector<Point> parse_pts(std::istream& in, const std::string& where = "<pts>") {
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw ParseError(where + ":" + std::to_string(lineno) + ": " + msg);
    };
    auto next = [&]() -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") != std::string::npos) return true;
        }
        return false;
    };
    if (!next() || line.rfind("version:", 0) != 0) fail("expected 'version: 1'");
    if (!next() || line.rfind("n_points:", 0) != 0) fail("expected 'n_points: <count>'");
    std::size_t n = 0;
    try {
        std::size_t used = 0;
        const std::string rest = line.substr(9);
        const long v = std::stol(rest, &used);
        if (v <= 0 || rest.find_first_not_of(" \t", used) != std::string::npos) fail("bad point count");
        n = static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
        fail("bad point count");
    }
    if (!next() || line.find('{') == std::string::npos) fail("expected '{'");
    std::vector<Point> pts;
    while (true) {
        if (!next()) fail("missing '}'");
        if (line.find('}') != std::string::npos) break;
        std::istringstream ls(line);
        Point p;
        std::string extra;
        if (!(ls >> p.x >> p.y) || (ls >> extra)) fail("expected two numbers");
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) fail("non-finite coordinate");
        pts.push_back(p);
    }
    if (pts.size() != n) {
        fail("header declares " + std::to_string(n) + " points, file has " + std::to_string(pts.size()));
    }
    return pts;
}

inline std::vector<Point> load_pts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return parse_pts(in, path.string());
}

inline void save_pts(const std::filesystem::path& path, const std::vector<Point>& pts) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "version: 1\nn_points: " << pts.size() << "\n{\n";
    for (const auto& p : pts) out << p.x << ' ' << p.y << '\n';
    out << "}\n";
}

// ---------------------------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6), 8-bit

inline Tensor parse_image(std::istream& in, const std::string& where = "<image>") {
    auto fail = [&](const std::string& msg) { throw ParseError(where + ": " + msg); };
    std::string magic(2, '\0');
    if (!in.read(magic.data(), 2) || (magic != "P5" && magic != "P6")) fail("expected P5 or P6 magic");
    auto token = [&]() -> long {
        int c = in.get();
        while (c != EOF) {
            if (c == '#') {
                while (c != EOF && c != '\n') c = in.get();
            } else if (!std::isspace(c)) {
                break;
            }
            c = in.get();
        }
        std::string digits;
        while (c != EOF && std::isdigit(c)) {
            digits.push_back(static_cast<char>(c));
            if (digits.size() > 9) fail("header value overflow");
            c = in.get();
        }
        if (digits.empty() || (c != EOF && !std::isspace(c))) fail("malformed header");
        return std::stol(digits);
    };
    const long w = token(), h = token(), maxval = token();
    if (w <= 0 || h <= 0 || w > 1 << 15 || h > 1 << 15) fail("bad image size");
    if (maxval != 255) fail("only 8-bit images (maxval 255) are supported");
    const std::size_t channels = magic == "P5" ? 1 : 3;
    const std::size_t hh = static_cast<std::size_t>(h), ww = static_cast<std::size_t>(w);
    std::vector<unsigned char> raw(channels * hh * ww);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        fail("truncated pixel data");
    }
    std::vector<double> v(raw.size());
    for (std::size_t i = 0; i < hh * ww; ++i)
        for (std::size_t c = 0; c < channels; ++c) v[c * hh * ww + i] = raw[i * channels + c] / 255.0;
    return Tensor({channels, hh, ww}, std::move(v));
}

inline Tensor load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    return parse_image(in, path.string());
}

/// Writes [1,H,W] as P5 or [3,H,W] as P6; values are clamped to [0,1] and rounded.
inline void save_image(const std::filesystem::path& path, const Tensor& img) {
    require_rank(img, 3, "save_image");
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (c != 1 && c != 3) throw ShapeError("save_image: 1 or 3 channels expected");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> raw(c * h * w);
    for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t k = 0; k < c; ++k) {
            raw[i * c + k] = static_cast<unsigned char>(std::lround(std::clamp(img[k * h * w + i], 0.0, 1.0) * 255.0));
        }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// ---------------------------------------------------------------------------------------------
// Geometry

/// Bilinear sample at continuous pixel coordinates (pixel centers on integers), edge clamped.
inline double bilinear(const double* plane, std::size_t h, std::size_t w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const std::size_t y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
    const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
    return top * (1 - fy) + bot * fy;
}

/// Crop box in relative units of the source image.
struct Box {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

inline Point to_crop(const Point& p, const Box& b) { return {(p.x - b.x0) / (b.x1 - b.x0), (p.y - b.y0) / (b.y1 - b.y0)}; }

/// Resamples the box to size x size; landmarks become relative to the box. The normalization
/// distance is rescaled by the geometric mean of the two axis scales.
inline Sample crop_resize(const Sample& s, const Box& box, std::size_t size) {
    if (!(box.x1 > box.x0) || !(box.y1 > box.y0)) throw DegenerateInputError("crop_resize: empty box");
    if (size == 0) throw DegenerateInputError("crop_resize: zero output size");
    require_rank(s.image, 3, "crop_resize image");
    const std::size_t c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
    const double bw = box.x1 - box.x0, bh = box.y1 - box.y0;
    std::vector<double> v(c * size * size);
    for (std::size_t k = 0; k < c; ++k) {
        const double* plane = s.image.values().data() + k * h * w;
        for (std::size_t i = 0; i < size; ++i)
            for (std::size_t j = 0; j < size; ++j) {
                const double ry = box.y0 + (i + 0.5) / static_cast<double>(size) * bh;
                const double rx = box.x0 + (j + 0.5) / static_cast<double>(size) * bw;
                v[(k * size + i) * size + j] = bilinear(plane, h, w, ry * h - 0.5, rx * w - 0.5);
            }
    }
    Sample out;
    out.image = Tensor({c, size, size}, std::move(v));
    for (const auto& p : s.landmarks) out.landmarks.push_back(to_crop(p, box));
    out.visible = s.visible;
    out.norm_distance = s.norm_distance / std::sqrt(bw * bh);
    return out;
}

struct AugmentConfig {
    double rotation_sigma_deg = 15.0;
    double scale_sigma = 0.05;
};

/// Rotation by `angle` (radians, image y axis pointing down) and isotropic scaling about the image
/// center, applied to the image by inverse bilinear sampling and to the landmarks directly.
inline Sample transform_sample(const Sample& s, double angle, double scale) {
    if (!(scale > 0.0)) throw DegenerateInputError("transform_sample: scale must be positive");
    const std::size_t c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
    const double co = std::cos(angle), si = std::sin(angle);
    Sample out;
    out.visible = s.visible;
    out.norm_distance = s.norm_distance * scale;
    if (angle == 0.0 && scale == 1.0) {
        out.landmarks = s.landmarks;
        out.image = s.image.detach();
        return out;
    }
    for (const auto& p : s.landmarks) {
        const double dx = p.x - 0.5, dy = p.y - 0.5;
        out.landmarks.push_back({0.5 + scale * (co * dx - si * dy), 0.5 + scale * (si * dx + co * dy)});
    }
    std::vector<double> v(c * h * w);
    for (std::size_t k = 0; k < c; ++k) {
        const double* plane = s.image.values().data() + k * h * w;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double dx = (j + 0.5) / static_cast<double>(w) - 0.5, dy = (i + 0.5) / static_cast<double>(h) - 0.5;
                const double sx = 0.5 + (co * dx + si * dy) / scale, sy = 0.5 + (-si * dx + co * dy) / scale;
                v[(k * h + i) * w + j] = bilinear(plane, h, w, sy * h - 0.5, sx * w - 0.5);
            }
    }
    out.image = Tensor({c, h, w}, std::move(v));
    return out;
}

inline Sample augment(const Sample& s, Rng& rng, const AugmentConfig& cfg) {
    const double angle = gaussian(rng, 0.0, cfg.rotation_sigma_deg * std::numbers::pi / 180.0);
    const double scale = std::max(0.5, gaussian(rng, 1.0, cfg.scale_sigma));
    return transform_sample(s, angle, scale);
}

// ---------------------------------------------------------------------------------------------
// Dataset directories: img_NNNNN.pgm + img_NNNNN.pts (pixel coordinates) + manifest.csv, plus a
// visibility.csv sidecar holding the per-landmark flags.

inline std::string sample_stem(std::size_t i) {
    std::string s = std::to_string(i);
    return "img_" + std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv"), vis(dir / "visibility.csv");
    if (!manifest || !vis) throw std::runtime_error("cannot write dataset manifest in " + dir.string());
    manifest.precision(17);
    manifest << "index,path_img,path_pts,norm_distance,visible_count\n";
    vis << "index,visible\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Sample& s = data[i];
        const std::string stem = sample_stem(i);
        const std::size_t h = s.image.dim(1), w = s.image.dim(2);
        save_image(dir / (stem + (s.image.dim(0) == 1 ? ".pgm" : ".ppm")), s.image);
        std::vector<Point> px;
        for (const auto& p : s.landmarks) px.push_back({p.x * static_cast<double>(w), p.y * static_cast<double>(h)});
        save_pts(dir / (stem + ".pts"), px);
        manifest << i << ',' << stem << (s.image.dim(0) == 1 ? ".pgm" : ".ppm") << ',' << stem << ".pts,"
                 << s.norm_distance << ',' << s.visible_count() << '\n';
        vis << i << ',';
        for (bool b : s.visible) vis << (b ? '1' : '0');
        vis << '\n';
    }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest) throw ParseError("no manifest.csv in " + dir.string());
    std::vector<std::string> vis_rows;
    if (std::ifstream vis(dir / "visibility.csv"); vis) {
        std::string line;
        std::getline(vis, line);
        while (std::getline(vis, line)) vis_rows.push_back(line.substr(line.find(',') + 1));
    }
    Dataset out;
    std::string line;
    std::getline(manifest, line);
    if (line != "index,path_img,path_pts,norm_distance,visible_count") {
        throw ParseError(dir.string() + "/manifest.csv: unexpected header");
    }
    std::size_t lineno = 1;
    while (std::getline(manifest, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 5) throw ParseError(dir.string() + "/manifest.csv:" + std::to_string(lineno) + ": 5 fields expected");
        Sample s;
        s.image = load_image(dir / f[1]);
        const std::size_t h = s.image.dim(1), w = s.image.dim(2);
        for (const auto& p : load_pts(dir / f[2])) {
            s.landmarks.push_back({p.x / static_cast<double>(w), p.y / static_cast<double>(h)});
        }
        try {
            s.norm_distance = std::stod(f[3]);
        } catch (const std::logic_error&) {
            throw ParseError(dir.string() + "/manifest.csv:" + std::to_string(lineno) + ": bad norm_distance");
        }
        const std::size_t idx = out.size();
        if (idx < vis_rows.size() && vis_rows[idx].size() == s.landmarks.size()) {
            for (char ch : vis_rows[idx]) s.visible.push_back(ch == '1');
        } else {
            // Without the sidecar only the count is known; flags cannot be placed per landmark.
            const std::size_t count = std::stoul(f[4]);
            s.visible.assign(s.landmarks.size(), false);
            for (std::size_t i = 0; i < std::min(count, s.landmarks.size()); ++i) s.visible[i] = true;
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Stacks samples [first, first+n) of `order` into a batch: images [n,C,S,S], targets [n,2L].
inline std::pair<Tensor, Tensor> make_batch(const Dataset& data, const std::vector<std::size_t>& order,
                                            std::size_t first, std::size_t n) {
    const Sample& s0 = data[order[first]];
    const std::size_t per = s0.image.numel(), l = s0.landmarks.size();
    std::vector<double> img(n * per), gt(n * 2 * l);
    for (std::size_t b = 0; b < n; ++b) {
        const Sample& s = data[order[first + b]];
        std::copy(s.image.values().begin(), s.image.values().end(), img.begin() + static_cast<long>(b * per));
        for (std::size_t i = 0; i < l; ++i) {
            gt[b * 2 * l + 2 * i] = s.landmarks[i].x;
            gt[b * 2 * l + 2 * i + 1] = s.landmarks[i].y;
        }
    }
    Shape dims{n};
    dims.insert(dims.end(), s0.image.dims().begin(), s0.image.dims().end());
    return {Tensor(std::move(dims), std::move(img)), Tensor({n, 2 * l}, std::move(gt))};
}

}  // namespace ccdn
