#pragma once

// Landmark metrics (NME, failure rate, CED) and class-activation-style maps of the excitations.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "ccdn/backbone.hpp"
#include "ccdn/data.hpp"

namespace ccdn {

/// Mean point-to-point distance divided by the normalization distance.
inline double nme(const std::vector<Point>& pred, const std::vector<Point>& gt, double norm_distance) {
    if (!(norm_distance > 0.0)) throw DegenerateInputError("nme: normalization distance must be positive");
    if (pred.size() != gt.size() || gt.empty()) throw ShapeError("nme: landmark counts differ or are zero");
    double s = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) s += std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
    return s / static_cast<double>(gt.size()) / norm_distance;
}

/// Fraction of images whose NME is strictly greater than the threshold.
inline double failure_rate(const std::vector<double>& nmes, double threshold = 0.10) {
    if (nmes.empty()) throw DegenerateInputError("failure_rate: empty list");
    const auto n = std::count_if(nmes.begin(), nmes.end(), [&](double e) { return e > threshold; });
    return static_cast<double>(n) / static_cast<double>(nmes.size());
}

struct CedPoint {
    double threshold;
    double fraction;  // images with nme <= threshold
};

/// `steps` thresholds evenly spaced over [0, max_threshold], both ends included.
inline std::vector<CedPoint> ced_curve(const std::vector<double>& nmes, double max_threshold, std::size_t steps) {
    if (steps < 2) throw ContractError("ced_curve: steps must be >= 2");
    if (nmes.empty()) throw DegenerateInputError("ced_curve: empty list");
    std::vector<double> sorted = nmes;
    std::sort(sorted.begin(), sorted.end());
    std::vector<CedPoint> out;
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = max_threshold * static_cast<double>(k) / static_cast<double>(steps - 1);
        const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
        out.push_back({t, static_cast<double>(n) / static_cast<double>(sorted.size())});
    }
    return out;
}

struct EvalResult {
    std::vector<double> nme;
    double mean_nme = 0.0;
    double failure_rate = 0.0;
    std::vector<CedPoint> ced;
};

inline EvalResult summarize(std::vector<double> nmes, double ced_max = 0.10, std::size_t ced_steps = 21,
                            double failure_threshold = 0.10) {
    EvalResult r;
    r.failure_rate = failure_rate(nmes, failure_threshold);
    r.mean_nme = std::accumulate(nmes.begin(), nmes.end(), 0.0) / static_cast<double>(nmes.size());
    r.ced = ced_curve(nmes, ced_max, ced_steps);
    r.nme = std::move(nmes);
    return r;
}

inline std::vector<Point> to_points(const Tensor& pred, std::size_t item) {
    const std::size_t l = pred.dim(1) / 2;
    std::vector<Point> pts(l);
    for (std::size_t i = 0; i < l; ++i) pts[i] = {pred[item * 2 * l + 2 * i], pred[item * 2 * l + 2 * i + 1]};
    return pts;
}

/// Eval-mode predictions for every sample, in order.
inline std::vector<std::vector<Point>> predict(ModelParams& m, const Dataset& data, std::size_t batch = 50) {
    NoGradScope off;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<Point>> out;
    for (std::size_t first = 0; first < data.size(); first += batch) {
        const std::size_t n = std::min(batch, data.size() - first);
        const Tensor img = make_batch(data, order, first, n).first;
        const Tensor pred = ccdn_forward(img, m, Mode::eval).prediction;
        for (std::size_t b = 0; b < n; ++b) out.push_back(to_points(pred, b));
    }
    return out;
}

inline std::vector<double> per_image_nme(ModelParams& m, const Dataset& data) {
    const auto preds = predict(m, data);
    std::vector<double> out;
    for (std::size_t i = 0; i < data.size(); ++i) out.push_back(nme(preds[i], data[i].landmarks, data[i].norm_distance));
    return out;
}

inline void write_nme_csv(const std::filesystem::path& path, const std::vector<double>& nmes) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "index,nme\n";
    for (std::size_t i = 0; i < nmes.size(); ++i) out << i << ',' << nmes[i] << '\n';
}

inline void write_ced_csv(const std::filesystem::path& path, const std::vector<CedPoint>& ced) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "threshold,fraction\n";
    for (const auto& p : ced) out << p.threshold << ',' << p.fraction << '\n';
}

enum class Stage { last, penultimate, fused };

/// Bilinear resize of one [H,W] plane to [size,size] (pixel centers aligned).
inline std::vector<double> resize_plane(const double* plane, std::size_t h, std::size_t w, std::size_t size) {
    std::vector<double> out(size * size);
    for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j) {
            const double y = (i + 0.5) * static_cast<double>(h) / static_cast<double>(size) - 0.5;
            const double x = (j + 0.5) * static_cast<double>(w) / static_cast<double>(size) - 0.5;
            out[i * size + j] = bilinear(plane, h, w, y, x);
        }
    return out;
}

/// Min-max normalization to [0,1]; a constant map becomes all zeros.
inline void min_max_normalize(std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double a = *lo, range = *hi - *lo;
    for (double& x : v) x = range > 0.0 ? (x - a) / range : 0.0;
}

/// Activation map of excitation p at the chosen stage for a single image [C,S,S]. Every coordinate
/// output o defines channel weights W_fc[o,:] * K_head[:, p-th block]; the 2L weighted channel sums
/// are averaged, upsampled to the input size and min-max normalized. Returns [1,S,S].
inline Tensor activation_map(ModelParams& m, const Tensor& image, Stage stage, std::size_t p) {
    const auto& c = m.config;
    if (m.epochs_trained == 0) throw ContractError("activation maps need a trained checkpoint");
    if (!select_variant(c).attention) throw ContractError("activation maps need a variant with excitation blocks");
    if (p >= c.excitations) throw ContractError("excitation index out of range");
    require_rank(image, 3, "activation_map image");
    NoGradScope off;
    Shape dims{1};
    dims.insert(dims.end(), image.dims().begin(), image.dims().end());
    const ForwardResult r = ccdn_forward(Tensor(dims, {image.values().begin(), image.values().end()}), m, Mode::eval);
    const Tensor& maps = stage == Stage::last          ? r.maps_last[p]
                         : stage == Stage::penultimate ? r.maps_penultimate[p]
                                                       : r.maps_fused[p];
    const std::size_t d = c.channels, outs = 2 * c.landmarks, head_in = m.head_kernel.dim(1);
    // Mean over outputs of W_fc[o,:] K_head[:, p*D + k].
    std::vector<double> w(d, 0.0);
    for (std::size_t o = 0; o < outs; ++o)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k) w[k] += m.fc_weight[o * d + j] * m.head_kernel[j * head_in + p * d + k];
    for (double& x : w) x /= static_cast<double>(outs);

    const std::size_t h = maps.dim(2), wd = maps.dim(3);
    std::vector<double> cam(h * wd, 0.0);
    for (std::size_t k = 0; k < d; ++k)
        for (std::size_t i = 0; i < h * wd; ++i) cam[i] += w[k] * maps[k * h * wd + i];
    std::vector<double> up = resize_plane(cam.data(), h, wd, c.input_size);
    min_max_normalize(up);
    return Tensor({1, c.input_size, c.input_size}, std::move(up));
}

}  // namespace ccdn
