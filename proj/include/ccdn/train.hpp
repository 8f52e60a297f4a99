#pragma once

// SGD training with the step learning-rate schedule, per-epoch metrics and NaN guards.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <vector>

#include "ccdn/backbone.hpp"
#include "ccdn/data.hpp"
#include "ccdn/eval.hpp"

namespace ccdn {

struct OptimConfig {
    double lr = 2.5e-4;
    double momentum = 0.9;
    std::vector<std::size_t> milestones{40, 100};
    double decay = 0.5;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
};

/// Learning rate used during the 0-based epoch `epoch`.
inline double learning_rate(const OptimConfig& o, std::size_t epoch) {
    double lr = o.lr;
    for (std::size_t m : o.milestones)
        if (epoch >= m) lr *= o.decay;
    return lr;
}

/// Heavy-ball SGD: v = mu v + g, w -= lr v. No weight decay.
class Sgd {
public:
    Sgd(std::vector<Tensor> params, double momentum) : params_(std::move(params)), momentum_(momentum) {
        for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
    }

    void step(const GradientMap& grads, double lr) {
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = params_[k];
            const Tensor g = grads(p);
            auto w = p.mutable_values();
            auto& v = velocity_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                v[i] = momentum_ * v[i] + g[i];
                w[i] -= lr * v[i];
            }
            detail::check_finite(w, "parameters after optimizer step");
        }
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double momentum_;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double eval_nme = 0.0;
    double loss_qt = 0.0, loss_qt1 = 0.0, loss_qg = 0.0;
};

struct TrainOptions {
    OptimConfig optim;
    LossWeights weights;
    AugmentConfig augment;
    bool use_augment = true;
    std::uint64_t seed = 0;
    std::function<void(const EpochMetrics&)> on_epoch;  // optional progress hook
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    double untrained_nme = 0.0;
};

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Trains in place. Shuffling and augmentation draw from the (seed, "shuffle"/"augment", epoch)
/// streams, so a run is a pure function of its inputs.
inline TrainResult train(ModelParams& m, const Dataset& train_set, const Dataset& eval_set, const TrainOptions& opt) {
    if (train_set.empty()) throw ContractError("train: empty training set");
    if (opt.optim.batch_size == 0) throw ConfigError("optim.batch_size must be >= 1");
    TrainResult result;
    if (!eval_set.empty()) result.untrained_nme = mean_of(per_image_nme(m, eval_set));
    Sgd sgd(trainable_parameters(m), opt.optim.momentum);
    const bool regularized = select_variant(m.config).regularized;

    for (std::size_t epoch = 0; epoch < opt.optim.epochs; ++epoch) {
        const double lr = learning_rate(opt.optim, epoch);
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = make_stream(opt.seed, "shuffle", epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        Dataset epoch_data;
        const Dataset* source = &train_set;
        if (opt.use_augment) {
            Rng aug_rng = make_stream(opt.seed, "augment", epoch);
            epoch_data.reserve(train_set.size());
            for (const auto& s : train_set) epoch_data.push_back(augment(s, aug_rng, opt.augment));
            source = &epoch_data;
        }

        std::vector<double> losses, qt, qt1, qg;
        for (std::size_t first = 0; first < order.size(); first += opt.optim.batch_size) {
            const std::size_t n = std::min(opt.optim.batch_size, order.size() - first);
            auto [img, gt] = make_batch(*source, order, first, n);
            try {
                GradientTape tape;
                const StepLosses s = batch_objective(img, gt, m, opt.weights, Mode::train);
                const GradientMap g = tape.backward(s.objective);
                sgd.step(g, lr);
                losses.push_back(s.objective.item());
                if (regularized) {
                    qt.push_back(s.loss_qt);
                    qt1.push_back(s.loss_qt1);
                    qg.push_back(s.loss_qg);
                }
            } catch (const NonFiniteError& e) {
                std::ostringstream msg;
                msg << "training diverged at epoch " << epoch + 1 << ", batch " << first / opt.optim.batch_size
                    << " (lr " << lr << "): " << e.what();
                throw NonFiniteError(msg.str());
            }
        }
        ++m.epochs_trained;
        EpochMetrics em;
        em.epoch = epoch + 1;
        em.lr = lr;
        em.train_loss = mean_of(losses);
        em.eval_nme = eval_set.empty() ? 0.0 : mean_of(per_image_nme(m, eval_set));
        em.loss_qt = mean_of(qt);
        em.loss_qt1 = mean_of(qt1);
        em.loss_qg = mean_of(qg);
        result.epochs.push_back(em);
        if (opt.on_epoch) opt.on_epoch(em);
    }
    return result;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(12);
    out << "epoch,lr,train_loss,eval_nme,loss_qt,loss_qt1,loss_qg\n";
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.eval_nme << ',' << r.loss_qt << ','
            << r.loss_qt1 << ',' << r.loss_qg << '\n';
    }
}

}  // namespace ccdn
