#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "tspformer/autograd.hpp"
#include "tspformer/checkpoint.hpp"
#include "tspformer/dataset.hpp"
#include "tspformer/decode.hpp"
#include "tspformer/error.hpp"
#include "tspformer/model.hpp"
#include "tspformer/optim.hpp"
#include "tspformer/tsp.hpp"

namespace tspformer::train {

/// Shifted next-node targets: row i of the teacher-forced output predicts
/// tour.order[i+1], which is exactly the node the visited mask of the same
/// row leaves open.
inline std::vector<int> target_indices(const Tour& gt) {
    if (gt.n() < 2) throw ValidationError("target_indices: tour too short");
    return std::vector<int>(gt.order.begin() + 1, gt.order.end());
}

/// One-hot [(N-1) x N] form of the targets.
template <class Scalar>
num::Tensor<Scalar> make_targets(const Tour& gt) {
    const std::size_t n = static_cast<std::size_t>(gt.n());
    num::Tensor<Scalar> y({n - 1, n});
    const std::vector<int> idx = target_indices(gt);
    for (std::size_t r = 0; r + 1 < n; ++r) y.at(r, static_cast<std::size_t>(idx[r])) = Scalar(1);
    return y;
}

/// Direct evaluation of the per-instance loss from probabilities; the
/// training path goes through log-softmax instead, this form backs tests and
/// reporting. Feasible entries are those with nonzero probability (masked
/// ones are exactly zero).
template <class Scalar>
double instance_loss(const num::Tensor<Scalar>& probs, const num::Tensor<Scalar>& y_gt, double eps) {
    if (!probs.same_shape(y_gt)) throw ShapeError("instance_loss: shape mismatch");
    const std::size_t rows = probs.dim(0), cols = probs.dim(1);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t target = cols, feasible = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            if (y_gt.at(r, j) != Scalar(0)) target = j;
            if (probs.at(r, j) > Scalar(0)) ++feasible;
        }
        if (target == cols) throw ValidationError("instance_loss: row without a target");
        const double pt = static_cast<double>(probs.at(r, target));
        if (!(pt > 0.0)) throw NumericError("instance_loss: target has probability 0");
        if (eps == 0.0 || feasible <= 1) {
            total -= std::log(pt);
            continue;
        }
        total -= (1.0 - eps) * std::log(pt);
        const double off = eps / static_cast<double>(feasible - 1);
        for (std::size_t j = 0; j < cols; ++j) {
            if (j == target || !(probs.at(r, j) > Scalar(0))) continue;
            total -= off * std::log(static_cast<double>(probs.at(r, j)));
        }
    }
    return total;
}

/// Inverse-square-root warmup curve:
/// lr = factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5), step >= 1.
inline double lr_schedule(std::uint64_t step, int d, int warmup, double factor) {
    if (step < 1) throw ConfigError("lr_schedule: step must be >= 1");
    if (warmup < 1) throw ConfigError("lr_schedule: warmup must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup);
    return factor / std::sqrt(static_cast<double>(d)) *
           std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

struct TrainConfig {
    int batch = 64;
    int epochs = 20;
    int warmup = 400;
    double label_smoothing = 0.1;
    bool augment = true;
    std::uint64_t seed = 0;
    // 0.5 keeps the post-norm stack on the stable side of its lr cliff; at
    // 1.0 the encoder rows collapse to one direction early in training and
    // the head never recovers from predicting uniform
    double lr_factor = 0.5;
    double val_frac = 0.05;
    double weight_decay = 0.01;
    double grad_clip = 0.0; // off by default
    bool visited_mask_in_training = true;

    void validate() const {
        if (batch < 1) throw ConfigError("train: batch must be >= 1");
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (warmup < 1) throw ConfigError("train: warmup must be >= 1");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
            throw ConfigError("train: label smoothing must be in [0,1)");
        }
        if (val_frac < 0.0 || val_frac >= 1.0) throw ConfigError("train: val fraction must be in [0,1)");
    }
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double val_gap_percent = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochMetrics> metrics;
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
    std::string out = "epoch,train_loss,val_gap_percent\n";
    for (const auto& m : metrics) {
        out += std::to_string(m.epoch);
        out += ',';
        out += format_double(m.train_loss);
        out += ',';
        out += format_double(m.val_gap_percent);
        out += '\n';
    }
    return out;
}

/// Mean greedy-decode gap (start node 0) against the records' labels.
inline double mean_greedy_gap(model::ModelParams<float>& params,
                              const std::vector<const DatasetRecord*>& records) {
    if (records.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (const DatasetRecord* rec : records) {
        const Tour t = infer::greedy_decode(params, rec->instance, 0);
        sum += optimality_gap(tour_length(rec->instance, t), rec->optimal_length);
    }
    return sum / static_cast<double>(records.size());
}

/// Supervised teacher-forced training. Deterministic for a fixed seed: the
/// run is single-threaded and every random draw (shuffle, augmentation,
/// dropout) comes from one stream in a fixed order. Pass `resume` to
/// continue a run; the model configuration then comes from the checkpoint.
inline TrainResult train(const std::vector<DatasetRecord>& records, const model::ModelConfig& mcfg,
                         const TrainConfig& tcfg, const Checkpoint* resume = nullptr,
                         std::ostream* log = nullptr) {
    tcfg.validate();
    if (records.empty()) throw ValidationError("train: dataset is empty");
    const int n = records.front().instance.n();
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].labeled()) throw ValidationError("train: record " + std::to_string(i) + " unlabeled");
        if (records[i].instance.n() != n) {
            throw ValidationError("train: mixed instance sizes (record " + std::to_string(i) + ")");
        }
    }

    const std::size_t val_count = static_cast<std::size_t>(
        std::floor(tcfg.val_frac * static_cast<double>(records.size())));
    const std::size_t train_count = records.size() - val_count;
    if (train_count == 0) throw ValidationError("train: no training records after the validation split");

    Checkpoint ck = resume ? *resume
                           : Checkpoint{model::ModelParams<float>::init(mcfg, tcfg.seed), 0, tcfg.seed};
    model::ModelParams<float>& params = ck.params;
    auto all_params = params.all();

    num::AdamW<float> opt;
    opt.weight_decay = tcfg.weight_decay;
    opt.set_step_count(ck.step);

    std::vector<const DatasetRecord*> val_records;
    for (std::size_t i = train_count; i < records.size(); ++i) val_records.push_back(&records[i]);

    std::vector<std::size_t> order(train_count);
    std::iota(order.begin(), order.end(), std::size_t{0});

    Rng rng(tcfg.seed);
    TrainResult result;

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t instances_seen = 0;

        for (std::size_t begin = 0; begin < train_count; begin += static_cast<std::size_t>(tcfg.batch)) {
            const std::size_t end = std::min(begin + static_cast<std::size_t>(tcfg.batch), train_count);
            const std::size_t bsz = end - begin;

            std::vector<const Instance*> batch_inst(bsz);
            std::vector<Tour> batch_tours(bsz);
            std::vector<const Tour*> batch_tour_ptrs(bsz);
            for (std::size_t i = 0; i < bsz; ++i) {
                const DatasetRecord& rec = records[order[begin + i]];
                batch_inst[i] = &rec.instance;
                if (tcfg.augment) {
                    const int rot = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                    batch_tours[i] = augment_tour(*rec.optimal_tour, rot, rng.coin());
                } else {
                    batch_tours[i] = *rec.optimal_tour;
                }
                batch_tour_ptrs[i] = &batch_tours[i];
            }

            num::Tape<float> tape;
            model::Fwd<float> f{tape, params, true, &rng};
            model::TeacherForced<float> tf = model::teacher_forced_logits(f, batch_inst, batch_tour_ptrs);
            const num::Tensor<float>* mask = tcfg.visited_mask_in_training ? &tf.visited_mask : nullptr;
            num::Node<float>* logp = num::log_softmax_masked(tape, tf.logits, mask);

            std::vector<int> targets;
            targets.reserve(bsz * static_cast<std::size_t>(n - 1));
            for (std::size_t i = 0; i < bsz; ++i) {
                for (int t : target_indices(batch_tours[i])) targets.push_back(t);
            }
            num::Node<float>* ce =
                num::cross_entropy_smoothed(tape, logp, targets, tcfg.label_smoothing, mask);

            const double batch_total = static_cast<double>(ce->value[0]);
            if (!std::isfinite(batch_total)) {
                throw NumericError("train: non-finite loss at step " + std::to_string(opt.step_count() + 1));
            }
            num::Node<float>* loss = num::scale(tape, ce, 1.0f / static_cast<float>(bsz));
            tape.backward(loss);

            num::clip_grad_norm(all_params, tcfg.grad_clip);
            const double lr = lr_schedule(opt.step_count() + 1, params.config.d, tcfg.warmup, tcfg.lr_factor);
            opt.step(all_params, lr);

            loss_sum += batch_total;
            instances_seen += bsz;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = instances_seen ? loss_sum / static_cast<double>(instances_seen) : 0.0;
        m.val_gap_percent = mean_greedy_gap(params, val_records);
        result.metrics.push_back(m);
        if (log) {
            (*log) << "epoch " << epoch << "  train_loss " << m.train_loss << "  val_gap% "
                   << m.val_gap_percent << "\n";
        }
    }

    ck.step = opt.step_count();
    result.checkpoint = std::move(ck);
    return result;
}

} // namespace tspformer::train
