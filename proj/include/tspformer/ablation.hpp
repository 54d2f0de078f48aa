#pragma once

#include <exception>
#include <ostream>
#include <string>
#include <vector>

#include "tspformer/dataset.hpp"
#include "tspformer/eval.hpp"
#include "tspformer/model.hpp"
#include "tspformer/train.hpp"

namespace tspformer::eval {

struct AblationCell {
    std::string axis;
    std::string label;
    model::ModelConfig config;
};

/// The three studied axes: encoder PE x decoder PE, decoder input source,
/// and the output head. Every cell inherits the base configuration.
inline std::vector<AblationCell> ablation_grid(const model::ModelConfig& base, const std::string& axis) {
    std::vector<AblationCell> cells;
    auto add = [&](const std::string& ax, const std::string& label, model::ModelConfig cfg) {
        cells.push_back(AblationCell{ax, label, cfg});
    };
    const bool all = axis == "all";
    if (all || axis == "pe") {
        for (model::EncoderPe epe : {model::EncoderPe::none, model::EncoderPe::spatial}) {
            for (model::DecoderPe dpe : {model::DecoderPe::sinusoidal, model::DecoderPe::circular}) {
                model::ModelConfig cfg = base;
                cfg.encoder_pe = epe;
                cfg.decoder_pe = dpe;
                add("pe", std::string(model::to_string(epe)) + "+" + model::to_string(dpe), cfg);
            }
        }
    }
    if (all || axis == "decoder-input") {
        for (model::DecoderInput di : {model::DecoderInput::memory, model::DecoderInput::shared_lut,
                                       model::DecoderInput::unshared_lut}) {
            model::ModelConfig cfg = base;
            cfg.decoder_input = di;
            add("decoder-input", model::to_string(di), cfg);
        }
    }
    if (all || axis == "output-head") {
        for (model::OutputHead oh : {model::OutputHead::dynamic_embedding, model::OutputHead::encoder_lut}) {
            model::ModelConfig cfg = base;
            cfg.output_head = oh;
            add("output-head", model::to_string(oh), cfg);
        }
    }
    if (cells.empty()) {
        throw ConfigError("ablation: unknown axis '" + axis + "' (expected pe, decoder-input, output-head, all)");
    }
    return cells;
}

struct AblationResult {
    AblationCell cell;
    bool ok = false;
    std::string error;
    double final_train_loss = 0.0;
    double greedy_gap_percent = 0.0;
    std::uint64_t seed = 0;
    train::Checkpoint checkpoint; // valid when ok
};

/// Trains and evaluates every cell with identical data, seeds and budget, so
/// differences come only from the axis under study. A failing cell is marked
/// and the rest continue.
inline std::vector<AblationResult> run_ablation(const std::vector<DatasetRecord>& train_records,
                                                const std::vector<DatasetRecord>& test_records,
                                                const model::ModelConfig& base,
                                                const train::TrainConfig& tcfg, const std::string& axis,
                                                unsigned threads = 1, std::ostream* log = nullptr) {
    std::vector<AblationResult> results;
    for (const AblationCell& cell : ablation_grid(base, axis)) {
        AblationResult res;
        res.cell = cell;
        res.seed = tcfg.seed;
        if (log) (*log) << "[ablate] " << cell.axis << " / " << cell.label << "\n";
        try {
            train::TrainResult tr = train::train(train_records, cell.config, tcfg);
            res.final_train_loss = tr.metrics.empty() ? 0.0 : tr.metrics.back().train_loss;
            EvalRow row = detail::timed_row(
                "model", "greedy", test_records, threads, [&](const DatasetRecord& r) {
                    return tour_length(r.instance,
                                       infer::greedy_decode(tr.checkpoint.params, r.instance, 0));
                });
            res.greedy_gap_percent = row.mean_gap_percent;
            res.checkpoint = std::move(tr.checkpoint);
            res.ok = true;
        } catch (const std::exception& e) {
            res.ok = false;
            res.error = e.what();
        }
        if (log) {
            if (res.ok) {
                (*log) << "[ablate]   greedy gap% " << res.greedy_gap_percent << "\n";
            } else {
                (*log) << "[ablate]   FAILED: " << res.error << "\n";
            }
        }
        results.push_back(std::move(res));
    }
    return results;
}

inline std::string ablation_csv(const std::vector<AblationResult>& results) {
    std::string out =
        "axis,cell,encoder_pe,decoder_pe,decoder_input,output_head,seed,status,final_train_loss,"
        "greedy_gap_percent\n";
    for (const auto& r : results) {
        const model::ModelConfig& c = r.cell.config;
        out += r.cell.axis + ',' + r.cell.label + ',' + model::to_string(c.encoder_pe) + ',' +
               model::to_string(c.decoder_pe) + ',' + model::to_string(c.decoder_input) + ',' +
               model::to_string(c.output_head) + ',' + std::to_string(r.seed) + ',' +
               (r.ok ? "ok" : "failed") + ',' + format_double(r.final_train_loss) + ',' +
               (r.ok ? format_double(r.greedy_gap_percent) : std::string("")) + '\n';
    }
    return out;
}

} // namespace tspformer::eval
