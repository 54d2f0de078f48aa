// tspformer command line: data generation and labeling, training, solving,
// evaluation tables, ablation sweeps and positional-encoding dumps.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tspformer/ablation.hpp"
#include "tspformer/checkpoint.hpp"
#include "tspformer/dataset.hpp"
#include "tspformer/decode.hpp"
#include "tspformer/error.hpp"
#include "tspformer/eval.hpp"
#include "tspformer/model.hpp"
#include "tspformer/oracle.hpp"
#include "tspformer/posenc.hpp"
#include "tspformer/train.hpp"
#include "tspformer/tsp.hpp"

namespace {

using namespace tspformer;

oracle::Method parse_method(const std::string& name) {
    if (name == "held_karp") return oracle::Method::held_karp;
    if (name == "nn") return oracle::Method::nearest_neighbor;
    if (name == "nn+2opt") return oracle::Method::two_opt;
    throw ConfigError("unknown labeling method '" + name + "' (held_karp, nn, nn+2opt)");
}

struct ModelFlags {
    model::ModelConfig cfg;
    std::string encoder_pe = "spatial";
    std::string decoder_pe = "circular";
    std::string decoder_input = "memory";
    std::string output_head = "dynamic_embedding";

    void add_to(CLI::App* cmd) {
        cmd->add_option("--d", cfg.d, "embedding dimension");
        cmd->add_option("--layers", cfg.layers, "encoder/decoder layers");
        cmd->add_option("--heads", cfg.heads, "attention heads");
        cmd->add_option("--ffn", cfg.ffn_dim, "feed-forward hidden dim (0 = 4*d)");
        cmd->add_option("--dropout", cfg.dropout, "dropout rate");
        cmd->add_option("--encoder-pe", encoder_pe, "none|spatial");
        cmd->add_option("--decoder-pe", decoder_pe, "sinusoidal|circular");
        cmd->add_option("--decoder-input", decoder_input, "memory|shared_lut|unshared_lut");
        cmd->add_option("--output-head", output_head, "dynamic_embedding|encoder_lut");
        cmd->add_option("--pe-scale", cfg.pe_scale, "spatial PE coordinate scale");
        cmd->add_option("--max-nodes", cfg.max_nodes, "unshared LUT capacity");
    }

    model::ModelConfig resolve() const {
        model::ModelConfig out = cfg;
        if (encoder_pe == "none") {
            out.encoder_pe = model::EncoderPe::none;
        } else if (encoder_pe == "spatial") {
            out.encoder_pe = model::EncoderPe::spatial;
        } else {
            throw ConfigError("bad --encoder-pe '" + encoder_pe + "'");
        }
        if (decoder_pe == "sinusoidal") {
            out.decoder_pe = model::DecoderPe::sinusoidal;
        } else if (decoder_pe == "circular") {
            out.decoder_pe = model::DecoderPe::circular;
        } else {
            throw ConfigError("bad --decoder-pe '" + decoder_pe + "'");
        }
        if (decoder_input == "memory") {
            out.decoder_input = model::DecoderInput::memory;
        } else if (decoder_input == "shared_lut") {
            out.decoder_input = model::DecoderInput::shared_lut;
        } else if (decoder_input == "unshared_lut") {
            out.decoder_input = model::DecoderInput::unshared_lut;
        } else {
            throw ConfigError("bad --decoder-input '" + decoder_input + "'");
        }
        if (output_head == "dynamic_embedding") {
            out.output_head = model::OutputHead::dynamic_embedding;
        } else if (output_head == "encoder_lut") {
            out.output_head = model::OutputHead::encoder_lut;
        } else {
            throw ConfigError("bad --output-head '" + output_head + "'");
        }
        out.validate();
        return out;
    }
};

struct TrainFlags {
    train::TrainConfig cfg;
    bool no_augment = false;
    bool no_train_mask = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--batch", cfg.batch, "batch size");
        cmd->add_option("--epochs", cfg.epochs, "training epochs");
        cmd->add_option("--warmup", cfg.warmup, "lr warmup steps");
        cmd->add_option("--label-smoothing", cfg.label_smoothing, "smoothing over feasible entries");
        cmd->add_option("--seed", cfg.seed, "training seed");
        cmd->add_option("--lr-factor", cfg.lr_factor, "lr schedule factor");
        cmd->add_option("--val-frac", cfg.val_frac, "held-out validation fraction");
        cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
        cmd->add_option("--grad-clip", cfg.grad_clip, "global-norm clip (0 = off)");
        cmd->add_flag("--no-augment", no_augment, "disable rotation+flip tour augmentation");
        cmd->add_flag("--no-train-mask", no_train_mask, "drop the visited mask from the training softmax");
    }

    train::TrainConfig resolve() const {
        train::TrainConfig out = cfg;
        out.augment = !no_augment;
        out.visited_mask_in_training = !no_train_mask;
        out.validate();
        return out;
    }
};

CoordPolicy coord_policy(bool strict) {
    return strict ? CoordPolicy::strict : CoordPolicy::clamp;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        const std::size_t comma = csv.find(',', pos);
        const std::string item = csv.substr(pos, comma == std::string::npos ? csv.size() - pos
                                                                            : comma - pos);
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

int cmd_gen(int n, long count, std::uint64_t seed, const std::string& out) {
    if (n < 3) throw ConfigError("--n must be >= 3");
    if (count < 0) throw ConfigError("--count must be >= 0");
    Dataset ds;
    ds.records.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        DatasetRecord rec;
        rec.instance = gen_instance(n, seed + static_cast<std::uint64_t>(i));
        ds.records.push_back(std::move(rec));
    }
    write_dataset(out, ds);
    std::cout << "wrote " << count << " instances (n=" << n << ") to " << out << "\n";
    return 0;
}

int cmd_label(const std::string& in, const std::string& out, const std::string& method,
              unsigned threads, bool strict) {
    const oracle::Method m = parse_method(method);
    const Dataset src = read_dataset(in, coord_policy(strict));
    std::vector<Instance> instances;
    instances.reserve(src.records.size());
    for (const auto& rec : src.records) instances.push_back(rec.instance);
    Dataset dst;
    dst.metadata.emplace_back("method", method);
    dst.records = oracle::label_dataset(instances, m, threads);
    write_dataset(out, dst);
    std::cout << "labeled " << dst.records.size() << " instances with " << method << " -> " << out
              << "\n";
    return 0;
}

int cmd_train(const std::string& data, const std::string& out_ckpt, const std::string& metrics,
              const ModelFlags& mf, const TrainFlags& tf, const std::string& resume, bool quiet,
              bool strict) {
    const Dataset ds = read_dataset(data, coord_policy(strict));
    require_uniform_labeled(ds);

    train::Checkpoint resumed;
    const train::Checkpoint* resume_ptr = nullptr;
    if (!resume.empty()) {
        resumed = train::load_checkpoint(resume);
        resume_ptr = &resumed;
    }
    train::TrainResult result = train::train(ds.records, mf.resolve(), tf.resolve(), resume_ptr,
                                             quiet ? nullptr : &std::cout);
    train::save_checkpoint(out_ckpt, result.checkpoint);
    if (!metrics.empty()) write_text_atomic(metrics, train::metrics_csv(result.metrics));
    std::cout << "trained " << result.checkpoint.step << " steps -> " << out_ckpt << "\n";
    return 0;
}

int cmd_solve(const std::string& ckpt_path, const std::string& in, const std::string& decode,
              const std::string& out, unsigned threads, bool strict) {
    if (decode != "greedy" && decode != "multistart") {
        throw ConfigError("--decode must be greedy or multistart");
    }
    train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
    const Dataset ds = read_dataset(in, coord_policy(strict));
    if (ds.records.empty()) throw ValidationError("no instances in " + in);

    std::vector<Tour> tours(ds.records.size());
    parallel_for(ds.records.size(), threads, [&](std::size_t i) {
        const Instance& inst = ds.records[i].instance;
        tours[i] = decode == "greedy" ? infer::greedy_decode(ckpt.params, inst, 0)
                                      : infer::multi_start_decode(ckpt.params, inst).tour;
    });

    std::string content;
    for (const Tour& t : tours) {
        for (int v : t.order) {
            content += std::to_string(v + 1);
            content += ' ';
        }
        content += std::to_string(t.order.front() + 1);
        content += '\n';
    }
    write_text_atomic(out, content);
    std::cout << "solved " << tours.size() << " instances (" << decode << ") -> " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& test, const std::string& baselines,
             const std::string& out_csv, unsigned threads, bool strict) {
    const Dataset ds = read_dataset(test, coord_policy(strict));
    train::Checkpoint ckpt;
    model::ModelParams<float>* params = nullptr;
    if (!ckpt_path.empty()) {
        ckpt = train::load_checkpoint(ckpt_path);
        params = &ckpt.params;
    }
    const eval::EvalReport report = eval::evaluate(ds.records, split_list(baselines), params, threads);
    std::cout << eval::report_table(report);
    if (!out_csv.empty()) write_text_atomic(out_csv, eval::report_csv(report));
    return 0;
}

int cmd_ablate(const std::string& data, const std::string& test, const std::string& grid,
               const std::string& out_csv, const std::string& ckpt_dir, const ModelFlags& mf,
               const TrainFlags& tf, unsigned threads, bool strict) {
    const Dataset train_ds = read_dataset(data, coord_policy(strict));
    require_uniform_labeled(train_ds);
    const Dataset test_ds = read_dataset(test, coord_policy(strict));
    require_uniform_labeled(test_ds);

    auto results = eval::run_ablation(train_ds.records, test_ds.records, mf.resolve(), tf.resolve(),
                                      grid, threads, &std::cout);
    if (!out_csv.empty()) write_text_atomic(out_csv, eval::ablation_csv(results));
    if (!ckpt_dir.empty()) {
        std::filesystem::create_directories(ckpt_dir);
        for (auto& r : results) {
            if (!r.ok) continue;
            std::string name = r.cell.axis + "_" + r.cell.label;
            for (char& c : name) {
                if (c == '+' || c == '/' || c == ' ') c = '-';
            }
            train::save_checkpoint((std::filesystem::path(ckpt_dir) / (name + ".ckpt")).string(),
                                   r.checkpoint);
        }
    }
    int failed = 0;
    for (const auto& r : results) {
        if (!r.ok) ++failed;
    }
    std::cout << "ablation cells: " << results.size() << ", failed: " << failed << "\n";
    return failed == 0 ? 0 : 1;
}

int cmd_pe_dump(const std::string& kind, int n, int d, double scale, const std::string& out) {
    num::Tensor<double> sim;
    if (kind == "sinusoidal") {
        sim = pe::pe_similarity_matrix(pe::sinusoidal_table<double>(n, d));
    } else if (kind == "circular") {
        sim = pe::pe_similarity_matrix(pe::circular_table<double>(n, d));
    } else if (kind == "spatial") {
        sim = pe::pe_similarity_matrix(pe::spatial_table<double>(gen_instance(n, 0), d, scale));
    } else {
        throw ConfigError("--kind must be sinusoidal, circular or spatial");
    }
    write_text_atomic(out + ".csv", pe::similarity_csv(sim));
    write_text_atomic(out + ".pgm", pe::similarity_pgm(sim));
    std::cout << "wrote " << out << ".csv and " << out << ".pgm\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"transformer TSP solver with cyclic decoder encodings"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate random unit-square instances");
    int gen_n = 10;
    long gen_count = 0;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "nodes per instance")->required();
    gen->add_option("--count", gen_count, "instance count")->required();
    gen->add_option("--seed", gen_seed, "base seed; instance i uses seed+i");
    gen->add_option("--out", gen_out, "output dataset file")->required();

    // label
    auto* label = app.add_subcommand("label", "solve instances and attach reference tours");
    std::string label_in, label_out, label_method = "held_karp";
    unsigned label_threads = 0;
    label->add_option("--in", label_in)->required();
    label->add_option("--out", label_out)->required();
    label->add_option("--method", label_method, "held_karp|nn|nn+2opt");
    label->add_option("--threads", label_threads, "solver threads (0 = hardware)");
    bool label_strict = false;
    label->add_flag("--strict-coords", label_strict, "reject coordinates outside the unit square");

    // train
    auto* tr = app.add_subcommand("train", "supervised teacher-forced training");
    std::string train_data, train_out, train_metrics, train_resume;
    bool train_quiet = false;
    ModelFlags train_mf;
    TrainFlags train_tf;
    tr->add_option("--data", train_data, "labeled dataset")->required();
    tr->add_option("--out", train_out, "checkpoint path")->required();
    tr->add_option("--metrics", train_metrics, "metrics CSV path");
    tr->add_option("--resume", train_resume, "checkpoint to continue from");
    tr->add_flag("--quiet", train_quiet, "suppress per-epoch log lines");
    bool train_strict = false;
    tr->add_flag("--strict-coords", train_strict, "reject coordinates outside the unit square");
    train_mf.add_to(tr);
    train_tf.add_to(tr);

    // solve
    auto* solve = app.add_subcommand("solve", "decode tours for a dataset");
    std::string solve_ckpt, solve_in, solve_decode = "greedy", solve_out;
    unsigned solve_threads = 0;
    solve->add_option("--ckpt", solve_ckpt)->required();
    solve->add_option("--in", solve_in)->required();
    solve->add_option("--decode", solve_decode, "greedy|multistart");
    solve->add_option("--out", solve_out)->required();
    solve->add_option("--threads", solve_threads, "decode threads (0 = hardware)");
    bool solve_strict = false;
    solve->add_flag("--strict-coords", solve_strict, "reject coordinates outside the unit square");

    // eval
    auto* ev = app.add_subcommand("eval", "gap table against labeled references");
    std::string eval_ckpt, eval_test, eval_baselines = "nn,2opt", eval_out;
    unsigned eval_threads = 0;
    ev->add_option("--ckpt", eval_ckpt, "checkpoint (omit for baselines only)");
    ev->add_option("--test", eval_test, "labeled test set")->required();
    ev->add_option("--baselines", eval_baselines, "comma list: nn,2opt,held_karp");
    ev->add_option("--out", eval_out, "CSV output path");
    ev->add_option("--threads", eval_threads, "threads (0 = hardware)");
    bool eval_strict = false;
    ev->add_flag("--strict-coords", eval_strict, "reject coordinates outside the unit square");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train/eval a configuration grid");
    std::string ab_data, ab_test, ab_grid = "all", ab_out, ab_ckpt_dir;
    unsigned ab_threads = 0;
    ModelFlags ab_mf;
    TrainFlags ab_tf;
    ab->add_option("--data", ab_data, "labeled training dataset")->required();
    ab->add_option("--test", ab_test, "labeled test set")->required();
    ab->add_option("--grid", ab_grid, "pe|decoder-input|output-head|all");
    ab->add_option("--out", ab_out, "comparison CSV path");
    ab->add_option("--ckpt-dir", ab_ckpt_dir, "directory for per-cell checkpoints");
    ab->add_option("--threads", ab_threads, "eval threads (0 = hardware)");
    bool ab_strict = false;
    ab->add_flag("--strict-coords", ab_strict, "reject coordinates outside the unit square");
    ab_mf.add_to(ab);
    ab_tf.add_to(ab);

    // pe-dump
    auto* pd = app.add_subcommand("pe-dump", "similarity matrix of a positional encoding");
    std::string pd_kind = "circular", pd_out;
    int pd_n = 50, pd_d = 128;
    double pd_scale = pe::kTwoPi;
    pd->add_option("--kind", pd_kind, "sinusoidal|circular|spatial");
    pd->add_option("--n", pd_n, "positions / nodes");
    pd->add_option("--d", pd_d, "encoding dimension");
    pd->add_option("--scale", pd_scale, "spatial coordinate scale");
    pd->add_option("--out", pd_out, "output basename (.csv and .pgm appended)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(gen)) return cmd_gen(gen_n, gen_count, gen_seed, gen_out);
        if (app.got_subcommand(label)) {
            return cmd_label(label_in, label_out, label_method, label_threads, label_strict);
        }
        if (app.got_subcommand(tr)) {
            return cmd_train(train_data, train_out, train_metrics, train_mf, train_tf, train_resume,
                             train_quiet, train_strict);
        }
        if (app.got_subcommand(solve)) {
            return cmd_solve(solve_ckpt, solve_in, solve_decode, solve_out, solve_threads, solve_strict);
        }
        if (app.got_subcommand(ev)) {
            return cmd_eval(eval_ckpt, eval_test, eval_baselines, eval_out, eval_threads, eval_strict);
        }
        if (app.got_subcommand(ab)) {
            return cmd_ablate(ab_data, ab_test, ab_grid, ab_out, ab_ckpt_dir, ab_mf, ab_tf, ab_threads,
                              ab_strict);
        }
        if (app.got_subcommand(pd)) return cmd_pe_dump(pd_kind, pd_n, pd_d, pd_scale, pd_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
