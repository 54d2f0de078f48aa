#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tspformer/autograd.hpp"
#include "tspformer/error.hpp"
#include "tspformer/nn.hpp"
#include "tspformer/posenc.hpp"
#include "tspformer/rng.hpp"
#include "tspformer/tensor.hpp"
#include "tspformer/tsp.hpp"

namespace tspformer::model {

using num::Node;
using num::Parameter;
using num::Tape;
using num::Tensor;

enum class EncoderPe : std::uint8_t { none = 0, spatial = 1 };
enum class DecoderPe : std::uint8_t { sinusoidal = 0, circular = 1 };
enum class DecoderInput : std::uint8_t { memory = 0, shared_lut = 1, unshared_lut = 2 };
enum class OutputHead : std::uint8_t { dynamic_embedding = 0, encoder_lut = 1 };

inline const char* to_string(EncoderPe v) { return v == EncoderPe::none ? "none" : "spatial"; }
inline const char* to_string(DecoderPe v) {
    return v == DecoderPe::sinusoidal ? "sinusoidal" : "circular";
}
inline const char* to_string(DecoderInput v) {
    switch (v) {
        case DecoderInput::memory: return "memory";
        case DecoderInput::shared_lut: return "shared_lut";
        case DecoderInput::unshared_lut: return "unshared_lut";
    }
    return "?";
}
inline const char* to_string(OutputHead v) {
    return v == OutputHead::dynamic_embedding ? "dynamic_embedding" : "encoder_lut";
}

struct ModelConfig {
    int d = 128;
    int layers = 6;
    int heads = 8;
    int ffn_dim = 0; // 0 means 4*d
    double dropout = 0.1;
    EncoderPe encoder_pe = EncoderPe::spatial;
    DecoderPe decoder_pe = DecoderPe::circular;
    DecoderInput decoder_input = DecoderInput::memory;
    OutputHead output_head = OutputHead::dynamic_embedding;
    double pe_scale = pe::kTwoPi;
    int max_nodes = 128; // row count of the unshared-LUT table

    int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * d; }

    void validate() const {
        if (layers < 1) throw ConfigError("model: layers must be >= 1");
        if (heads < 1 || d % heads != 0) throw ConfigError("model: d must be divisible by heads");
        if (d % 2 != 0) throw ConfigError("model: d must be even for the decoder PE");
        if (encoder_pe == EncoderPe::spatial && d % 4 != 0) {
            throw ConfigError("model: d must be divisible by 4 for spatial PE");
        }
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
        if (decoder_input == DecoderInput::unshared_lut && max_nodes < 3) {
            throw ConfigError("model: max_nodes too small for the unshared LUT");
        }
    }
};

template <class Scalar>
struct EncoderLayer {
    num::MhaParams<Scalar> self;
    num::FfnParams<Scalar> ff;
    num::LayerNormParams<Scalar> ln1, ln2;

    EncoderLayer() = default;
    EncoderLayer(const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
        : self(name + ".self", d, rng),
          ff(name + ".ff", d, hidden, rng),
          ln1(name + ".ln1", d),
          ln2(name + ".ln2", d) {}

    void collect(std::vector<Parameter<Scalar>*>& out) {
        self.collect(out);
        ff.collect(out);
        ln1.collect(out);
        ln2.collect(out);
    }
};

template <class Scalar>
struct DecoderLayer {
    num::MhaParams<Scalar> self, cross;
    num::FfnParams<Scalar> ff;
    num::LayerNormParams<Scalar> ln1, ln2, ln3;

    DecoderLayer() = default;
    DecoderLayer(const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
        : self(name + ".self", d, rng),
          cross(name + ".cross", d, rng),
          ff(name + ".ff", d, hidden, rng),
          ln1(name + ".ln1", d),
          ln2(name + ".ln2", d),
          ln3(name + ".ln3", d) {}

    void collect(std::vector<Parameter<Scalar>*>& out) {
        self.collect(out);
        cross.collect(out);
        ff.collect(out);
        ln1.collect(out);
        ln2.collect(out);
        ln3.collect(out);
    }
};

/// All learnable state. There is no output projection in any configuration:
/// the output head reuses the encoder output (or the input embedding), so
/// the parameter count is exactly embedding + encoder stack + decoder stack
/// (+ LUT table for the unshared-LUT variant). Nothing depends on the
/// instance size.
template <class Scalar>
struct ModelParams {
    ModelConfig config;
    Parameter<Scalar> we; // [2, d]
    Parameter<Scalar> be; // [d]
    std::vector<EncoderLayer<Scalar>> encoder;
    std::vector<DecoderLayer<Scalar>> decoder;
    std::optional<Parameter<Scalar>> lut; // [max_nodes, d] for unshared_lut

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        ModelParams p;
        p.config = cfg;
        Rng rng(seed);
        const std::size_t d = static_cast<std::size_t>(cfg.d);
        const std::size_t hidden = static_cast<std::size_t>(cfg.ffn());
        p.we = Parameter<Scalar>("embed.w", num::xavier_uniform<Scalar>(2, d, rng));
        p.be = Parameter<Scalar>("embed.b", Tensor<Scalar>({d}));
        p.encoder.reserve(static_cast<std::size_t>(cfg.layers));
        p.decoder.reserve(static_cast<std::size_t>(cfg.layers));
        for (int l = 0; l < cfg.layers; ++l) {
            p.encoder.emplace_back("enc" + std::to_string(l), d, hidden, rng);
        }
        for (int l = 0; l < cfg.layers; ++l) {
            p.decoder.emplace_back("dec" + std::to_string(l), d, hidden, rng);
        }
        if (cfg.decoder_input == DecoderInput::unshared_lut) {
            p.lut = Parameter<Scalar>(
                "lut", num::xavier_uniform<Scalar>(static_cast<std::size_t>(cfg.max_nodes), d, rng));
        }
        return p;
    }

    std::vector<Parameter<Scalar>*> all() {
        std::vector<Parameter<Scalar>*> out;
        out.push_back(&we);
        out.push_back(&be);
        for (auto& l : encoder) l.collect(out);
        for (auto& l : decoder) l.collect(out);
        if (lut) out.push_back(&*lut);
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (Parameter<Scalar>* p : all()) n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (Parameter<Scalar>* p : all()) p->zero_grad();
    }
};

/// Everything a forward pass needs besides its inputs. `rng` feeds dropout
/// and must be set when training is true.
template <class Scalar>
struct Fwd {
    Tape<Scalar>& tape;
    ModelParams<Scalar>& params;
    bool training = false;
    Rng* rng = nullptr;
};

namespace detail {

template <class Scalar>
Node<Scalar>* maybe_dropout(Fwd<Scalar>& f, Node<Scalar>* x) {
    if (!f.training || f.params.config.dropout == 0.0) return x;
    if (!f.rng) throw ConfigError("training forward needs an rng for dropout");
    return num::dropout(f.tape, x, f.params.config.dropout, true, *f.rng);
}

template <class Scalar>
Tensor<Scalar> coords_tensor(const std::vector<const Instance*>& batch) {
    const std::size_t B = batch.size();
    const std::size_t N = static_cast<std::size_t>(batch.front()->n());
    Tensor<Scalar> t = Tensor<Scalar>::uninit({B, N, 2});
    for (std::size_t b = 0; b < B; ++b) {
        if (batch[b]->points.size() != N) throw ShapeError("batch instances must share one size");
        for (std::size_t i = 0; i < N; ++i) {
            t[(b * N + i) * 2] = static_cast<Scalar>(batch[b]->points[i].x);
            t[(b * N + i) * 2 + 1] = static_cast<Scalar>(batch[b]->points[i].y);
        }
    }
    return t;
}

template <class Scalar>
Tensor<Scalar> spatial_pe_tensor(const std::vector<const Instance*>& batch, int d, double scale) {
    const std::size_t B = batch.size();
    const std::size_t N = static_cast<std::size_t>(batch.front()->n());
    Tensor<Scalar> t = Tensor<Scalar>::uninit({B, N, static_cast<std::size_t>(d)});
    for (std::size_t b = 0; b < B; ++b) {
        auto table = pe::spatial_table<Scalar>(*batch[b], d, scale);
        for (std::size_t i = 0; i < N * static_cast<std::size_t>(d); ++i) {
            t[b * N * static_cast<std::size_t>(d) + i] = table.values[i];
        }
    }
    return t;
}

} // namespace detail

/// Raw and position-injected input embeddings: e = p*We + be, then
/// x = e + spatial PE (when enabled) with dropout in training mode.
template <class Scalar>
struct Embedded {
    Node<Scalar>* x; // encoder input, [B, N, d]
    Node<Scalar>* e; // raw embedding before PE, [B, N, d]
};

template <class Scalar>
Embedded<Scalar> embed_inputs(Fwd<Scalar>& f, const std::vector<const Instance*>& batch) {
    const ModelConfig& cfg = f.params.config;
    Node<Scalar>* coords = f.tape.constant(detail::coords_tensor<Scalar>(batch));
    Node<Scalar>* e =
        num::add(f.tape, num::matmul(f.tape, coords, f.tape.param(f.params.we)), f.tape.param(f.params.be));
    Node<Scalar>* x = e;
    if (cfg.encoder_pe == EncoderPe::spatial) {
        Node<Scalar>* pe_nd =
            f.tape.constant(detail::spatial_pe_tensor<Scalar>(batch, cfg.d, cfg.pe_scale));
        x = num::add(f.tape, x, pe_nd);
    }
    x = detail::maybe_dropout(f, x);
    return {x, e};
}

template <class Scalar>
struct Encoded {
    Node<Scalar>* z; // final encoder output, [B, N, d]
    Node<Scalar>* e; // raw input embedding, [B, N, d]
};

/// Post-norm encoder stack, no masks: L blocks of self-attention + FFN.
template <class Scalar>
Encoded<Scalar> encode(Fwd<Scalar>& f, const std::vector<const Instance*>& batch) {
    Embedded<Scalar> emb = embed_inputs(f, batch);
    Node<Scalar>* x = emb.x;
    for (auto& layer : f.params.encoder) {
        Node<Scalar>* a = num::multi_head_attention(
            f.tape, x, x, x, static_cast<std::size_t>(f.params.config.heads), nullptr, layer.self);
        Node<Scalar>* h = num::layer_norm(f.tape, num::add(f.tape, x, detail::maybe_dropout(f, a)), layer.ln1);
        Node<Scalar>* ffo = num::ffn(f.tape, h, layer.ff);
        x = num::layer_norm(f.tape, num::add(f.tape, h, detail::maybe_dropout(f, ffo)), layer.ln2);
    }
    return {x, emb.e};
}

/// Additive causal mask: entry (i, j) is 0 for j <= i, -inf otherwise.
template <class Scalar>
Tensor<Scalar> causal_mask(std::size_t v) {
    Tensor<Scalar> m({v, v});
    const Scalar ninf = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t i = 0; i < v; ++i)
        for (std::size_t j = i + 1; j < v; ++j) m.at(i, j) = ninf;
    return m;
}

/// Additive visited mask for one prefix: row i (0-based) forbids
/// prefix[0..i], i.e. exactly i+1 entries are -inf.
template <class Scalar>
Tensor<Scalar> build_visited_mask(const std::vector<int>& prefix, int n) {
    const std::size_t V = prefix.size();
    Tensor<Scalar> m({V, static_cast<std::size_t>(n)});
    const Scalar ninf = -std::numeric_limits<Scalar>::infinity();
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (std::size_t i = 0; i < V; ++i) {
        const int node = prefix[i];
        if (node < 0 || node >= n) throw ValidationError("visited mask: node index out of range");
        if (seen[static_cast<std::size_t>(node)]) {
            throw ValidationError("visited mask: duplicate node in prefix");
        }
        seen[static_cast<std::size_t>(node)] = true;
        for (std::size_t j = 0; j < V; ++j) {
            if (j >= i) m.at(j, static_cast<std::size_t>(node)) = ninf;
        }
    }
    return m;
}

/// Stacked visited masks for a batch of prefixes, [B, V, n].
template <class Scalar>
Tensor<Scalar> build_visited_mask_batch(const std::vector<std::vector<int>>& prefixes, int n) {
    const std::size_t B = prefixes.size();
    const std::size_t V = prefixes.front().size();
    Tensor<Scalar> m({B, V, static_cast<std::size_t>(n)});
    for (std::size_t b = 0; b < B; ++b) {
        Tensor<Scalar> one = build_visited_mask<Scalar>(prefixes[b], n);
        if (one.dim(0) != V) throw ShapeError("visited mask batch: ragged prefixes");
        for (std::size_t i = 0; i < one.numel(); ++i) m[b * one.numel() + i] = one[i];
    }
    return m;
}

/// Decoder position table for V steps on an instance of n nodes.
template <class Scalar>
Tensor<Scalar> decoder_pe_table(const ModelConfig& cfg, int v, int n) {
    if (cfg.decoder_pe == DecoderPe::circular) {
        return pe::circular_table<Scalar>(v, cfg.d, n).values;
    }
    return pe::sinusoidal_table<Scalar>(v, cfg.d).values;
}

/// Replicates a [N, d] tensor node into [B, N, d].
template <class Scalar>
Node<Scalar>* expand_rows(Tape<Scalar>& tape, Node<Scalar>* x, std::size_t batch) {
    const std::size_t n = x->value.dim(0);
    std::vector<std::vector<int>> identity(batch, std::vector<int>(n));
    for (auto& row : identity) {
        for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<int>(i);
    }
    return num::gather_rows(tape, x, identity);
}

/// Post-norm decoder stack over a batch of visited prefixes. Input rows come
/// from the encoder output (memory), the raw input embedding (shared LUT) or
/// a learned index-addressed table (unshared LUT), plus the decoder PE.
/// Self-attention is causally masked; cross-attention reads the full memory.
template <class Scalar>
Node<Scalar>* decode(Fwd<Scalar>& f, Node<Scalar>* z, Node<Scalar>* e,
                     const std::vector<std::vector<int>>& prefixes, int n) {
    const ModelConfig& cfg = f.params.config;
    if (prefixes.empty() || prefixes.front().empty()) {
        throw ValidationError("decode: prefix must be nonempty");
    }
    const std::size_t B = prefixes.size();
    const std::size_t V = prefixes.front().size();

    Node<Scalar>* x = nullptr;
    switch (cfg.decoder_input) {
        case DecoderInput::memory:
            x = num::gather_rows(f.tape, z, prefixes);
            break;
        case DecoderInput::shared_lut:
            x = num::gather_rows(f.tape, e, prefixes);
            break;
        case DecoderInput::unshared_lut: {
            if (n > cfg.max_nodes) {
                throw ValidationError("decode: instance size exceeds the unshared LUT capacity");
            }
            x = num::gather_rows(f.tape, f.tape.param(*f.params.lut), prefixes);
            break;
        }
    }
    Node<Scalar>* pe_vd = f.tape.constant(decoder_pe_table<Scalar>(cfg, static_cast<int>(V), n));
    x = detail::maybe_dropout(f, num::add(f.tape, x, pe_vd));

    const Tensor<Scalar> causal = causal_mask<Scalar>(V);
    if (z->value.rank() == 2) z = expand_rows(f.tape, z, B);
    for (auto& layer : f.params.decoder) {
        Node<Scalar>* a = num::multi_head_attention(
            f.tape, x, x, x, static_cast<std::size_t>(cfg.heads), &causal, layer.self);
        Node<Scalar>* h1 =
            num::layer_norm(f.tape, num::add(f.tape, x, detail::maybe_dropout(f, a)), layer.ln1);
        Node<Scalar>* c = num::multi_head_attention(
            f.tape, h1, z, z, static_cast<std::size_t>(cfg.heads), nullptr, layer.cross);
        Node<Scalar>* h2 =
            num::layer_norm(f.tape, num::add(f.tape, h1, detail::maybe_dropout(f, c)), layer.ln2);
        Node<Scalar>* ffo = num::ffn(f.tape, h2, layer.ff);
        x = num::layer_norm(f.tape, num::add(f.tape, h2, detail::maybe_dropout(f, ffo)), layer.ln3);
    }
    return x;
}

/// Raw next-node scores: the decoder output against the dynamic embedding
/// (encoder output) or, for the ablation, the encoder input embedding.
template <class Scalar>
Node<Scalar>* output_logits(Fwd<Scalar>& f, Node<Scalar>* decoder_out, Node<Scalar>* z,
                            Node<Scalar>* e) {
    Node<Scalar>* table = f.params.config.output_head == OutputHead::dynamic_embedding ? z : e;
    return num::matmul(f.tape, decoder_out, table, /*transpose_b=*/true);
}

/// Next-node distribution with visited nodes at exactly zero probability.
template <class Scalar>
Node<Scalar>* output_head(Fwd<Scalar>& f, Node<Scalar>* decoder_out, Node<Scalar>* z,
                          Node<Scalar>* e, const Tensor<Scalar>& visited_mask) {
    return num::softmax_masked(f.tape, output_logits(f, decoder_out, z, e), &visited_mask);
}

/// One teacher-forced pass over a batch of ground-truth tours: encode once,
/// decode the full N-1 prefix under causal + visited masks, score all rows.
template <class Scalar>
struct TeacherForced {
    Node<Scalar>* logits;         // [B, N-1, N]
    Tensor<Scalar> visited_mask;  // [B, N-1, N]
    Encoded<Scalar> encoded;
};

template <class Scalar>
TeacherForced<Scalar> teacher_forced_logits(Fwd<Scalar>& f,
                                            const std::vector<const Instance*>& batch,
                                            const std::vector<const Tour*>& tours) {
    if (batch.size() != tours.size() || batch.empty()) {
        throw ShapeError("teacher_forced: instances and tours must pair up");
    }
    const int n = batch.front()->n();
    std::vector<std::vector<int>> prefixes(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        validate_tour(*batch[b], *tours[b]);
        prefixes[b].assign(tours[b]->order.begin(), tours[b]->order.end() - 1);
    }
    Encoded<Scalar> enc = encode(f, batch);
    Node<Scalar>* dec = decode(f, enc.z, enc.e, prefixes, n);
    TeacherForced<Scalar> out{nullptr, build_visited_mask_batch<Scalar>(prefixes, n), enc};
    out.logits = output_logits(f, dec, enc.z, enc.e);
    return out;
}

/// Eval-mode snapshot of the encoder for repeated decoding.
template <class Scalar>
struct EncoderMemory {
    Tensor<Scalar> z; // [N, d]
    Tensor<Scalar> e; // [N, d]
    int n = 0;
};

template <class Scalar>
EncoderMemory<Scalar> encode_instance(ModelParams<Scalar>& params, const Instance& inst) {
    Tape<Scalar> tape;
    Fwd<Scalar> f{tape, params, false, nullptr};
    Encoded<Scalar> enc = encode(f, {&inst});
    const std::size_t N = static_cast<std::size_t>(inst.n());
    const std::size_t d = static_cast<std::size_t>(params.config.d);
    EncoderMemory<Scalar> mem{Tensor<Scalar>({N, d}), Tensor<Scalar>({N, d}), inst.n()};
    for (std::size_t i = 0; i < N * d; ++i) {
        mem.z[i] = enc.z->value[i];
        mem.e[i] = enc.e->value[i];
    }
    num::require_finite(mem.z, "encoder output");
    return mem;
}

/// Eval-mode logits [V, N] for one prefix against a cached memory.
template <class Scalar>
Tensor<Scalar> decode_scores(ModelParams<Scalar>& params, const EncoderMemory<Scalar>& mem,
                             const std::vector<int>& prefix) {
    Tape<Scalar> tape;
    Fwd<Scalar> f{tape, params, false, nullptr};
    Node<Scalar>* z = tape.constant(mem.z);
    Node<Scalar>* e = tape.constant(mem.e);
    Node<Scalar>* dec = decode(f, z, e, {prefix}, mem.n);
    Node<Scalar>* logits = output_logits(f, dec, expand_rows(f.tape, z, 1), expand_rows(f.tape, e, 1));
    Tensor<Scalar> out({prefix.size(), static_cast<std::size_t>(mem.n)});
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = logits->value[i];
    return out;
}

/// Eval-mode teacher-forced probabilities [(N-1), N] for one instance; row v
/// is the distribution over the (v+1)-th node, visited entries exactly 0.
template <class Scalar>
Tensor<Scalar> forward_teacher_forced(ModelParams<Scalar>& params, const Instance& inst,
                                      const Tour& gt) {
    Tape<Scalar> tape;
    Fwd<Scalar> f{tape, params, false, nullptr};
    TeacherForced<Scalar> tf = teacher_forced_logits(f, {&inst}, {&gt});
    Node<Scalar>* probs = num::softmax_masked(f.tape, tf.logits, &tf.visited_mask);
    const std::size_t rows = static_cast<std::size_t>(inst.n() - 1);
    const std::size_t cols = static_cast<std::size_t>(inst.n());
    Tensor<Scalar> out({rows, cols});
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = probs->value[i];
    return out;
}

} // namespace tspformer::model
