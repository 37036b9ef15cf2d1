#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "trml/autodiff.hpp"
#include "trml/dataset.hpp"
#include "trml/rng.hpp"

namespace trml {

enum class TaskLoss { l1, mse };

inline std::string to_string(TaskLoss t) { return t == TaskLoss::l1 ? "l1" : "mse"; }
inline TaskLoss parse_task_loss(const std::string& s) {
    if (s == "l1") return TaskLoss::l1;
    if (s == "mse") return TaskLoss::mse;
    throw config_error("unknown task loss: " + s);
}

constexpr double kTauMin = 0.01;
constexpr double kTauMax = 1.0;

/// Everything needed to rebuild the computation around a ParamStore.
struct ModelMeta {
    std::size_t d = 0;
    std::size_t head_hidden = 0;  // default ceil(d/2)
    std::size_t out_dim = 1;      // 1 for regression, class_count otherwise
    Task task = Task::regression;
    std::size_t class_count = 0;
    double lambda = 0.1;
    double alpha = 0.5;
    bool tau_learnable = true;
    TaskLoss task_loss = TaskLoss::l1;

    static ModelMeta for_dataset(const EmbeddingDataset& ds) {
        ModelMeta m;
        m.d = ds.d;
        m.head_hidden = (ds.d + 1) / 2;
        m.task = ds.task;
        m.class_count = ds.class_count;
        m.out_dim = ds.task == Task::regression ? 1 : ds.class_count;
        return m;
    }
};

namespace detail {

inline Matrix fanin_uniform(Rng& rng, std::size_t rows, std::size_t cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.uniform(-bound, bound);
    return m;
}

}  // namespace detail

/// Weight matrices uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero
/// biases, log_tau = log(tau_init). Draw order is fixed (name order).
inline ParamStore init_params(const ModelMeta& meta, double tau_init, std::uint64_t seed) {
    if (!(tau_init >= kTauMin && tau_init <= kTauMax))
        throw config_error("tau_init must be in [0.01, 1.0]");
    const std::size_t d = meta.d;
    const std::size_t h = meta.head_hidden;
    Rng rng(Rng::mix(seed, 0x9a2a));
    ParamStore ps;
    ps.add("head.b1", Matrix(1, h));
    ps.add("head.b2", Matrix(1, meta.out_dim));
    ps.add("head.w1", detail::fanin_uniform(rng, d, h));
    ps.add("head.w2", detail::fanin_uniform(rng, h, meta.out_dim));
    ps.add("log_tau", Matrix(1, 1, std::log(tau_init)));
    ps.add("rnn.b", Matrix(1, d));
    ps.add("rnn.w_hh", detail::fanin_uniform(rng, d, d));
    ps.add("rnn.w_in", detail::fanin_uniform(rng, d, d));
    ps.add("t2v.b1", Matrix(1, d));
    ps.add("t2v.b2", Matrix(1, d));
    ps.add("t2v.w1", detail::fanin_uniform(rng, d, d));
    ps.add("t2v.w2", detail::fanin_uniform(rng, d, d));
    ps.add("v2t.b1", Matrix(1, d));
    ps.add("v2t.b2", Matrix(1, d));
    ps.add("v2t.w1", detail::fanin_uniform(rng, d, d));
    ps.add("v2t.w2", detail::fanin_uniform(rng, d, d));
    return ps;
}

/// Elman cell over the present frames: h <- tanh(f.W_in + h.W_hh + b),
/// h_0 = 0, last hidden state returned. Masked frames are skipped.
inline Var temporal_encode(Graph& g, const Matrix& frames,
                           const std::optional<std::vector<int>>& mask) {
    Var w_in = g.param("rnn.w_in");
    Var w_hh = g.param("rnn.w_hh");
    Var b = g.param("rnn.b");
    Var h = g.constant(Matrix(1, frames.cols()), "h0");
    std::size_t used = 0;
    for (std::size_t i = 0; i < frames.rows(); ++i) {
        if (mask && (*mask)[i] == 0) continue;
        Var f = g.constant(frames.extract_row(i), "frame");
        h = g.tanh(g.add(g.add(g.matmul(f, w_in), g.matmul(h, w_hh)), b));
        ++used;
    }
    if (used == 0) throw data_error("temporal_encode: no present frames");
    return h;
}

inline Var mlp_generator(Graph& g, Var input, const std::string& prefix) {
    Var hidden = g.relu(g.add_rowvec(g.matmul(input, g.param(prefix + ".w1")),
                                     g.param(prefix + ".b1")));
    return g.add_rowvec(g.matmul(hidden, g.param(prefix + ".w2")), g.param(prefix + ".b2"));
}

/// Virtual text from the visual prompt.
inline Var generate_virtual_text(Graph& g, Var x_v) { return mlp_generator(g, x_v, "v2t"); }

/// Virtual visual from the text prompt.
inline Var generate_virtual_visual(Graph& g, Var x_t) { return mlp_generator(g, x_t, "t2v"); }

/// Prediction head: ReLU MLP, rows in -> rows out.
inline Var predict(Graph& g, Var x) {
    Var hidden = g.relu(g.add_rowvec(g.matmul(x, g.param("head.w1")), g.param("head.b1")));
    return g.add_rowvec(g.matmul(hidden, g.param("head.w2")), g.param("head.b2"));
}

/// Temperature as a graph value: exp(log_tau) clamped to [0.01, 1.0]. When
/// frozen, log_tau gets no gradient.
inline Var temperature(Graph& g, bool learnable) {
    if (learnable) return g.clamp(g.exp(g.param("log_tau")), kTauMin, kTauMax);
    const double tau = std::clamp(std::exp(g.store().at("log_tau").value[0]), kTauMin, kTauMax);
    return g.constant(Matrix(1, 1, tau), "tau");
}

inline double current_tau(const ParamStore& ps) {
    return std::clamp(std::exp(ps.at("log_tau").value[0]), kTauMin, kTauMax);
}

/// Per-sample representations; only the fields the mode allows are set.
struct SampleForward {
    Mode mode = Mode::c;
    Var x_t;      // original text (c, mv)
    Var x_v;      // temporal-encoded visual (c, mt)
    Var xbar_t;   // virtual text (c, mt)
    Var xbar_v;   // virtual visual (c, mv)
    Var fused;
};

struct BatchForward {
    std::vector<SampleForward> samples;
    Var fused;  // N x d
    Var preds;  // N x out_dim
};

/// Elementwise-sum fusion over whatever the mode provides:
/// c -> x_t + x_v, mv -> x_t + xbar_v, mt -> xbar_t + x_v.
inline Var fuse(Graph& g, const SampleForward& s) {
    switch (s.mode) {
        case Mode::c:
            if (!s.x_t.valid() || !s.x_v.valid())
                throw numeric_error("fuse: mode c requires x_t and x_v");
            return g.add(s.x_t, s.x_v);
        case Mode::mv:
            if (!s.x_t.valid() || !s.xbar_v.valid())
                throw numeric_error("fuse: mode mv requires x_t and xbar_v");
            return g.add(s.x_t, s.xbar_v);
        default:
            if (!s.xbar_t.valid() || !s.x_v.valid())
                throw numeric_error("fuse: mode mt requires xbar_t and x_v");
            return g.add(s.xbar_t, s.x_v);
    }
}

/// Runs every sample through its mode's route. Complete samples also produce
/// both virtual vectors so the matching loss has its targets.
inline BatchForward forward_batch(Graph& g, const Batch& batch) {
    BatchForward out;
    std::vector<Var> fused_rows;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        SampleForward s;
        s.mode = batch.modes[i];
        switch (s.mode) {
            case Mode::c:
                s.x_t = g.constant(batch.text.extract_row(i), "text");
                s.x_v = temporal_encode(g, batch.frames[i], batch.frame_masks[i]);
                s.xbar_t = generate_virtual_text(g, s.x_v);
                s.xbar_v = generate_virtual_visual(g, s.x_t);
                break;
            case Mode::mv:
                s.x_t = g.constant(batch.text.extract_row(i), "text");
                s.xbar_v = generate_virtual_visual(g, s.x_t);
                break;
            case Mode::mt:
                s.x_v = temporal_encode(g, batch.frames[i], batch.frame_masks[i]);
                s.xbar_t = generate_virtual_text(g, s.x_v);
                break;
        }
        s.fused = fuse(g, s);
        fused_rows.push_back(s.fused);
        out.samples.push_back(s);
    }
    out.fused = g.concat_rows(fused_rows);
    out.preds = predict(g, out.fused);
    return out;
}

// ---- checkpoint format ----
// `#trml-checkpoint v1`, one line per parameter in lexicographic order:
// `name rows cols v...` (17 significant digits), then `# key value` comment
// lines echoing the model configuration.

inline void save_checkpoint(const ParamStore& ps, const ModelMeta& meta,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open for writing: " + path);
    out << "#trml-checkpoint v1\n";
    for (const auto& [name, e] : ps.entries()) {
        out << name << " " << e.value.rows() << " " << e.value.cols();
        for (double v : e.value.data()) out << " " << fmt17(v);
        out << "\n";
    }
    out << "# d " << meta.d << "\n";
    out << "# head_hidden " << meta.head_hidden << "\n";
    out << "# out_dim " << meta.out_dim << "\n";
    out << "# task " << to_string(meta.task) << "\n";
    out << "# class_count " << meta.class_count << "\n";
    out << "# lambda " << fmt17(meta.lambda) << "\n";
    out << "# alpha " << fmt17(meta.alpha) << "\n";
    out << "# tau_learnable " << (meta.tau_learnable ? 1 : 0) << "\n";
    out << "# task_loss " << to_string(meta.task_loss) << "\n";
    if (!out) throw data_error("write failed: " + path);
}

struct Checkpoint {
    ParamStore params;
    ModelMeta meta;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open checkpoint file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "#trml-checkpoint v1")
        throw data_error("bad checkpoint header in " + path);
    Checkpoint ck;
    std::map<std::string, std::string> meta_kv;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ms(line.substr(1));
            std::string key, val;
            ms >> key >> val;
            if (!key.empty()) meta_kv[key] = val;
            continue;
        }
        std::istringstream ls(line);
        std::string name;
        std::size_t rows = 0, cols = 0;
        ls >> name >> rows >> cols;
        if (name.empty() || rows == 0 || cols == 0)
            throw data_error("bad checkpoint parameter line: " + line);
        Matrix m(rows, cols);
        std::string tok;
        for (std::size_t k = 0; k < m.size(); ++k) {
            if (!(ls >> tok)) throw data_error("truncated values for parameter " + name);
            m[k] = parse_double(tok, "checkpoint parameter " + name);
        }
        require_finite(m, "checkpoint parameter " + name);
        ck.params.add(name, std::move(m));
    }
    auto need = [&](const std::string& key) -> std::string {
        auto it = meta_kv.find(key);
        if (it == meta_kv.end()) throw data_error("checkpoint missing config echo: " + key);
        return it->second;
    };
    ck.meta.d = static_cast<std::size_t>(parse_double(need("d"), "checkpoint d"));
    ck.meta.head_hidden =
        static_cast<std::size_t>(parse_double(need("head_hidden"), "checkpoint head_hidden"));
    ck.meta.out_dim = static_cast<std::size_t>(parse_double(need("out_dim"), "checkpoint out_dim"));
    ck.meta.task = parse_task(need("task"));
    ck.meta.class_count =
        static_cast<std::size_t>(parse_double(need("class_count"), "checkpoint class_count"));
    ck.meta.lambda = parse_double(need("lambda"), "checkpoint lambda");
    ck.meta.alpha = parse_double(need("alpha"), "checkpoint alpha");
    ck.meta.tau_learnable = need("tau_learnable") == "1";
    ck.meta.task_loss = parse_task_loss(need("task_loss"));
    return ck;
}

}  // namespace trml
