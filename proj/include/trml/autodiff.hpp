#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trml/matrix.hpp"
#include "trml/param_store.hpp"

namespace trml {

struct Var {
    std::int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape over Matrix values. Nodes are evaluated eagerly and
/// checked for finiteness on creation; backward() walks the tape in reverse
/// creation order and flushes leaf gradients into the bound ParamStore.
/// Reductions are plain sequential loops, so results are reproducible.
class Graph {
public:
    explicit Graph(ParamStore* params = nullptr) : params_(params) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var param(const std::string& name) {
        if (!params_) throw config_error("graph has no parameter store");
        auto it = param_leaf_.find(name);
        if (it != param_leaf_.end()) return Var{it->second};
        Var v = make(params_->at(name).value, name, true, {});
        param_leaf_.emplace(name, v.idx);
        return v;
    }

    Var constant(Matrix value, const std::string& label = "const") {
        return make(std::move(value), label, false, {});
    }

    ParamStore& store() {
        if (!params_) throw config_error("graph has no parameter store");
        return *params_;
    }

    const Matrix& value(Var v) const { return nodes_[v.idx].value; }

    double scalar(Var v) const {
        const Matrix& m = nodes_[v.idx].value;
        require_shape(m.size() == 1, "scalar extraction");
        return m[0];
    }

    // ---- primitives ----

    Var add(Var a, Var b) {
        require_shape(value(a).same_shape(value(b)), "add");
        Matrix out = trml::add(value(a), value(b));
        Var v = make(std::move(out), "add", grad_needed(a) || grad_needed(b), {a, b});
        nodes_[v.idx].back = [this, v, a, b] {
            const Matrix& g = grad(v);
            accumulate(a, g);
            accumulate(b, g);
        };
        return v;
    }

    Var sub(Var a, Var b) {
        require_shape(value(a).same_shape(value(b)), "sub");
        Matrix out = trml::sub(value(a), value(b));
        Var v = make(std::move(out), "sub", grad_needed(a) || grad_needed(b), {a, b});
        nodes_[v.idx].back = [this, v, a, b] {
            const Matrix& g = grad(v);
            accumulate(a, g);
            if (grad_needed(b)) {
                Matrix& gb = grad(b);
                for (std::size_t k = 0; k < g.size(); ++k) gb[k] -= g[k];
            }
        };
        return v;
    }

    /// out(i,j) = m(i,j) + r(0,j)
    Var add_rowvec(Var m, Var r) {
        const Matrix& mv = value(m);
        const Matrix& rv = value(r);
        require_shape(rv.rows() == 1 && rv.cols() == mv.cols(), "add_rowvec");
        Matrix out = mv;
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
        Var v = make(std::move(out), "add_rowvec", grad_needed(m) || grad_needed(r), {m, r});
        nodes_[v.idx].back = [this, v, m, r] {
            const Matrix& g = grad(v);
            accumulate(m, g);
            if (grad_needed(r)) {
                Matrix& gr = grad(r);
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
            }
        };
        return v;
    }

    Var scale(Var a, double c) {
        Matrix out = scaled(value(a), c);
        Var v = make(std::move(out), "scale", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a, c] {
            if (!grad_needed(a)) return;
            const Matrix& g = grad(v);
            Matrix& ga = grad(a);
            for (std::size_t k = 0; k < g.size(); ++k) ga[k] += c * g[k];
        };
        return v;
    }

    /// out = s(0,0) * m, with s a 1x1 variable.
    Var mul_scalar(Var m, Var s) {
        require_shape(value(s).size() == 1, "mul_scalar");
        const double sv = value(s)[0];
        Matrix out = scaled(value(m), sv);
        Var v = make(std::move(out), "mul_scalar", grad_needed(m) || grad_needed(s), {m, s});
        nodes_[v.idx].back = [this, v, m, s, sv] {
            const Matrix& g = grad(v);
            if (grad_needed(m)) {
                Matrix& gm = grad(m);
                for (std::size_t k = 0; k < g.size(); ++k) gm[k] += sv * g[k];
            }
            if (grad_needed(s)) {
                const Matrix& mv = value(m);
                double acc = 0.0;
                for (std::size_t k = 0; k < g.size(); ++k) acc += g[k] * mv[k];
                grad(s)[0] += acc;
            }
        };
        return v;
    }

    Var reciprocal(Var a) {
        Matrix out = value(a);
        for (double& x : out.data()) x = 1.0 / x;
        Var v = make(std::move(out), "reciprocal", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a] {
            if (!grad_needed(a)) return;
            const Matrix& g = grad(v);
            const Matrix& y = value(v);
            Matrix& ga = grad(a);
            for (std::size_t k = 0; k < g.size(); ++k) ga[k] -= g[k] * y[k] * y[k];
        };
        return v;
    }

    Var exp(Var a) {
        Matrix out = value(a);
        for (double& x : out.data()) x = std::exp(x);
        Var v = make(std::move(out), "exp", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a] {
            if (!grad_needed(a)) return;
            const Matrix& g = grad(v);
            const Matrix& y = value(v);
            Matrix& ga = grad(a);
            for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * y[k];
        };
        return v;
    }

    Var tanh(Var a) {
        Matrix out = value(a);
        for (double& x : out.data()) x = std::tanh(x);
        Var v = make(std::move(out), "tanh", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a] {
            if (!grad_needed(a)) return;
            const Matrix& g = grad(v);
            const Matrix& y = value(v);
            Matrix& ga = grad(a);
            for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * (1.0 - y[k] * y[k]);
        };
        return v;
    }

    Var relu(Var a) {
        Matrix out = value(a);
        for (double& x : out.data()) x = std::max(x, 0.0);
        Var v = make(std::move(out), "relu", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a] {
            if (!grad_needed(a)) return;
            const Matrix& g = grad(v);
            const Matrix& in = value(a);
            Matrix& ga = grad(a);
            for (std::size_t k = 0; k < g.size(); ++k)
                if (in[k] > 0.0) ga[k] += g[k];
        };
        return v;
    }

    /// Gradient passes only through the strict interior (lo, hi).
    Var clamp(Var a, double lo, double hi) {
        Matrix out = value(a);
        for (double& x : out.data()) x = std::clamp(x, lo, hi);
        Var v = make(std::move(out), "clamp", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a, lo, hi] {
            if (!grad_needed(a)) return;
            const Matrix& g = grad(v);
            const Matrix& in = value(a);
            Matrix& ga = grad(a);
            for (std::size_t k = 0; k < g.size(); ++k)
                if (in[k] > lo && in[k] < hi) ga[k] += g[k];
        };
        return v;
    }

    Var matmul(Var a, Var b) {
        Matrix out = trml::matmul(value(a), value(b));
        Var v = make(std::move(out), "matmul", grad_needed(a) || grad_needed(b), {a, b});
        nodes_[v.idx].back = [this, v, a, b] {
            const Matrix& g = grad(v);
            if (grad_needed(a)) {
                Matrix ga = trml::matmul(g, transposed(value(b)));
                add_into(grad(a), ga);
            }
            if (grad_needed(b)) {
                Matrix gb = trml::matmul(transposed(value(a)), g);
                add_into(grad(b), gb);
            }
        };
        return v;
    }

    Var transpose(Var a) {
        Var v = make(transposed(value(a)), "transpose", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a] {
            if (!grad_needed(a)) return;
            Matrix gt = transposed(grad(v));
            add_into(grad(a), gt);
        };
        return v;
    }

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw numeric_error("concat_rows: empty input");
        const std::size_t cols = value(parts[0]).cols();
        std::size_t rows = 0;
        bool needs = false;
        for (Var p : parts) {
            require_shape(value(p).cols() == cols, "concat_rows");
            rows += value(p).rows();
            needs = needs || grad_needed(p);
        }
        Matrix out(rows, cols);
        std::size_t r = 0;
        for (Var p : parts) {
            const Matrix& pv = value(p);
            for (std::size_t i = 0; i < pv.rows(); ++i, ++r)
                for (std::size_t j = 0; j < cols; ++j) out(r, j) = pv(i, j);
        }
        Var v = make(std::move(out), "concat_rows", needs, parts);
        std::vector<Var> captured = parts;
        nodes_[v.idx].back = [this, v, captured] {
            const Matrix& g = grad(v);
            std::size_t r = 0;
            for (Var p : captured) {
                const std::size_t pr = value(p).rows();
                if (grad_needed(p)) {
                    Matrix& gp = grad(p);
                    for (std::size_t i = 0; i < pr; ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) gp(i, j) += g(r + i, j);
                }
                r += pr;
            }
        };
        return v;
    }

    /// Each row divided by its L2 norm. Rows with norm < 1e-12 are an error.
    Var row_l2_normalize(Var a) {
        const Matrix& in = value(a);
        Matrix out = in;
        std::vector<double> norms(in.rows());
        for (std::size_t i = 0; i < in.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < in.cols(); ++j) s += in(i, j) * in(i, j);
            const double n = std::sqrt(s);
            if (n < 1e-12)
                throw numeric_error("zero-norm row " + std::to_string(i) + " in row_l2_normalize");
            norms[i] = n;
            for (std::size_t j = 0; j < in.cols(); ++j) out(i, j) /= n;
        }
        Var v = make(std::move(out), "row_l2_normalize", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a, norms] {
            if (!grad_needed(a)) return;
            const Matrix& g = grad(v);
            const Matrix& y = value(v);
            Matrix& ga = grad(a);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                double gy = 0.0;
                for (std::size_t j = 0; j < g.cols(); ++j) gy += g(i, j) * y(i, j);
                for (std::size_t j = 0; j < g.cols(); ++j)
                    ga(i, j) += (g(i, j) - y(i, j) * gy) / norms[i];
            }
        };
        return v;
    }

    /// Row-wise log-softmax with max subtraction.
    Var log_softmax_rows(Var a) {
        const Matrix& in = value(a);
        Matrix out = in;
        for (std::size_t i = 0; i < in.rows(); ++i) {
            double mx = in(i, 0);
            for (std::size_t j = 1; j < in.cols(); ++j) mx = std::max(mx, in(i, j));
            double s = 0.0;
            for (std::size_t j = 0; j < in.cols(); ++j) s += std::exp(in(i, j) - mx);
            const double lse = mx + std::log(s);
            for (std::size_t j = 0; j < in.cols(); ++j) out(i, j) -= lse;
        }
        Var v = make(std::move(out), "log_softmax_rows", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a] {
            if (!grad_needed(a)) return;
            const Matrix& g = grad(v);
            const Matrix& y = value(v);
            Matrix& ga = grad(a);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                double gsum = 0.0;
                for (std::size_t j = 0; j < g.cols(); ++j) gsum += g(i, j);
                for (std::size_t j = 0; j < g.cols(); ++j)
                    ga(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
            }
        };
        return v;
    }

    /// -(1/N) * sum_i a(i,i) for square a.
    Var mean_neg_diag(Var a) {
        const Matrix& in = value(a);
        require_shape(in.rows() == in.cols(), "mean_neg_diag");
        const std::size_t n = in.rows();
        Matrix out(1, 1);
        for (std::size_t i = 0; i < n; ++i) out[0] -= in(i, i);
        out[0] /= static_cast<double>(n);
        Var v = make(std::move(out), "mean_neg_diag", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a, n] {
            if (!grad_needed(a)) return;
            const double g = grad(v)[0];
            Matrix& ga = grad(a);
            for (std::size_t i = 0; i < n; ++i) ga(i, i) -= g / static_cast<double>(n);
        };
        return v;
    }

    /// -(1/N) * sum_i a(i, picks[i]); cross-entropy readout after log-softmax.
    Var mean_neg_pick(Var a, std::vector<std::size_t> picks) {
        const Matrix& in = value(a);
        require_shape(in.rows() == picks.size(), "mean_neg_pick");
        for (std::size_t p : picks)
            if (p >= in.cols()) throw data_error("class index out of range in mean_neg_pick");
        const std::size_t n = in.rows();
        Matrix out(1, 1);
        for (std::size_t i = 0; i < n; ++i) out[0] -= in(i, picks[i]);
        out[0] /= static_cast<double>(n);
        Var v = make(std::move(out), "mean_neg_pick", grad_needed(a), {a});
        nodes_[v.idx].back = [this, v, a, picks, n] {
            if (!grad_needed(a)) return;
            const double g = grad(v)[0];
            Matrix& ga = grad(a);
            for (std::size_t i = 0; i < n; ++i) ga(i, picks[i]) -= g / static_cast<double>(n);
        };
        return v;
    }

    /// (1/N) * sum |pred - target|; the subgradient at 0 is 0.
    Var mean_abs_diff(Var pred, Matrix target) {
        const Matrix& p = value(pred);
        require_shape(p.same_shape(target), "mean_abs_diff");
        Matrix out(1, 1);
        for (std::size_t k = 0; k < p.size(); ++k) out[0] += std::abs(p[k] - target[k]);
        out[0] /= static_cast<double>(p.size());
        Var v = make(std::move(out), "mean_abs_diff", grad_needed(pred), {pred});
        nodes_[v.idx].back = [this, v, pred, target] {
            if (!grad_needed(pred)) return;
            const double g = grad(v)[0];
            const Matrix& p = value(pred);
            Matrix& gp = grad(pred);
            const double inv = 1.0 / static_cast<double>(p.size());
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double d = p[k] - target[k];
                gp[k] += g * inv * ((d > 0.0) - (d < 0.0));
            }
        };
        return v;
    }

    Var mean_sq_diff(Var pred, Matrix target) {
        const Matrix& p = value(pred);
        require_shape(p.same_shape(target), "mean_sq_diff");
        Matrix out(1, 1);
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double d = p[k] - target[k];
            out[0] += d * d;
        }
        out[0] /= static_cast<double>(p.size());
        Var v = make(std::move(out), "mean_sq_diff", grad_needed(pred), {pred});
        nodes_[v.idx].back = [this, v, pred, target] {
            if (!grad_needed(pred)) return;
            const double g = grad(v)[0];
            const Matrix& p = value(pred);
            Matrix& gp = grad(pred);
            const double inv = 2.0 / static_cast<double>(p.size());
            for (std::size_t k = 0; k < p.size(); ++k) gp[k] += g * inv * (p[k] - target[k]);
        };
        return v;
    }

    /// Seeds d(loss)/d(loss) = 1, runs the tape backward and adds leaf
    /// gradients into the parameter store (whose grads are zeroed first).
    /// Returns the loss value.
    double backward(Var loss) {
        require_shape(value(loss).size() == 1, "backward: loss must be 1x1");
        const double loss_value = value(loss)[0];
        if (params_) params_->zero_grads();
        if (!nodes_[loss.idx].needs_grad) return loss_value;  // constant objective
        for (auto& n : nodes_)
            if (n.needs_grad) n.grad = Matrix(n.value.rows(), n.value.cols());
        nodes_[loss.idx].grad[0] = 1.0;
        for (std::int32_t i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.back) n.back();
        }
        if (params_) {
            for (const auto& [name, idx] : param_leaf_) {
                Matrix& dst = params_->at(name).grad;
                const Matrix& src = nodes_[idx].grad;
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
                require_finite(dst, "gradient of " + name);
            }
        }
        return loss_value;
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        std::string label;
        std::function<void()> back;
    };

    Var make(Matrix value, const std::string& op, bool needs_grad, const std::vector<Var>&) {
        const std::int32_t idx = static_cast<std::int32_t>(nodes_.size());
        if (!all_finite(value))
            throw numeric_error("non-finite values in tensor " + op + "#" + std::to_string(idx));
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.label = op;
        nodes_.push_back(std::move(n));
        return Var{idx};
    }

    bool grad_needed(Var v) const { return nodes_[v.idx].needs_grad; }

    Matrix& grad(Var v) { return nodes_[v.idx].grad; }

    void accumulate(Var v, const Matrix& g) {
        if (!grad_needed(v)) return;
        add_into(grad(v), g);
    }

    static void add_into(Matrix& dst, const Matrix& src) {
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }

    std::vector<Node> nodes_;
    ParamStore* params_;
    std::unordered_map<std::string, std::int32_t> param_leaf_;
};

/// A batch objective: builds a scalar loss over the graph's parameters.
using Objective = std::function<Var(Graph&)>;

/// Forward + backward; leaves the batch gradient in the store. Repeated calls
/// with identical inputs are bit-identical.
inline double evaluate_with_gradients(ParamStore& params, const Objective& objective) {
    Graph g(&params);
    Var loss = objective(g);
    return g.backward(loss);
}

/// Forward only (used by finite differencing).
inline double evaluate_value(ParamStore& params, const Objective& objective) {
    Graph g(&params);
    return g.scalar(objective(g));
}

}  // namespace trml
