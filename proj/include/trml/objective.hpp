#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "trml/autodiff.hpp"
#include "trml/model.hpp"

namespace trml {

enum class Ablation { none, no_sml_text, no_sml_visual, no_sml };

inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_sml_text: return "no_sml_text";
        case Ablation::no_sml_visual: return "no_sml_visual";
        default: return "no_sml";
    }
}
inline Ablation parse_ablation(const std::string& s) {
    if (s == "none") return Ablation::none;
    if (s == "no_sml_text") return Ablation::no_sml_text;
    if (s == "no_sml_visual") return Ablation::no_sml_visual;
    if (s == "no_sml") return Ablation::no_sml;
    throw config_error("unknown ablation variant: " + s);
}

// ---- plain (value-only) similarity ops ----

/// Entry (i,j) = cos(A_i, B_j). Rows with norm < 1e-12 are an error.
inline Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
    require_shape(a.cols() == b.cols(), "cosine_similarity_matrix");
    auto row_norms = [](const Matrix& m, const char* side) {
        std::vector<double> ns(m.rows());
        for (std::size_t i = 0; i < m.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * m(i, j);
            ns[i] = std::sqrt(s);
            if (ns[i] < 1e-12)
                throw numeric_error("zero-norm row " + std::to_string(i) + " in " + side +
                                    " input of cosine_similarity_matrix");
        }
        return ns;
    };
    const auto na = row_norms(a, "left");
    const auto nb = row_norms(b, "right");
    Matrix s(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
            s(i, j) = acc / (na[i] * nb[j]);
        }
    return s;
}

struct NormalizedSimilarities {
    Matrix y_row;  // rows softmaxed
    Matrix y_col;  // columns softmaxed
};

/// Temperature-scaled softmax over rows and over columns, max-subtracted.
inline NormalizedSimilarities normalize_similarity(const Matrix& s, double tau) {
    if (!(tau >= kTauMin && tau <= kTauMax))
        throw config_error("normalize_similarity: tau must be in [0.01, 1.0]");
    if (s.rows() < 2 || s.rows() != s.cols())
        throw numeric_error("normalize_similarity: need a square matrix with N >= 2");
    const std::size_t n = s.rows();
    NormalizedSimilarities out{Matrix(n, n), Matrix(n, n)};
    for (std::size_t i = 0; i < n; ++i) {
        double mx = s(i, 0) / tau;
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, s(i, j) / tau);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(s(i, j) / tau - mx);
        for (std::size_t j = 0; j < n; ++j) out.y_row(i, j) = std::exp(s(i, j) / tau - mx) / z;
    }
    for (std::size_t j = 0; j < n; ++j) {
        double mx = s(0, j) / tau;
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, s(i, j) / tau);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) z += std::exp(s(i, j) / tau - mx);
        for (std::size_t i = 0; i < n; ++i) out.y_col(i, j) = std::exp(s(i, j) / tau - mx) / z;
    }
    return out;
}

// ---- tape losses ----

/// Cosine matrix of two row stacks as a graph value.
inline Var cosine_similarity_matrix(Graph& g, Var a, Var b) {
    return g.matmul(g.row_l2_normalize(a), g.transpose(g.row_l2_normalize(b)));
}

/// Symmetric contrastive cross-entropy with the identity as target:
/// L = 1/2 [ mean_i -log softmax_row(S/tau)(i,i) + same over columns ].
inline Var semantic_matching_loss_pair(Graph& g, Var original, Var virtual_, Var tau) {
    const std::size_t n = g.value(original).rows();
    if (n < 2) throw numeric_error("semantic_matching_loss_pair: need N >= 2");
    Var s = cosine_similarity_matrix(g, original, virtual_);
    Var scaled = g.mul_scalar(s, g.reciprocal(tau));
    Var row_loss = g.mean_neg_diag(g.log_softmax_rows(scaled));
    Var col_loss = g.mean_neg_diag(g.log_softmax_rows(g.transpose(scaled)));
    return g.scale(g.add(row_loss, col_loss), 0.5);
}

/// Value-only convenience used by tests and analysis tools.
inline double semantic_matching_loss_pair(const Matrix& original, const Matrix& virtual_,
                                          double tau) {
    Graph g;
    Var a = g.constant(original, "original");
    Var b = g.constant(virtual_, "virtual");
    Var t = g.constant(Matrix(1, 1, tau), "tau");
    return g.scalar(semantic_matching_loss_pair(g, a, b, t));
}

/// lambda * L_text + (1 - lambda) * L_visual.
inline double combine_sml(double l_text, double l_visual, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw config_error("lambda must be in (0,1)");
    return lambda * l_text + (1.0 - lambda) * l_visual;
}

/// Ablations drop one or both matching terms; remaining weights are kept
/// as-is (no renormalization). Returns an invalid Var when nothing remains.
inline Var apply_ablation(Graph& g, Var sml_text, Var sml_visual, double lambda,
                          Ablation variant) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw config_error("lambda must be in (0,1)");
    switch (variant) {
        case Ablation::none:
            return g.add(g.scale(sml_text, lambda), g.scale(sml_visual, 1.0 - lambda));
        case Ablation::no_sml_text:
            return g.scale(sml_visual, 1.0 - lambda);
        case Ablation::no_sml_visual:
            return g.scale(sml_text, lambda);
        default:
            return Var{};
    }
}

/// Scalar mirror of apply_ablation for reporting and tests.
inline double apply_ablation(double l_text, double l_visual, double lambda, Ablation variant) {
    switch (variant) {
        case Ablation::none: return combine_sml(l_text, l_visual, lambda);
        case Ablation::no_sml_text: return (1.0 - lambda) * l_visual;
        case Ablation::no_sml_visual: return lambda * l_text;
        default: return 0.0;
    }
}

/// Regression: mean absolute (default) or mean squared error.
/// Classification: mean cross-entropy over softmaxed logits.
inline Var task_loss(Graph& g, Var preds, const std::vector<double>& labels, Task task,
                     TaskLoss loss_kind, std::size_t class_count) {
    const Matrix& p = g.value(preds);
    require_shape(p.rows() == labels.size(), "task_loss");
    if (task == Task::regression) {
        Matrix target(p.rows(), 1);
        for (std::size_t i = 0; i < labels.size(); ++i) target(i, 0) = labels[i];
        return loss_kind == TaskLoss::l1 ? g.mean_abs_diff(preds, target)
                                         : g.mean_sq_diff(preds, target);
    }
    std::vector<std::size_t> picks(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double l = labels[i];
        if (l != std::floor(l) || l < 0.0 || static_cast<std::size_t>(l) >= class_count)
            throw data_error("class label out of range: " + std::to_string(l));
        picks[i] = static_cast<std::size_t>(l);
    }
    return g.mean_neg_pick(g.log_softmax_rows(preds), picks);
}

struct LossBreakdown {
    double task = 0.0;
    double sml_text = 0.0;
    double sml_visual = 0.0;
    double sml = 0.0;
    double total = 0.0;
    std::size_t complete_count = 0;
};

struct ObjectiveResult {
    LossBreakdown breakdown;
    Var total;  // scalar node to run backward on
};

/// Task loss over all samples; the matching loss over the complete (mode c)
/// sub-batch only — virtual vectors need their originals as targets. Fewer
/// than two complete samples disables the matching term.
inline ObjectiveResult total_objective(Graph& g, const BatchForward& fwd, const Batch& batch,
                                       const ModelMeta& meta, Var tau,
                                       Ablation ablation = Ablation::none) {
    ObjectiveResult res;
    Var task = task_loss(g, fwd.preds, batch.labels, meta.task, meta.task_loss,
                         meta.class_count);
    res.breakdown.task = g.scalar(task);

    std::vector<Var> orig_t, virt_t, orig_v, virt_v;
    for (const auto& s : fwd.samples) {
        if (s.mode != Mode::c) continue;
        orig_t.push_back(s.x_t);
        virt_t.push_back(s.xbar_t);
        orig_v.push_back(s.x_v);
        virt_v.push_back(s.xbar_v);
    }
    res.breakdown.complete_count = orig_t.size();

    Var total = task;
    if (orig_t.size() >= 2 && ablation != Ablation::no_sml && meta.alpha > 0.0) {
        Var l_text = semantic_matching_loss_pair(g, g.concat_rows(orig_t),
                                                 g.concat_rows(virt_t), tau);
        Var l_visual = semantic_matching_loss_pair(g, g.concat_rows(orig_v),
                                                   g.concat_rows(virt_v), tau);
        res.breakdown.sml_text = g.scalar(l_text);
        res.breakdown.sml_visual = g.scalar(l_visual);
        Var sml = apply_ablation(g, l_text, l_visual, meta.lambda, ablation);
        if (sml.valid()) {
            res.breakdown.sml = g.scalar(sml);
            total = g.add(task, g.scale(sml, meta.alpha));
        }
    }
    res.breakdown.total = g.scalar(total);
    res.total = total;
    return res;
}

}  // namespace trml
