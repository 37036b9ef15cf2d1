#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "trml/model.hpp"
#include "trml/objective.hpp"

namespace trml {

struct MetricsReport {
    Task task = Task::regression;
    double mae = 0.0;
    double acc2 = 0.0;  // sign agreement over non-zero labels (regression)
    double acc = 0.0;   // argmax accuracy (classification)
    std::size_t count = 0;
    std::vector<std::string> ids;
    std::vector<double> labels;
    std::vector<double> predictions;  // score (regression) or class index

    /// The model-selection metric: MAE (lower better) or Acc (higher better).
    double selection_metric() const { return task == Task::regression ? mae : acc; }
    bool lower_is_better() const { return task == Task::regression; }
};

namespace detail {

inline int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace detail

/// Forward every sample of the split under its plan mode and reduce metrics
/// sequentially in sample-id order.
inline MetricsReport evaluate(ParamStore& params, const ModelMeta& meta,
                              const EmbeddingDataset& ds, const MissingnessPlan& plan,
                              Split split) {
    if (ds.d != meta.d) throw data_error("dataset dimension does not match checkpoint");
    std::vector<std::size_t> order = ds.split_indices(split);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ds.records[a].id < ds.records[b].id;
    });

    MetricsReport rep;
    rep.task = meta.task;
    rep.count = order.size();

    constexpr std::size_t chunk = 64;
    for (std::size_t start = 0; start < order.size(); start += chunk) {
        const std::size_t end = std::min(start + chunk, order.size());
        std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
        Batch batch = make_batch(ds, plan, idx);
        Graph g(&params);
        BatchForward fwd = forward_batch(g, batch);
        const Matrix& preds = g.value(fwd.preds);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const SampleRecord& r = ds.records[idx[i]];
            rep.ids.push_back(r.id);
            rep.labels.push_back(r.label);
            if (meta.task == Task::regression) {
                rep.predictions.push_back(preds(i, 0));
            } else {
                std::size_t best = 0;
                for (std::size_t c = 1; c < preds.cols(); ++c)
                    if (preds(i, c) > preds(i, best)) best = c;
                rep.predictions.push_back(static_cast<double>(best));
            }
        }
    }

    if (meta.task == Task::regression) {
        double abs_sum = 0.0;
        std::size_t sign_hits = 0, sign_total = 0;
        for (std::size_t i = 0; i < rep.count; ++i) {
            abs_sum += std::abs(rep.predictions[i] - rep.labels[i]);
            if (rep.labels[i] != 0.0) {
                ++sign_total;
                if (detail::sign_of(rep.predictions[i]) == detail::sign_of(rep.labels[i]))
                    ++sign_hits;
            }
        }
        rep.mae = rep.count ? abs_sum / static_cast<double>(rep.count) : 0.0;
        rep.acc2 = sign_total ? static_cast<double>(sign_hits) / static_cast<double>(sign_total)
                              : 0.0;
    } else {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < rep.count; ++i)
            if (rep.predictions[i] == rep.labels[i]) ++hits;
        rep.acc = rep.count ? static_cast<double>(hits) / static_cast<double>(rep.count) : 0.0;
    }
    return rep;
}

// ---- paired t-test ----

namespace detail {

inline double betacf(double a, double b, double x) {
    constexpr int max_iter = 200;
    constexpr double eps = 3e-14;
    constexpr double fpmin = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

/// Regularized incomplete beta I_x(a, b).
inline double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

struct TTestResult {
    double t = 0.0;
    std::size_t df = 0;
    double p_two_tailed = 1.0;
    double mean_diff = 0.0;
};

/// Paired two-tailed Student t over the differences a_i - b_i. All-zero
/// differences give t=0, p=1 by convention.
inline TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw config_error("paired_ttest: series lengths differ");
    const std::size_t n = a.size();
    if (n < 2) throw config_error("paired_ttest: need n >= 2");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    TTestResult res;
    res.df = n - 1;
    res.mean_diff = mean;
    if (sd == 0.0) {
        if (mean == 0.0) return res;  // t=0, p=1
        res.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
        res.p_two_tailed = 0.0;
        return res;
    }
    res.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const double dof = static_cast<double>(res.df);
    res.p_two_tailed = detail::betai(dof / 2.0, 0.5, dof / (dof + res.t * res.t));
    return res;
}

// ---- inference representations (shared by exports) ----

struct SampleReps {
    Matrix x_t, x_v, xbar_t, xbar_v;  // 1 x d each
};

/// Representations of a complete sample (both modalities read from the data).
inline SampleReps compute_reps(ParamStore& params, const SampleRecord& r) {
    Graph g(&params);
    Var x_t = g.constant(r.text, "text");
    Var x_v = temporal_encode(g, r.frames, r.frame_mask);
    Var xbar_t = generate_virtual_text(g, x_v);
    Var xbar_v = generate_virtual_visual(g, x_t);
    return {g.value(x_t), g.value(x_v), g.value(xbar_t), g.value(xbar_v)};
}

// ---- similarity heatmaps ----

struct HeatmapSet {
    std::vector<std::string> ids;
    Matrix text_virtual_text;      // cos(x_t, xbar_t)
    Matrix visual_virtual_visual;  // cos(x_v, xbar_v)
    Matrix text_text;              // cos(x_t, x_t)
    Matrix visual_visual;          // cos(x_v, x_v)
    Matrix text_visual;            // cos(x_t, x_v)
};

inline HeatmapSet compute_similarity_heatmaps(ParamStore& params, const ModelMeta& meta,
                                              const EmbeddingDataset& ds,
                                              const std::vector<std::string>& ids) {
    if (ds.d != meta.d) throw data_error("dataset dimension does not match checkpoint");
    if (ids.size() < 2) throw config_error("heatmap export needs at least 2 ids");
    const std::size_t n = ids.size();
    Matrix xt(n, meta.d), xv(n, meta.d), bt(n, meta.d), bv(n, meta.d);
    for (std::size_t i = 0; i < n; ++i) {
        const SampleRecord* rec = nullptr;
        for (const auto& r : ds.records)
            if (r.id == ids[i]) {
                rec = &r;
                break;
            }
        if (!rec) throw data_error("unknown sample id: " + ids[i]);
        SampleReps reps = compute_reps(params, *rec);
        xt.set_row(i, reps.x_t);
        xv.set_row(i, reps.x_v);
        bt.set_row(i, reps.xbar_t);
        bv.set_row(i, reps.xbar_v);
    }
    HeatmapSet set;
    set.ids = ids;
    set.text_virtual_text = cosine_similarity_matrix(xt, bt);
    set.visual_virtual_visual = cosine_similarity_matrix(xv, bv);
    set.text_text = cosine_similarity_matrix(xt, xt);
    set.visual_visual = cosine_similarity_matrix(xv, xv);
    set.text_visual = cosine_similarity_matrix(xt, xv);
    return set;
}

inline void write_heatmap_csv(const Matrix& m, const std::vector<std::string>& ids,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open for writing: " + path);
    out << "#trml-export v1\n";
    out << "id";
    for (const auto& id : ids) out << "," << id;
    out << "\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out << ids[i];
        for (std::size_t j = 0; j < m.cols(); ++j) out << "," << fmt17(m(i, j));
        out << "\n";
    }
    if (!out) throw data_error("write failed: " + path);
}

inline void export_similarity_heatmap(ParamStore& params, const ModelMeta& meta,
                                      const EmbeddingDataset& ds,
                                      const std::vector<std::string>& ids,
                                      const std::string& dir) {
    HeatmapSet set = compute_similarity_heatmaps(params, meta, ds, ids);
    write_heatmap_csv(set.text_virtual_text, ids, dir + "/heatmap_text_virtual_text.csv");
    write_heatmap_csv(set.visual_virtual_visual, ids, dir + "/heatmap_visual_virtual_visual.csv");
    write_heatmap_csv(set.text_text, ids, dir + "/heatmap_text_text.csv");
    write_heatmap_csv(set.visual_visual, ids, dir + "/heatmap_visual_visual.csv");
    write_heatmap_csv(set.text_visual, ids, dir + "/heatmap_text_visual.csv");
}

// ---- 2D projection (PCA) ----

struct EigenDecomposition {
    std::vector<double> values;  // descending
    Matrix vectors;              // columns, matching order
};

/// Cyclic Jacobi eigensolver for symmetric matrices.
inline EigenDecomposition symmetric_eigen(Matrix a) {
    require_shape(a.rows() == a.cols(), "symmetric_eigen");
    const std::size_t n = a.rows();
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = detail::sign_of(theta) == 0
                                     ? 1.0
                                     : detail::sign_of(theta) /
                                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    EigenDecomposition dec;
    dec.values.resize(n);
    dec.vectors = Matrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        dec.values[c] = a(order[c], order[c]);
        for (std::size_t r = 0; r < n; ++r) dec.vectors(r, c) = v(r, order[c]);
    }
    return dec;
}

/// Flip each column so its largest-magnitude coordinate is positive.
inline void fix_component_signs(Matrix& vectors) {
    for (std::size_t c = 0; c < vectors.cols(); ++c) {
        std::size_t arg = 0;
        for (std::size_t r = 1; r < vectors.rows(); ++r)
            if (std::abs(vectors(r, c)) > std::abs(vectors(arg, c))) arg = r;
        if (vectors(arg, c) < 0.0)
            for (std::size_t r = 0; r < vectors.rows(); ++r) vectors(r, c) = -vectors(r, c);
    }
}

struct Projection2D {
    std::vector<std::string> ids;
    std::vector<std::string> tags;
    Matrix coords;  // N x 2
    bool rank_warning = false;
};

/// Center the rows and project onto the top-2 principal directions.
inline Projection2D project_rows_2d(const Matrix& rows) {
    if (rows.rows() < 3) throw config_error("projection needs at least 3 rows");
    const std::size_t n = rows.rows(), d = rows.cols();
    Matrix centered = rows;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += rows(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) centered(i, j) -= mean;
    }
    Matrix cov = matmul(transposed(centered), centered);
    EigenDecomposition dec = symmetric_eigen(cov);

    Matrix basis(d, 2);
    for (std::size_t r = 0; r < d; ++r) {
        basis(r, 0) = dec.vectors(r, 0);
        basis(r, 1) = d > 1 ? dec.vectors(r, 1) : 0.0;
    }
    fix_component_signs(basis);

    Projection2D proj;
    proj.rank_warning =
        dec.values.size() < 2 || dec.values[1] <= 1e-12 * std::max(dec.values[0], 1.0);
    proj.coords = matmul(centered, basis);
    if (proj.rank_warning)
        for (std::size_t i = 0; i < n; ++i) proj.coords(i, 1) = 0.0;
    return proj;
}

/// Stacks original and virtual representations of a split (four rows per
/// sample, tagged by modality) and projects them to 2D.
inline Projection2D export_projection_2d(ParamStore& params, const ModelMeta& meta,
                                         const EmbeddingDataset& ds, Split split,
                                         const std::string& path) {
    if (ds.d != meta.d) throw data_error("dataset dimension does not match checkpoint");
    std::vector<std::size_t> order = ds.split_indices(split);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ds.records[a].id < ds.records[b].id;
    });
    if (order.size() < 3) throw data_error("projection export needs at least 3 samples");

    static const char* tags[4] = {"text", "visual", "virtual_text", "virtual_visual"};
    Matrix stacked(order.size() * 4, meta.d);
    std::vector<std::string> ids;
    std::vector<std::string> tag_col;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const SampleRecord& r = ds.records[order[i]];
        SampleReps reps = compute_reps(params, r);
        const Matrix* mats[4] = {&reps.x_t, &reps.x_v, &reps.xbar_t, &reps.xbar_v};
        for (std::size_t m = 0; m < 4; ++m) {
            stacked.set_row(i * 4 + m, *mats[m]);
            ids.push_back(r.id);
            tag_col.push_back(tags[m]);
        }
    }

    Projection2D proj = project_rows_2d(stacked);
    proj.ids = std::move(ids);
    proj.tags = std::move(tag_col);

    std::ofstream out(path);
    if (!out) throw data_error("cannot open for writing: " + path);
    out << "#trml-export v1 rank_warning=" << (proj.rank_warning ? 1 : 0) << "\n";
    out << "id,modality,x,y\n";
    for (std::size_t i = 0; i < proj.coords.rows(); ++i)
        out << proj.ids[i] << "," << proj.tags[i] << "," << fmt17(proj.coords(i, 0)) << ","
            << fmt17(proj.coords(i, 1)) << "\n";
    if (!out) throw data_error("write failed: " + path);
    return proj;
}

// ---- metrics CSV ----

inline void write_metrics_csv(const MetricsReport& rep, Split split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open for writing: " + path);
    out << "#trml-metrics v1 split=" << to_string(split) << " task=" << to_string(rep.task)
        << " count=" << rep.count;
    if (rep.task == Task::regression)
        out << " mae=" << fmt17(rep.mae) << " acc2=" << fmt17(rep.acc2);
    else
        out << " acc=" << fmt17(rep.acc);
    out << "\n";
    out << "id,label,prediction\n";
    for (std::size_t i = 0; i < rep.count; ++i)
        out << rep.ids[i] << "," << fmt17(rep.labels[i]) << "," << fmt17(rep.predictions[i])
            << "\n";
    if (!out) throw data_error("write failed: " + path);
}

inline std::string metrics_summary_line(const MetricsReport& rep, Split split) {
    std::string line = "split=" + to_string(split) + " count=" + std::to_string(rep.count);
    if (rep.task == Task::regression)
        line += " mae=" + fmt17(rep.mae) + " acc2=" + fmt17(rep.acc2);
    else
        line += " acc=" + fmt17(rep.acc);
    return line;
}

/// Reads back a metrics CSV written by write_metrics_csv.
inline MetricsReport read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open metrics file: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("#trml-metrics v1", 0) != 0)
        throw data_error("bad metrics header in " + path);
    MetricsReport rep;
    rep.task = line.find("task=classification") != std::string::npos ? Task::classification
                                                                     : Task::regression;
    if (!std::getline(in, line) || line != "id,label,prediction")
        throw data_error("bad metrics column header in " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw data_error("bad metrics row in " + path + ": " + line);
        rep.ids.push_back(line.substr(0, c1));
        rep.labels.push_back(parse_double(line.substr(c1 + 1, c2 - c1 - 1), path));
        rep.predictions.push_back(parse_double(line.substr(c2 + 1), path));
    }
    rep.count = rep.ids.size();
    return rep;
}

}  // namespace trml
