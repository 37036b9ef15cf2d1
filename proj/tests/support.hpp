#pragma once

// Shared helpers for the unit and acceptance suites: batch builders for the
// full training objective and small independent oracles kept out of the
// library code paths they check.

#include <cmath>
#include <vector>

#include "trml/trml.hpp"

namespace testsupport {

using namespace trml;

/// Small mixed-mode batch pulled from a synthetic dataset: the first
/// `complete` samples are mode c, then alternating mv / mt.
inline Batch mixed_batch(const EmbeddingDataset& ds, std::size_t n, std::size_t complete) {
    Batch b;
    b.text = Matrix(n, ds.d);
    for (std::size_t i = 0; i < n; ++i) {
        const SampleRecord& r = ds.records.at(i);
        b.indices.push_back(i);
        b.text.set_row(i, r.text);
        b.frames.push_back(r.frames);
        b.frame_masks.push_back(r.frame_mask);
        b.labels.push_back(r.label);
        if (i < complete)
            b.modes.push_back(Mode::c);
        else
            b.modes.push_back((i - complete) % 2 == 0 ? Mode::mv : Mode::mt);
    }
    return b;
}

/// The full training objective over one batch, as a closure for the
/// gradient-check machinery.
inline Objective batch_objective(const Batch& batch, const ModelMeta& meta,
                                 bool tau_learnable = true,
                                 Ablation ablation = Ablation::none) {
    return [&batch, meta, tau_learnable, ablation](Graph& g) {
        BatchForward fwd = forward_batch(g, batch);
        Var tau = temperature(g, tau_learnable);
        return total_objective(g, fwd, batch, meta, tau, ablation).total;
    };
}

/// Power-iteration-with-deflation eigen oracle, independent of the Jacobi
/// solver used by the library.
inline std::pair<std::vector<double>, Matrix> power_iteration_eigen(const Matrix& sym,
                                                                    std::size_t k,
                                                                    std::uint64_t seed) {
    const std::size_t n = sym.rows();
    Matrix a = sym;
    Matrix vectors(n, k);
    std::vector<double> values(k, 0.0);
    Rng rng(seed);
    for (std::size_t c = 0; c < k; ++c) {
        Matrix v = seeded_gaussian(rng, n, 1, 0.0, 1.0);
        double norm = l2_norm(v);
        for (std::size_t i = 0; i < n; ++i) v[i] /= norm;
        double lambda = 0.0;
        for (int iter = 0; iter < 100000; ++iter) {
            Matrix w = matmul(a, v);
            const double wn = l2_norm(w);
            if (wn < 1e-300) break;
            for (std::size_t i = 0; i < n; ++i) w[i] /= wn;
            double delta = 0.0;
            for (std::size_t i = 0; i < n; ++i) delta = std::max(delta, std::abs(w[i] - v[i]));
            v = w;
            lambda = dot(matmul(a, v), v);
            if (delta < 1e-13) break;
        }
        values[c] = lambda;
        for (std::size_t i = 0; i < n; ++i) vectors(i, c) = v[i];
        // deflate: a -= lambda v v^T
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) a(i, j) -= lambda * v[i] * v[j];
    }
    return {values, vectors};
}

}  // namespace testsupport
