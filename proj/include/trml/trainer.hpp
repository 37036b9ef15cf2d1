#pragma once

#include <chrono>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "trml/evaluation.hpp"
#include "trml/model.hpp"
#include "trml/objective.hpp"

namespace trml {

struct TrainConfig {
    std::string dataset_path;   // empty -> generate synthetic data
    SyntheticConfig synthetic;
    Setting setting = Setting::A;
    Victim victim = Victim::text;
    double p = 0.1;
    std::size_t batch_size = 16;
    std::size_t epochs = 50;
    double lr = 5e-5;
    double lambda = 0.1;
    double alpha = 0.5;
    double tau_init = 0.1;
    bool tau_learnable = true;
    std::uint64_t seed = 1;
    Ablation ablation = Ablation::none;
    TaskLoss task_loss = TaskLoss::l1;

    void validate() const {
        if (!(p >= 0.0 && p <= 1.0)) throw config_error("p must be in [0,1]");
        if (batch_size < 2) throw config_error("batch_size must be >= 2");
        if (!(lr > 0.0)) throw config_error("lr must be > 0");
        if (!(lambda > 0.0 && lambda < 1.0)) throw config_error("lambda must be in (0,1)");
        if (alpha < 0.0) throw config_error("alpha must be >= 0");
        if (!(tau_init >= kTauMin && tau_init <= kTauMax))
            throw config_error("tau must be in [0.01, 1.0]");
    }
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    LossBreakdown mean;     // sample-weighted means over the epoch's batches
    double val_metric = 0.0;
    double tau = 0.0;
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;  // 1-based, 0 when no epochs ran
};

struct TrainResult {
    ParamStore params;  // best checkpoint by validation metric
    ModelMeta meta;
    TrainLog log;
};

/// Divergence carries the last checkpoint that was still finite.
struct training_diverged : divergence_error {
    training_diverged(const std::string& msg, std::shared_ptr<Checkpoint> last)
        : divergence_error(msg), last_good(std::move(last)) {}
    std::shared_ptr<Checkpoint> last_good;
};

inline EmbeddingDataset prepare_dataset(const TrainConfig& cfg) {
    if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
    return generate_synthetic(cfg.synthetic);
}

constexpr double kDivergenceBound = 1e6;

inline TrainResult train(const TrainConfig& cfg, const EmbeddingDataset& ds) {
    cfg.validate();
    const MissingnessPlan plan =
        build_missingness_plan(ds, cfg.setting, cfg.victim, cfg.p, cfg.seed);

    ModelMeta meta = ModelMeta::for_dataset(ds);
    meta.lambda = cfg.lambda;
    meta.alpha = cfg.alpha;
    meta.tau_learnable = cfg.tau_learnable;
    meta.task_loss = cfg.task_loss;

    ParamStore params = init_params(meta, cfg.tau_init, cfg.seed);

    TrainResult result;
    result.meta = meta;
    result.params = params;  // epochs == 0 returns the initialization

    const bool has_valid = ds.split_size(Split::valid) > 0;
    const Split selection_split = has_valid ? Split::valid : Split::train;

    double best_metric = 0.0;
    ParamStore last_good = params;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t epoch_seed = Rng::mix(cfg.seed, 0xe90c + epoch);
        const std::vector<Batch> batches =
            iterate_batches(ds, plan, cfg.batch_size, epoch_seed, Split::train);

        LossBreakdown sums;
        std::size_t samples = 0;
        for (const Batch& batch : batches) {
            Graph g(&params);
            BatchForward fwd = forward_batch(g, batch);
            Var tau = temperature(g, cfg.tau_learnable);
            ObjectiveResult obj = total_objective(g, fwd, batch, meta, tau, cfg.ablation);

            if (!std::isfinite(obj.breakdown.total) || obj.breakdown.total > kDivergenceBound)
                throw training_diverged(
                    "training diverged at epoch " + std::to_string(epoch) +
                        " (total=" + fmt17(obj.breakdown.total) + ")",
                    std::make_shared<Checkpoint>(Checkpoint{last_good, meta}));

            g.backward(obj.total);
            params.adam_step(cfg.lr);

            const double w = static_cast<double>(batch.size());
            sums.task += obj.breakdown.task * w;
            sums.sml_text += obj.breakdown.sml_text * w;
            sums.sml_visual += obj.breakdown.sml_visual * w;
            sums.sml += obj.breakdown.sml * w;
            sums.total += obj.breakdown.total * w;
            samples += batch.size();
        }
        last_good = params;

        EpochLog el;
        el.epoch = epoch;
        if (samples > 0) {
            const double inv = 1.0 / static_cast<double>(samples);
            el.mean.task = sums.task * inv;
            el.mean.sml_text = sums.sml_text * inv;
            el.mean.sml_visual = sums.sml_visual * inv;
            el.mean.sml = sums.sml * inv;
            el.mean.total = sums.total * inv;
        }
        el.tau = current_tau(params);

        MetricsReport val = evaluate(params, meta, ds, plan, selection_split);
        el.val_metric = val.selection_metric();

        const bool better =
            result.log.best_epoch == 0 ||
            (val.lower_is_better() ? el.val_metric < best_metric : el.val_metric > best_metric);
        if (better) {
            best_metric = el.val_metric;
            result.log.best_epoch = epoch;
            result.params = params;
        }

        el.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(el);
    }
    return result;
}

inline TrainResult train(const TrainConfig& cfg) {
    const EmbeddingDataset ds = prepare_dataset(cfg);
    return train(cfg, ds);
}

inline void write_train_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open for writing: " + path);
    out << "epoch,task_loss,sml_text,sml_visual,sml,total,val_metric,tau\n";
    for (const auto& e : log.epochs)
        out << e.epoch << "," << fmt17(e.mean.task) << "," << fmt17(e.mean.sml_text) << ","
            << fmt17(e.mean.sml_visual) << "," << fmt17(e.mean.sml) << ","
            << fmt17(e.mean.total) << "," << fmt17(e.val_metric) << "," << fmt17(e.tau) << "\n";
    if (!out) throw data_error("write failed: " + path);
}

struct TauSweepRow {
    double tau = 0.0;
    MetricsReport test_metrics;
};

/// One full train+eval per tau value with a shared seed; tau is frozen.
inline std::vector<TauSweepRow> sweep_tau(const TrainConfig& cfg,
                                          const std::vector<double>& values,
                                          const EmbeddingDataset& ds) {
    if (values.empty()) throw config_error("sweep_tau: no values given");
    for (double v : values)
        if (!(v >= kTauMin && v <= kTauMax))
            throw config_error("sweep_tau: tau values must be in [0.01, 1.0]");
    std::vector<TauSweepRow> rows;
    for (double v : values) {
        TrainConfig point = cfg;
        point.tau_init = v;
        point.tau_learnable = false;
        TrainResult res = train(point, ds);
        const MissingnessPlan plan =
            build_missingness_plan(ds, point.setting, point.victim, point.p, point.seed);
        TauSweepRow row;
        row.tau = v;
        row.test_metrics = evaluate(res.params, res.meta, ds, plan, Split::test);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace trml
