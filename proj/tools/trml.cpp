// Command-line workbench: dataset generation, training, evaluation,
// ablation comparisons, temperature sweeps, similarity/projection exports
// and paired significance tests.
//
// Every option is a flat `key` settable from a config file (`--config`,
// `key = value` lines) and overridable by a flag of the same name
// (`--key value`). The fully resolved config is echoed into the output
// directory so a run can be reproduced from its artifacts alone.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trml/trml.hpp"

namespace fs = std::filesystem;
using namespace trml;

namespace {

// ---- flat key=value options ----

struct Options {
    std::map<std::string, std::string> values;  // key -> resolved value
    std::set<std::string> known;

    void declare(const std::string& key, const std::string& def) {
        known.insert(key);
        values[key] = def;
    }

    void set(const std::string& key, const std::string& value) {
        if (!known.count(key)) throw config_error("unknown option: " + key);
        values[key] = value;
    }

    const std::string& str(const std::string& key) const { return values.at(key); }

    double num(const std::string& key) const {
        try {
            return parse_double(values.at(key), "option " + key);
        } catch (const data_error& e) {
            throw config_error(e.what());
        }
    }

    std::uint64_t uint(const std::string& key) const {
        const double v = num(key);
        if (v < 0 || v != std::floor(v)) throw config_error("option " + key + " must be a non-negative integer");
        return static_cast<std::uint64_t>(v);
    }

    bool flag(const std::string& key) const {
        const std::string& v = values.at(key);
        if (v == "1" || v == "true" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "no") return false;
        throw config_error("option " + key + " must be a boolean (0/1)");
    }
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void load_config_file(Options& opts, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        opts.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

void parse_argv(Options& opts, const std::vector<std::string>& args) {
    // Config files first, then flags in order, so flags win.
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw config_error("--config needs a file path");
            load_config_file(opts, args[i + 1]);
            ++i;
        }
    }
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--config") {
            ++i;
            continue;
        }
        if (a.rfind("--", 0) != 0) throw config_error("expected --key, got: " + a);
        if (i + 1 >= args.size()) throw config_error("option " + a + " needs a value");
        opts.set(a.substr(2), args[i + 1]);
        ++i;
    }
}

void write_resolved_config(const Options& opts, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/config.resolved");
    if (!out) throw data_error("cannot write " + dir + "/config.resolved");
    for (const auto& [k, v] : opts.values) out << k << " = " << v << "\n";
}

// ---- shared option groups ----

void declare_synthetic(Options& o) {
    o.declare("dataset", "");  // path; empty means synthetic
    o.declare("d", "16");
    o.declare("latent_k", "4");
    o.declare("n_frames", "4");
    o.declare("train_size", "2000");
    o.declare("valid_size", "200");
    o.declare("test_size", "500");
    o.declare("text_noise", "0.1");
    o.declare("frame_noise", "0.1");
    o.declare("task", "regression");
    o.declare("class_count", "2");
    o.declare("data_seed", "1");
}

SyntheticConfig synthetic_from(const Options& o, std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.d = o.uint("d");
    cfg.latent_k = o.uint("latent_k");
    cfg.n_frames = o.uint("n_frames");
    cfg.train_size = o.uint("train_size");
    cfg.valid_size = o.uint("valid_size");
    cfg.test_size = o.uint("test_size");
    cfg.text_noise = o.num("text_noise");
    cfg.frame_noise = o.num("frame_noise");
    cfg.task = parse_task(o.str("task"));
    cfg.class_count = o.uint("class_count");
    cfg.seed = seed;
    return cfg;
}

EmbeddingDataset dataset_from(const Options& o) {
    if (!o.str("dataset").empty()) return load_dataset(o.str("dataset"));
    return generate_synthetic(synthetic_from(o, o.uint("data_seed")));
}

void declare_plan(Options& o) {
    o.declare("setting", "A");
    o.declare("victim", "text");
    o.declare("p", "0.1");
}

void declare_train(Options& o) {
    declare_synthetic(o);
    declare_plan(o);
    o.declare("batch_size", "16");
    o.declare("epochs", "50");
    o.declare("lr", "5e-5");
    o.declare("lambda", "0.1");
    o.declare("alpha", "0.5");
    o.declare("tau", "0.1");
    o.declare("tau_learnable", "1");
    o.declare("ablation", "none");
    o.declare("loss", "l1");
    o.declare("seed", "1");
    o.declare("out", "out");
}

TrainConfig train_config_from(const Options& o) {
    TrainConfig cfg;
    cfg.dataset_path = o.str("dataset");
    cfg.synthetic = synthetic_from(o, o.uint("data_seed"));
    cfg.setting = parse_setting(o.str("setting"));
    cfg.victim = parse_victim(o.str("victim"));
    cfg.p = o.num("p");
    cfg.batch_size = static_cast<std::size_t>(o.uint("batch_size"));
    cfg.epochs = static_cast<std::size_t>(o.uint("epochs"));
    cfg.lr = o.num("lr");
    cfg.lambda = o.num("lambda");
    cfg.alpha = o.num("alpha");
    cfg.tau_init = o.num("tau");
    cfg.tau_learnable = o.flag("tau_learnable");
    cfg.seed = o.uint("seed");
    cfg.ablation = parse_ablation(o.str("ablation"));
    cfg.task_loss = parse_task_loss(o.str("loss"));
    cfg.validate();
    return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

// ---- subcommands ----

int cmd_gen_data(const std::vector<std::string>& args) {
    Options o;
    declare_synthetic(o);
    o.declare("seed", "1");
    o.declare("out", "dataset.jsonl");
    parse_argv(o, args);
    // gen-data has a single seed; data_seed mirrors it unless set explicitly.
    SyntheticConfig cfg = synthetic_from(o, o.uint("seed"));
    EmbeddingDataset ds = generate_synthetic(cfg);
    save_dataset(ds, o.str("out"));
    {
        std::ofstream res(o.str("out") + ".config.resolved");
        for (const auto& [k, v] : o.values) res << k << " = " << v << "\n";
    }
    std::cout << "wrote " << o.str("out") << " records=" << ds.records.size()
              << " d=" << ds.d << "\n";
    return 0;
}

int cmd_train(const std::vector<std::string>& args) {
    Options o;
    declare_train(o);
    parse_argv(o, args);
    TrainConfig cfg = train_config_from(o);
    const std::string out = o.str("out");
    write_resolved_config(o, out);

    EmbeddingDataset ds = prepare_dataset(cfg);
    try {
        TrainResult res = train(cfg, ds);
        save_checkpoint(res.params, res.meta, out + "/checkpoint.trml");
        write_train_log_csv(res.log, out + "/train_log.csv");
        std::cout << "trained epochs=" << res.log.epochs.size()
                  << " best_epoch=" << res.log.best_epoch << " checkpoint=" << out
                  << "/checkpoint.trml\n";
        return 0;
    } catch (const training_diverged& e) {
        if (e.last_good)
            save_checkpoint(e.last_good->params, e.last_good->meta,
                            out + "/checkpoint.last_good.trml");
        throw;
    }
}

MissingnessPlan plan_from(const Options& o, const EmbeddingDataset& ds, std::uint64_t seed) {
    return build_missingness_plan(ds, parse_setting(o.str("setting")),
                                  parse_victim(o.str("victim")), o.num("p"), seed);
}

int cmd_eval(const std::vector<std::string>& args) {
    Options o;
    declare_synthetic(o);
    declare_plan(o);
    o.declare("checkpoint", "out/checkpoint.trml");
    o.declare("split", "test");
    o.declare("seed", "1");
    o.declare("out", "out");
    parse_argv(o, args);
    const std::string out = o.str("out");
    write_resolved_config(o, out);

    Checkpoint ck = load_checkpoint(o.str("checkpoint"));
    EmbeddingDataset ds = dataset_from(o);
    const Split split = parse_split(o.str("split"));
    MissingnessPlan plan = plan_from(o, ds, o.uint("seed"));
    MetricsReport rep = evaluate(ck.params, ck.meta, ds, plan, split);
    write_metrics_csv(rep, split, out + "/metrics_" + to_string(split) + ".csv");
    std::cout << metrics_summary_line(rep, split) << "\n";
    return 0;
}

int cmd_ablate(const std::vector<std::string>& args) {
    Options o;
    declare_train(o);
    o.declare("seeds", "5");
    o.declare("split", "test");
    parse_argv(o, args);
    const std::string out = o.str("out");
    write_resolved_config(o, out);

    const std::size_t k = static_cast<std::size_t>(o.uint("seeds"));
    if (k < 2) throw config_error("ablate needs seeds >= 2 for the paired t-test");
    const Split split = parse_split(o.str("split"));
    TrainConfig base = train_config_from(o);
    EmbeddingDataset ds = prepare_dataset(base);

    const Ablation variants[] = {Ablation::none, Ablation::no_sml_text,
                                 Ablation::no_sml_visual, Ablation::no_sml};
    const bool regression = ds.task == Task::regression;

    // metric[variant][seed]: primary metric (MAE or Acc); second metric kept for the table
    std::map<std::string, std::vector<double>> primary, secondary;

    std::ofstream runs(out + "/ablate_runs.csv");
    if (!runs) throw data_error("cannot write " + out + "/ablate_runs.csv");
    runs << (regression ? "variant,seed,mae,acc2\n" : "variant,seed,acc\n");

    for (Ablation v : variants) {
        for (std::size_t s = 0; s < k; ++s) {
            TrainConfig cfg = base;
            cfg.ablation = v;
            cfg.seed = base.seed + s;
            TrainResult res = train(cfg, ds);
            MissingnessPlan plan =
                build_missingness_plan(ds, cfg.setting, cfg.victim, cfg.p, cfg.seed);
            MetricsReport rep = evaluate(res.params, res.meta, ds, plan, split);
            const std::string name = to_string(v);
            if (regression) {
                primary[name].push_back(rep.mae);
                secondary[name].push_back(rep.acc2);
                runs << name << "," << cfg.seed << "," << fmt17(rep.mae) << ","
                     << fmt17(rep.acc2) << "\n";
            } else {
                primary[name].push_back(rep.acc);
                runs << name << "," << cfg.seed << "," << fmt17(rep.acc) << "\n";
            }
            std::cout << "ablate variant=" << name << " seed=" << cfg.seed << " "
                      << metrics_summary_line(rep, split) << "\n";
        }
    }

    std::ofstream summary(out + "/ablate_summary.csv");
    summary << (regression ? "variant,mean_mae,mean_acc2\n" : "variant,mean_acc\n");
    for (Ablation v : variants) {
        const std::string name = to_string(v);
        auto mean = [](const std::vector<double>& xs) {
            double m = 0.0;
            for (double x : xs) m += x;
            return m / static_cast<double>(xs.size());
        };
        summary << name << "," << fmt17(mean(primary[name]));
        if (regression) summary << "," << fmt17(mean(secondary[name]));
        summary << "\n";
    }

    std::ofstream tt(out + "/ablate_ttests.csv");
    tt << "comparison,t,df,p,mean_diff\n";
    for (std::size_t vi = 1; vi < 4; ++vi) {
        const std::string name = to_string(variants[vi]);
        TTestResult r = paired_ttest(primary["none"], primary[name]);
        tt << "none_vs_" << name << "," << fmt17(r.t) << "," << r.df << ","
           << fmt17(r.p_two_tailed) << "," << fmt17(r.mean_diff) << "\n";
    }
    std::cout << "ablation table written to " << out << "\n";
    return 0;
}

int cmd_sweep_tau(const std::vector<std::string>& args) {
    Options o;
    declare_train(o);
    o.declare("taus", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9");
    parse_argv(o, args);
    const std::string out = o.str("out");
    write_resolved_config(o, out);

    std::vector<double> values;
    for (const std::string& tok : split_list(o.str("taus")))
        values.push_back(parse_double(tok, "taus"));
    TrainConfig cfg = train_config_from(o);
    EmbeddingDataset ds = prepare_dataset(cfg);
    std::vector<TauSweepRow> rows = sweep_tau(cfg, values, ds);

    std::ofstream csv(out + "/sweep_tau.csv");
    if (!csv) throw data_error("cannot write " + out + "/sweep_tau.csv");
    const bool regression = ds.task == Task::regression;
    csv << (regression ? "tau,mae,acc2\n" : "tau,acc\n");
    for (const auto& row : rows) {
        csv << fmt17(row.tau) << ",";
        if (regression)
            csv << fmt17(row.test_metrics.mae) << "," << fmt17(row.test_metrics.acc2);
        else
            csv << fmt17(row.test_metrics.acc);
        csv << "\n";
        std::cout << "tau=" << fmt17(row.tau) << " "
                  << metrics_summary_line(row.test_metrics, Split::test) << "\n";
    }
    return 0;
}

int cmd_export_heatmap(const std::vector<std::string>& args) {
    Options o;
    declare_synthetic(o);
    o.declare("checkpoint", "out/checkpoint.trml");
    o.declare("ids", "");
    o.declare("sample_count", "8");
    o.declare("split", "test");
    o.declare("seed", "1");
    o.declare("out", "out");
    parse_argv(o, args);
    const std::string out = o.str("out");
    write_resolved_config(o, out);
    fs::create_directories(out + "/exports");

    Checkpoint ck = load_checkpoint(o.str("checkpoint"));
    EmbeddingDataset ds = dataset_from(o);
    std::vector<std::string> ids = split_list(o.str("ids"));
    if (ids.empty()) {
        // seeded random pick from the chosen split
        std::vector<std::string> pool;
        for (const auto& r : ds.records)
            if (r.split == parse_split(o.str("split"))) pool.push_back(r.id);
        std::sort(pool.begin(), pool.end());
        Rng rng(Rng::mix(o.uint("seed"), 0x8ea7));
        rng.shuffle(pool);
        const std::size_t n = std::min<std::size_t>(o.uint("sample_count"), pool.size());
        ids.assign(pool.begin(), pool.begin() + n);
        std::sort(ids.begin(), ids.end());
    }
    export_similarity_heatmap(ck.params, ck.meta, ds, ids, out + "/exports");
    std::cout << "wrote 5 heatmaps for " << ids.size() << " samples to " << out
              << "/exports\n";
    return 0;
}

int cmd_export_projection(const std::vector<std::string>& args) {
    Options o;
    declare_synthetic(o);
    o.declare("checkpoint", "out/checkpoint.trml");
    o.declare("split", "test");
    o.declare("out", "out");
    parse_argv(o, args);
    const std::string out = o.str("out");
    write_resolved_config(o, out);
    fs::create_directories(out + "/exports");

    Checkpoint ck = load_checkpoint(o.str("checkpoint"));
    EmbeddingDataset ds = dataset_from(o);
    const Split split = parse_split(o.str("split"));
    const std::string path = out + "/exports/projection_" + to_string(split) + ".csv";
    Projection2D proj = export_projection_2d(ck.params, ck.meta, ds, split, path);
    std::cout << "wrote " << proj.coords.rows() << " projected points to " << path
              << (proj.rank_warning ? " (rank<2: second coordinate zeroed)" : "") << "\n";
    return 0;
}

int cmd_ttest(const std::vector<std::string>& args) {
    Options o;
    o.declare("a", "");
    o.declare("b", "");
    o.declare("out", "");
    parse_argv(o, args);
    if (o.str("a").empty() || o.str("b").empty())
        throw config_error("ttest needs --a and --b metrics CSV paths");

    MetricsReport ra = read_metrics_csv(o.str("a"));
    MetricsReport rb = read_metrics_csv(o.str("b"));
    if (ra.count != rb.count) throw data_error("metrics files have different sample counts");
    std::map<std::string, std::size_t> index_b;
    for (std::size_t i = 0; i < rb.count; ++i) index_b[rb.ids[i]] = i;

    // Pair per-sample errors: absolute error for regression, 0/1 miss for
    // classification (read back from predictions vs labels).
    std::vector<double> ea, eb;
    for (std::size_t i = 0; i < ra.count; ++i) {
        auto it = index_b.find(ra.ids[i]);
        if (it == index_b.end()) throw data_error("id missing from second file: " + ra.ids[i]);
        const std::size_t j = it->second;
        if (ra.task == Task::regression) {
            ea.push_back(std::abs(ra.predictions[i] - ra.labels[i]));
            eb.push_back(std::abs(rb.predictions[j] - rb.labels[j]));
        } else {
            ea.push_back(ra.predictions[i] == ra.labels[i] ? 0.0 : 1.0);
            eb.push_back(rb.predictions[j] == rb.labels[j] ? 0.0 : 1.0);
        }
    }
    TTestResult r = paired_ttest(ea, eb);
    std::cout << "t=" << fmt17(r.t) << " df=" << r.df << " p=" << fmt17(r.p_two_tailed)
              << " mean_diff=" << fmt17(r.mean_diff) << "\n";
    if (!o.str("out").empty()) {
        write_resolved_config(o, o.str("out"));
        std::ofstream csv(o.str("out") + "/ttest.csv");
        csv << "t,df,p,mean_diff\n";
        csv << fmt17(r.t) << "," << r.df << "," << fmt17(r.p_two_tailed) << ","
            << fmt17(r.mean_diff) << "\n";
    }
    return 0;
}

void print_usage() {
    std::cout <<
        "usage: trml <command> [--config file] [--key value ...]\n"
        "\n"
        "commands:\n"
        "  gen-data           write a synthetic embedding dataset file\n"
        "  train              train a model; writes checkpoint.trml + train_log.csv\n"
        "  eval               evaluate a checkpoint; writes metrics_<split>.csv\n"
        "  ablate             4 variants x k seeds with paired t-tests\n"
        "  sweep-tau          frozen-temperature sweep; writes sweep_tau.csv\n"
        "  export-heatmap     cosine similarity matrices for chosen samples\n"
        "  export-projection  2D PCA of original vs virtual representations\n"
        "  ttest              paired t-test between two metrics CSVs\n";
}

int error_line(const std::string& kind, int code, const std::string& message) {
    nlohmann::json j;
    j["error"] = kind;
    j["code"] = code;
    j["message"] = message;
    std::cerr << j.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "--help" || args[0] == "help") {
        print_usage();
        return args.empty() ? 2 : 0;
    }
    const std::string cmd = args[0];
    const std::vector<std::string> rest(args.begin() + 1, args.end());
    try {
        if (cmd == "gen-data") return cmd_gen_data(rest);
        if (cmd == "train") return cmd_train(rest);
        if (cmd == "eval") return cmd_eval(rest);
        if (cmd == "ablate") return cmd_ablate(rest);
        if (cmd == "sweep-tau") return cmd_sweep_tau(rest);
        if (cmd == "export-heatmap") return cmd_export_heatmap(rest);
        if (cmd == "export-projection") return cmd_export_projection(rest);
        if (cmd == "ttest") return cmd_ttest(rest);
        return error_line("config", 2, "unknown command: " + cmd);
    } catch (const config_error& e) {
        return error_line("config", 2, e.what());
    } catch (const divergence_error& e) {
        return error_line("divergence", 4, e.what());
    } catch (const numeric_error& e) {
        return error_line("numeric", 4, e.what());
    } catch (const data_error& e) {
        return error_line("data", 3, e.what());
    } catch (const std::exception& e) {
        return error_line("data", 3, e.what());
    }
}
