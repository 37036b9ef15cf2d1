#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trml/matrix.hpp"
#include "trml/rng.hpp"

namespace trml {

enum class Task { regression, classification };
enum class Split { train, valid, test };
enum class Setting { A, B };
enum class Victim { text, visual };

/// Fusion route for one sample: missing visual, missing text, or complete.
enum class Mode { mv, mt, c };

inline std::string to_string(Task t) { return t == Task::regression ? "regression" : "classification"; }
inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        default: return "test";
    }
}
inline std::string to_string(Setting s) { return s == Setting::A ? "A" : "B"; }
inline std::string to_string(Victim v) { return v == Victim::text ? "text" : "visual"; }
inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::mv: return "mv";
        case Mode::mt: return "mt";
        default: return "c";
    }
}

inline Task parse_task(const std::string& s) {
    if (s == "regression") return Task::regression;
    if (s == "classification") return Task::classification;
    throw config_error("unknown task: " + s);
}
inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "valid") return Split::valid;
    if (s == "test") return Split::test;
    throw data_error("unknown split tag: " + s);
}
inline Setting parse_setting(const std::string& s) {
    if (s == "A" || s == "a") return Setting::A;
    if (s == "B" || s == "b") return Setting::B;
    throw config_error("unknown setting: " + s);
}
inline Victim parse_victim(const std::string& s) {
    if (s == "text") return Victim::text;
    if (s == "visual") return Victim::visual;
    throw config_error("unknown victim modality: " + s);
}

struct SampleRecord {
    std::string id;
    Split split = Split::train;
    double label = 0.0;  // class index for classification
    Matrix text;         // 1 x d
    Matrix frames;       // n x d, n >= 1
    std::optional<std::vector<int>> frame_mask;  // 0/1 per frame

    std::size_t present_frames() const {
        if (!frame_mask) return frames.rows();
        std::size_t n = 0;
        for (int m : *frame_mask) n += (m != 0);
        return n;
    }
};

struct EmbeddingDataset {
    std::vector<SampleRecord> records;
    std::size_t d = 0;
    Task task = Task::regression;
    std::size_t class_count = 0;  // classification only

    std::vector<std::size_t> split_indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < records.size(); ++i)
            if (records[i].split == s) out.push_back(i);
        return out;
    }

    std::size_t split_size(Split s) const { return split_indices(s).size(); }
};

// ---- file format ----
// Header line `#trml-embeddings v1 d=<d> task=<task>`, then one JSON object
// per line: id, split, label, text, frames, optional frame_mask.

inline void validate_dataset(const EmbeddingDataset& ds) {
    std::set<std::string> ids;
    for (const auto& r : ds.records) {
        if (!ids.insert(r.id).second) throw data_error("duplicate id: " + r.id);
        if (r.text.rows() != 1 || r.text.cols() != ds.d)
            throw data_error("record " + r.id + ": text dimension " +
                             std::to_string(r.text.cols()) + " != d=" + std::to_string(ds.d));
        if (r.frames.rows() < 1) throw data_error("record " + r.id + ": no frames");
        if (r.frames.cols() != ds.d)
            throw data_error("record " + r.id + ": frame dimension " +
                             std::to_string(r.frames.cols()) + " != d=" + std::to_string(ds.d));
        if (r.frame_mask && r.frame_mask->size() != r.frames.rows())
            throw data_error("record " + r.id + ": frame_mask length mismatch");
        if (!all_finite(r.text) || !all_finite(r.frames))
            throw data_error("record " + r.id + ": non-finite embedding value");
        if (!std::isfinite(r.label)) throw data_error("record " + r.id + ": non-finite label");
        if (ds.task == Task::classification) {
            const double l = r.label;
            if (l != std::floor(l) || l < 0.0 || static_cast<std::size_t>(l) >= ds.class_count)
                throw data_error("record " + r.id + ": label out of class range");
        }
    }
    if (ds.split_size(Split::train) == 0) throw data_error("dataset has no train records");
    if (ds.split_size(Split::test) == 0) throw data_error("dataset has no test records");
}

inline void save_dataset(const EmbeddingDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open for writing: " + path);
    out << "#trml-embeddings v1 d=" << ds.d << " task=" << to_string(ds.task) << "\n";
    for (const auto& r : ds.records) {
        nlohmann::json j;
        j["id"] = r.id;
        j["split"] = to_string(r.split);
        j["label"] = r.label;
        j["text"] = r.text.data();
        nlohmann::json frames = nlohmann::json::array();
        for (std::size_t i = 0; i < r.frames.rows(); ++i)
            frames.push_back(r.frames.extract_row(i).data());
        j["frames"] = std::move(frames);
        if (r.frame_mask) j["frame_mask"] = *r.frame_mask;
        out << j.dump() << "\n";
    }
    if (!out) throw data_error("write failed: " + path);
}

inline EmbeddingDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open dataset file: " + path);
    std::string header;
    if (!std::getline(in, header)) throw data_error("empty dataset file: " + path);

    EmbeddingDataset ds;
    {
        std::istringstream hs(header);
        std::string magic, version, dfield, tfield;
        hs >> magic >> version >> dfield >> tfield;
        if (magic != "#trml-embeddings" || version != "v1" || dfield.rfind("d=", 0) != 0 ||
            tfield.rfind("task=", 0) != 0)
            throw data_error("bad dataset header: " + header);
        ds.d = static_cast<std::size_t>(parse_double(dfield.substr(2), "dataset header d"));
        ds.task = parse_task(tfield.substr(5));
    }

    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw data_error("line " + std::to_string(lineno) + ": " + e.what());
        }
        try {
            SampleRecord r;
            r.id = j.at("id").get<std::string>();
            r.split = parse_split(j.at("split").get<std::string>());
            r.label = j.at("label").get<double>();
            r.text = Matrix::row(j.at("text").get<std::vector<double>>());
            const auto& jf = j.at("frames");
            if (!jf.is_array() || jf.empty())
                throw data_error("record " + r.id + ": frames must be a non-empty array");
            r.frames = Matrix(jf.size(), jf[0].size());
            for (std::size_t i = 0; i < jf.size(); ++i) {
                const auto row = jf[i].get<std::vector<double>>();
                if (row.size() != r.frames.cols())
                    throw data_error("record " + r.id + ": ragged frame rows");
                for (std::size_t c = 0; c < row.size(); ++c) r.frames(i, c) = row[c];
            }
            if (j.contains("frame_mask")) {
                r.frame_mask = j.at("frame_mask").get<std::vector<int>>();
                for (int m : *r.frame_mask)
                    if (m != 0 && m != 1)
                        throw data_error("record " + r.id + ": frame_mask entries must be 0/1");
            }
            ds.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw data_error("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (ds.task == Task::classification) {
        double mx = 0.0;
        for (const auto& r : ds.records) mx = std::max(mx, r.label);
        ds.class_count = static_cast<std::size_t>(mx) + 1;
    }
    validate_dataset(ds);
    return ds;
}

// ---- synthetic benchmark ----

struct SyntheticConfig {
    std::size_t d = 16;
    std::size_t latent_k = 4;
    std::size_t n_frames = 4;
    std::size_t train_size = 2000;
    std::size_t valid_size = 200;
    std::size_t test_size = 500;
    double text_noise = 0.1;
    double frame_noise = 0.1;
    Task task = Task::regression;
    std::size_t class_count = 2;
    std::uint64_t seed = 1;
};

namespace detail {

// Gram-Schmidt columns of a d x k seeded Gaussian draw.
inline Matrix orthonormal_columns(Rng& rng, std::size_t d, std::size_t k) {
    Matrix m = seeded_gaussian(rng, d, k, 0.0, 1.0);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double proj = 0.0;
            for (std::size_t i = 0; i < d; ++i) proj += m(i, c) * m(i, p);
            for (std::size_t i = 0; i < d; ++i) m(i, c) -= proj * m(i, p);
        }
        double n = 0.0;
        for (std::size_t i = 0; i < d; ++i) n += m(i, c) * m(i, c);
        n = std::sqrt(n);
        if (n < 1e-12) throw numeric_error("degenerate basis draw in synthetic generator");
        for (std::size_t i = 0; i < d; ++i) m(i, c) /= n;
    }
    return m;
}

inline Matrix l2_normalized_row(const Matrix& r) {
    const double n = l2_norm(r);
    if (n < 1e-12) throw numeric_error("zero-norm synthetic embedding");
    return scaled(r, 1.0 / n);
}

}  // namespace detail

/// Latent-factor benchmark: both modalities are noisy unit-norm projections of
/// a shared latent z, with the two projection subspaces held at a fixed
/// principal angle so paired cross-modal cosines are well separated from
/// unpaired ones. Labels derive from w.z, clipped to [-3, 3]. The frame
/// projection under-expresses the label-carrying latent direction, so the
/// visual modality still contains the label but makes it hard to extract --
/// the regime the missing-modality machinery is for.
inline EmbeddingDataset generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.latent_k < 1 || cfg.d < cfg.latent_k)
        throw config_error("generate_synthetic: need d >= latent_k >= 1");
    if (cfg.train_size < 1 || cfg.valid_size < 1 || cfg.test_size < 1)
        throw config_error("generate_synthetic: split sizes must be >= 1");
    if (cfg.text_noise < 0.0 || cfg.frame_noise < 0.0)
        throw config_error("generate_synthetic: noise must be >= 0");
    if (cfg.n_frames < 1) throw config_error("generate_synthetic: n_frames must be >= 1");
    if (cfg.task == Task::classification && cfg.class_count < 2)
        throw config_error("generate_synthetic: class_count must be >= 2");

    const std::size_t d = cfg.d;
    const std::size_t k = cfg.latent_k;

    constexpr double angle = std::numbers::pi / 3.0;  // text/frame subspace angle
    constexpr double label_axis_gain = 0.3;           // frame-side attenuation of w

    Rng basis_rng(Rng::mix(cfg.seed, 0x5f0e1));

    Matrix label_w = seeded_gaussian(basis_rng, 1, k, 0.0, 1.0);
    label_w = scaled(label_w, 1.5 / std::max(l2_norm(label_w), 1e-12));

    // latent rotation whose first axis is the label direction
    Matrix rot(k, k);
    for (std::size_t i = 0; i < k; ++i) rot(i, 0) = label_w[i] / l2_norm(label_w);
    if (k > 1) {
        Matrix fill = seeded_gaussian(basis_rng, k, k - 1, 0.0, 1.0);
        for (std::size_t c = 1; c < k; ++c) {
            for (std::size_t i = 0; i < k; ++i) rot(i, c) = fill(i, c - 1);
            for (std::size_t p = 0; p < c; ++p) {
                double proj = 0.0;
                for (std::size_t i = 0; i < k; ++i) proj += rot(i, c) * rot(i, p);
                for (std::size_t i = 0; i < k; ++i) rot(i, c) -= proj * rot(i, p);
            }
            double n = 0.0;
            for (std::size_t i = 0; i < k; ++i) n += rot(i, c) * rot(i, c);
            n = std::sqrt(n);
            if (n < 1e-12) throw numeric_error("degenerate latent rotation draw");
            for (std::size_t i = 0; i < k; ++i) rot(i, c) /= n;
        }
    }

    Matrix text_basis;   // d x k, orthonormal columns
    Matrix frame_basis;  // d x k, at a fixed angle to text_basis
    if (d >= 2 * k) {
        Matrix uv = detail::orthonormal_columns(basis_rng, d, 2 * k);
        text_basis = Matrix(d, k);
        frame_basis = Matrix(d, k);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t c = 0; c < k; ++c) {
                text_basis(i, c) = uv(i, c);
                frame_basis(i, c) =
                    std::cos(angle) * uv(i, c) + std::sin(angle) * uv(i, k + c);
            }
    } else {
        // Not enough room for an orthogonal complement; mix shifted columns.
        Matrix u = detail::orthonormal_columns(basis_rng, d, k);
        text_basis = u;
        frame_basis = Matrix(d, k);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t c = 0; c < k; ++c)
                frame_basis(i, c) =
                    std::cos(angle) * u(i, c) + std::sin(angle) * u(i, (c + 1) % k);
    }

    // A = text_basis . rot^T; B = frame_basis . diag(gain,1,...) . rot^T
    Matrix text_proj = matmul(text_basis, transposed(rot));
    Matrix attenuated = frame_basis;
    for (std::size_t i = 0; i < d; ++i) attenuated(i, 0) *= label_axis_gain;
    Matrix frame_proj = matmul(attenuated, transposed(rot));

    EmbeddingDataset ds;
    ds.d = d;
    ds.task = cfg.task;
    ds.class_count = cfg.task == Task::classification ? cfg.class_count : 0;

    Rng sample_rng(Rng::mix(cfg.seed, 0xda7a));
    const struct {
        Split split;
        std::size_t size;
        const char* tag;
    } splits[] = {{Split::train, cfg.train_size, "train"},
                  {Split::valid, cfg.valid_size, "valid"},
                  {Split::test, cfg.test_size, "test"}};

    for (const auto& sp : splits) {
        for (std::size_t i = 0; i < sp.size; ++i) {
            Matrix z = seeded_gaussian(sample_rng, 1, k, 0.0, 1.0);

            Matrix text = matmul(z, transposed(text_proj));  // 1 x d
            if (cfg.text_noise > 0.0) {
                Matrix eps = seeded_gaussian(sample_rng, 1, d, 0.0, cfg.text_noise);
                text = add(text, eps);
            }
            text = detail::l2_normalized_row(text);

            Matrix frames(cfg.n_frames, d);
            Matrix base = matmul(z, transposed(frame_proj));
            for (std::size_t f = 0; f < cfg.n_frames; ++f) {
                Matrix fr = base;
                if (cfg.frame_noise > 0.0) {
                    Matrix eta = seeded_gaussian(sample_rng, 1, d, 0.0, cfg.frame_noise);
                    fr = add(fr, eta);
                }
                frames.set_row(f, detail::l2_normalized_row(fr));
            }

            const double score = std::clamp(dot(z, label_w), -3.0, 3.0);
            double label = score;
            if (cfg.task == Task::classification) {
                // Sign buckets over [-3, 3]: C=2 reduces to the sign of the score.
                const double t = (score + 3.0) / 6.0;
                auto bucket = static_cast<std::size_t>(t * static_cast<double>(cfg.class_count));
                label = static_cast<double>(std::min(bucket, cfg.class_count - 1));
            }

            SampleRecord r;
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "%s-%05zu", sp.tag, i);
            r.id = idbuf;
            r.split = sp.split;
            r.label = label;
            r.text = std::move(text);
            r.frames = std::move(frames);
            ds.records.push_back(std::move(r));
        }
    }
    validate_dataset(ds);
    return ds;
}

// ---- missingness plans ----

/// Per-sample presence of the victim modality. p is the PRESENT proportion;
/// 1-p is removed. Setting A: test split fully absent (valid mirrors test so
/// model selection sees the test condition); train keeps round(p*n). Setting
/// B: round(p*n) present in every split.
struct MissingnessPlan {
    Setting setting = Setting::A;
    Victim victim = Victim::text;
    double p = 1.0;
    std::uint64_t seed = 0;
    std::map<std::string, bool> victim_present;  // by record id

    bool present(const std::string& id) const {
        auto it = victim_present.find(id);
        if (it == victim_present.end()) throw data_error("plan has no entry for id: " + id);
        return it->second;
    }
};

inline MissingnessPlan build_missingness_plan(const EmbeddingDataset& ds, Setting setting,
                                              Victim victim, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) throw config_error("missingness p must be in [0,1]");
    MissingnessPlan plan;
    plan.setting = setting;
    plan.victim = victim;
    plan.p = p;
    plan.seed = seed;

    const Split splits[] = {Split::train, Split::valid, Split::test};
    for (std::size_t si = 0; si < 3; ++si) {
        const Split split = splits[si];
        std::vector<std::string> ids;
        for (const auto& r : ds.records)
            if (r.split == split) ids.push_back(r.id);
        std::sort(ids.begin(), ids.end());  // plan depends only on the id set

        std::size_t present_count;
        if (setting == Setting::A && split != Split::train) {
            present_count = 0;  // completely missing at test time
        } else {
            present_count = static_cast<std::size_t>(
                std::llround(p * static_cast<double>(ids.size())));
        }

        Rng rng(Rng::mix(seed, 0x91a0 + si));
        rng.shuffle(ids);
        for (std::size_t i = 0; i < ids.size(); ++i)
            plan.victim_present[ids[i]] = i < present_count;
    }
    return plan;
}

// ---- batching ----

struct Batch {
    std::vector<std::size_t> indices;  // into dataset.records
    Matrix text;                       // N x d
    std::vector<Matrix> frames;
    std::vector<std::optional<std::vector<int>>> frame_masks;
    std::vector<double> labels;
    std::vector<Mode> modes;

    std::size_t size() const { return indices.size(); }
};

inline Mode sample_mode(const SampleRecord& r, const MissingnessPlan& plan) {
    const bool victim_present = plan.present(r.id);
    const bool frames_gone = r.present_frames() == 0;
    bool text_ok = true;
    bool visual_ok = !frames_gone;
    if (plan.victim == Victim::text)
        text_ok = victim_present;
    else
        visual_ok = visual_ok && victim_present;
    if (!text_ok && !visual_ok)
        throw data_error("sample " + r.id + " has both modalities absent");
    if (!visual_ok) return Mode::mv;
    if (!text_ok) return Mode::mt;
    return Mode::c;
}

inline Batch make_batch(const EmbeddingDataset& ds, const MissingnessPlan& plan,
                        const std::vector<std::size_t>& indices) {
    Batch b;
    b.indices = indices;
    b.text = Matrix(indices.size(), ds.d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const SampleRecord& r = ds.records[indices[i]];
        b.text.set_row(i, r.text);
        b.frames.push_back(r.frames);
        b.frame_masks.push_back(r.frame_mask);
        b.labels.push_back(r.label);
        b.modes.push_back(sample_mode(r, plan));
    }
    return b;
}

/// Ordered batches over one split. The train split is shuffled by epoch_seed;
/// other splits keep stored order. The last batch may be smaller.
inline std::vector<Batch> iterate_batches(const EmbeddingDataset& ds, const MissingnessPlan& plan,
                                          std::size_t batch_size, std::uint64_t epoch_seed,
                                          Split split = Split::train) {
    if (batch_size < 2) throw config_error("batch_size must be >= 2 (contrastive loss)");
    std::vector<std::size_t> order = ds.split_indices(split);
    if (split == Split::train) {
        Rng rng(epoch_seed);
        rng.shuffle(order);
    }
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, order.size());
        std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
        batches.push_back(make_batch(ds, plan, idx));
    }
    return batches;
}

}  // namespace trml
