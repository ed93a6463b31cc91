#pragma once

// Standardized logistic regression: training, scoring, ranking metrics and the JSON bundle format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrm/error.hpp"
#include "rrm/rng.hpp"

namespace rrm::model {

inline constexpr const char* kBundleFormat = "rrm-model-v1";

using Row = std::vector<double>;

struct Metrics {
    double auroc = 0.0;
    double average_precision = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct TrainConfig {
    double lr = 0.05;
    int epochs = 30;
    std::size_t batch = 1024;
    double l2_lambda = 1e-4;
    std::uint64_t seed = 42;
};

struct BundleMeta {
    std::string layer;            // "baseline" | "segment"
    std::vector<int> train_years;
    int eval_year = 0;
    std::string trained_at;       // RFC 3339
    std::uint64_t seed = 42;
    std::string format_version = kBundleFormat;
    std::vector<double> epoch_losses;
    TrainConfig config;
    friend bool operator==(const BundleMeta& a, const BundleMeta& b) {
        return a.layer == b.layer && a.train_years == b.train_years && a.eval_year == b.eval_year &&
               a.trained_at == b.trained_at && a.seed == b.seed && a.format_version == b.format_version &&
               a.epoch_losses == b.epoch_losses && a.config.lr == b.config.lr && a.config.epochs == b.config.epochs &&
               a.config.batch == b.config.batch && a.config.l2_lambda == b.config.l2_lambda &&
               a.config.seed == b.config.seed;
    }
};

struct ModelBundle {
    std::vector<std::string> feature_names;
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> means;
    std::vector<double> stds;
    BundleMeta meta;
    Metrics metrics;
    friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// ---- standardization ------------------------------------------------------

struct Standardizer {
    std::vector<double> means;
    std::vector<double> stds;
};

// Per-column mean and population std; a constant column gets std 1.
inline Standardizer standardize_fit(const std::vector<Row>& rows) {
    if (rows.empty()) throw Error("INVALID_ARGUMENT", "standardize_fit needs at least one row");
    const std::size_t d = rows.front().size();
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) s.means[j] += r[j];
    for (auto& m : s.means) m /= static_cast<double>(rows.size());
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = r[j] - s.means[j];
            s.stds[j] += dv * dv;
        }
    for (auto& v : s.stds) {
        v = std::sqrt(v / static_cast<double>(rows.size()));
        if (!(v > 1e-12)) v = 1.0;
    }
    // A column whose values are all equal must standardize to exactly 0.
    for (std::size_t j = 0; j < d; ++j) {
        const double first = rows.front()[j];
        if (std::all_of(rows.begin(), rows.end(), [&](const Row& r) { return r[j] == first; })) {
            s.means[j] = first;
            s.stds[j] = 1.0;
        }
    }
    return s;
}

inline Row standardize_apply(std::span<const double> row, const std::vector<double>& means,
                             const std::vector<double>& stds) {
    Row out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - means[j]) / stds[j];
    return out;
}

// ---- loss -----------------------------------------------------------------

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad_w;
    double grad_b = 0.0;
};

// Mean log-loss over `batch` rows of X plus (l2/2)||w||^2, with its exact gradient.
inline LossGrad loss_and_gradient(const std::vector<double>& w, double b, const std::vector<Row>& X,
                                  const std::vector<int>& y, std::span<const std::size_t> batch, double l2) {
    LossGrad g;
    g.grad_w.assign(w.size(), 0.0);
    for (auto i : batch) {
        const auto& x = X[i];
        double z = b;
        for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * x[j];
        // log(1 + e^z) - y z, evaluated stably.
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        g.loss += softplus - y[i] * z;
        const double r = sigmoid(z) - y[i];
        for (std::size_t j = 0; j < w.size(); ++j) g.grad_w[j] += r * x[j];
        g.grad_b += r;
    }
    const double n = static_cast<double>(batch.size());
    g.loss /= n;
    g.grad_b /= n;
    double wn = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        g.grad_w[j] = g.grad_w[j] / n + l2 * w[j];
        wn += w[j] * w[j];
    }
    g.loss += 0.5 * l2 * wn;
    return g;
}

// Mini-batch gradient descent on standardized features. Deterministic for a given seed.
inline ModelBundle train_logistic(const std::vector<Row>& X_raw, const std::vector<int>& y,
                                  std::vector<std::string> feature_names, const TrainConfig& cfg) {
    if (X_raw.empty() || X_raw.size() != y.size()) throw Error("INVALID_ARGUMENT", "rows and labels differ in size");
    const std::size_t d = feature_names.size();
    for (const auto& r : X_raw)
        if (r.size() != d) throw Error("FEATURE_MISMATCH", "row length differs from feature list");
    const auto npos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    if (npos == 0 || npos == y.size()) throw Error("SINGLE_CLASS", "training data must contain both classes");
    if (cfg.batch == 0 || cfg.epochs < 0 || !(cfg.lr > 0.0))
        throw Error("INVALID_ARGUMENT", "bad training configuration");

    ModelBundle m;
    m.feature_names = std::move(feature_names);
    const auto st = standardize_fit(X_raw);
    m.means = st.means;
    m.stds = st.stds;
    m.weights.assign(d, 0.0);
    m.meta.seed = cfg.seed;
    m.meta.config = cfg;

    std::vector<bool> constant(d, false);
    for (std::size_t j = 0; j < d; ++j) {
        const double first = X_raw.front()[j];
        constant[j] = std::all_of(X_raw.begin(), X_raw.end(), [&](const Row& r) { return r[j] == first; });
    }

    std::vector<Row> X;
    X.reserve(X_raw.size());
    for (const auto& r : X_raw) X.push_back(standardize_apply(r, m.means, m.stds));

    std::vector<std::size_t> order(X.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            const auto g = loss_and_gradient(m.weights, m.bias, X, y,
                                             std::span<const std::size_t>(order.data() + start, end - start),
                                             cfg.l2_lambda);
            for (std::size_t j = 0; j < d; ++j)
                if (!constant[j]) m.weights[j] -= cfg.lr * g.grad_w[j];
            m.bias -= cfg.lr * g.grad_b;
        }
        std::vector<std::size_t> all(X.size());
        std::iota(all.begin(), all.end(), 0);
        m.meta.epoch_losses.push_back(loss_and_gradient(m.weights, m.bias, X, y, all, cfg.l2_lambda).loss);
    }
    return m;
}

inline double predict_proba(const ModelBundle& m, std::span<const double> row) {
    if (row.size() != m.feature_names.size()) {
        std::string names;
        for (const auto& n : m.feature_names) names += (names.empty() ? "" : ",") + n;
        throw Error("FEATURE_MISMATCH", "expected " + std::to_string(m.feature_names.size()) + " features [" + names +
                                            "], got " + std::to_string(row.size()));
    }
    double z = m.bias;
    for (std::size_t j = 0; j < row.size(); ++j) z += m.weights[j] * (row[j] - m.means[j]) / m.stds[j];
    return sigmoid(z);
}

// ---- metrics --------------------------------------------------------------

// Mann-Whitney AUROC with midranks for ties.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("INVALID_ARGUMENT", "scores and labels differ in size");
    const auto n = scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t npos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j); // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]] == 1) {
                pos_rank_sum += midrank;
                ++npos;
            }
        i = j;
    }
    const std::size_t nneg = n - npos;
    if (npos == 0 || nneg == 0) throw Error("SINGLE_CLASS", "AUROC needs both classes");
    const double u = pos_rank_sum - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

// Mean of precision at each positive, walking scores in descending order; equal scores keep
// input order.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("INVALID_ARGUMENT", "scores and labels differ in size");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < idx.size(); ++r)
        if (labels[idx[r]] == 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    if (hits == 0) throw Error("NO_POSITIVES", "average precision needs at least one positive");
    return sum / static_cast<double>(hits);
}

inline Metrics evaluate(const ModelBundle& m, const std::vector<Row>& X, const std::vector<int>& y) {
    std::vector<double> s;
    s.reserve(X.size());
    for (const auto& r : X) s.push_back(predict_proba(m, r));
    Metrics out;
    out.n_pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    out.n_neg = y.size() - out.n_pos;
    out.auroc = auroc(s, y);
    out.average_precision = average_precision(s, y);
    return out;
}

// ---- bundle serialization ---------------------------------------------------

inline nlohmann::json to_json(const Metrics& m) {
    return {{"auroc", m.auroc}, {"average_precision", m.average_precision}, {"n_pos", m.n_pos}, {"n_neg", m.n_neg}};
}

inline nlohmann::json to_json(const ModelBundle& m) {
    nlohmann::json meta = {{"layer", m.meta.layer},
                           {"train_years", m.meta.train_years},
                           {"eval_year", m.meta.eval_year},
                           {"trained_at", m.meta.trained_at},
                           {"seed", m.meta.seed},
                           {"format_version", m.meta.format_version},
                           {"epoch_losses", m.meta.epoch_losses},
                           {"config",
                            {{"lr", m.meta.config.lr},
                             {"epochs", m.meta.config.epochs},
                             {"batch", m.meta.config.batch},
                             {"l2_lambda", m.meta.config.l2_lambda},
                             {"seed", m.meta.config.seed}}}};
    return {{"format_version", m.meta.format_version},
            {"feature_names", m.feature_names},
            {"weights", m.weights},
            {"bias", m.bias},
            {"means", m.means},
            {"stds", m.stds},
            {"meta", meta},
            {"metrics", to_json(m.metrics)}};
}

inline std::string dump_bundle(const ModelBundle& m) { return to_json(m).dump(2) + "\n"; }

inline void save_bundle(const ModelBundle& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("FILE_UNWRITABLE", "cannot write " + path);
    out << dump_bundle(m);
    if (!out) throw Error("FILE_UNWRITABLE", "short write to " + path);
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("BUNDLE_CORRUPT", "bundle is not a JSON object");
    if (!j.contains("format_version") || !j["format_version"].is_string())
        throw Error("BUNDLE_CORRUPT", "missing format_version");
    if (j["format_version"] != kBundleFormat)
        throw Error("BUNDLE_VERSION", "unsupported format_version " + j["format_version"].get<std::string>());
    auto finite_vec = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_array()) throw Error("BUNDLE_CORRUPT", std::string("missing ") + key);
        std::vector<double> v;
        for (const auto& x : j[key]) {
            if (!x.is_number()) throw Error("BUNDLE_NONFINITE", std::string("non-finite value in ") + key);
            v.push_back(x.get<double>());
            if (!std::isfinite(v.back())) throw Error("BUNDLE_NONFINITE", std::string("non-finite value in ") + key);
        }
        return v;
    };
    ModelBundle m;
    try {
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.weights = finite_vec("weights");
        m.means = finite_vec("means");
        m.stds = finite_vec("stds");
        if (!j.at("bias").is_number() || !std::isfinite(j["bias"].get<double>()))
            throw Error("BUNDLE_NONFINITE", "non-finite bias");
        m.bias = j["bias"].get<double>();
        const auto& meta = j.at("meta");
        m.meta.layer = meta.at("layer").get<std::string>();
        m.meta.train_years = meta.at("train_years").get<std::vector<int>>();
        m.meta.eval_year = meta.at("eval_year").get<int>();
        m.meta.trained_at = meta.at("trained_at").get<std::string>();
        m.meta.seed = meta.at("seed").get<std::uint64_t>();
        m.meta.format_version = meta.at("format_version").get<std::string>();
        m.meta.epoch_losses = meta.at("epoch_losses").get<std::vector<double>>();
        const auto& c = meta.at("config");
        m.meta.config.lr = c.at("lr").get<double>();
        m.meta.config.epochs = c.at("epochs").get<int>();
        m.meta.config.batch = c.at("batch").get<std::size_t>();
        m.meta.config.l2_lambda = c.at("l2_lambda").get<double>();
        m.meta.config.seed = c.at("seed").get<std::uint64_t>();
        const auto& mt = j.at("metrics");
        m.metrics.auroc = mt.at("auroc").get<double>();
        m.metrics.average_precision = mt.at("average_precision").get<double>();
        m.metrics.n_pos = mt.at("n_pos").get<std::size_t>();
        m.metrics.n_neg = mt.at("n_neg").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("BUNDLE_CORRUPT", e.what());
    }
    const auto d = m.feature_names.size();
    if (m.weights.size() != d || m.means.size() != d || m.stds.size() != d)
        throw Error("BUNDLE_LENGTH", "weight/standardization lengths do not match feature count");
    for (double s : m.stds)
        if (!(s > 0.0)) throw Error("BUNDLE_CORRUPT", "standard deviations must be positive");
    return m;
}

inline ModelBundle parse_bundle(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error("BUNDLE_CORRUPT", e.what());
    }
    return bundle_from_json(j);
}

inline ModelBundle load_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("BUNDLE_MISSING", "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_bundle(ss.str());
}

} // namespace rrm::model
