#include "rccr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "rccr/errors.hpp"

namespace rccr::metrics {

namespace {

bool classification_head(const model::HeadKind& h) {
    return h.type == model::HeadType::SequenceClassification ||
           h.type == model::HeadType::BinClassification;
}

std::size_t argmax_lowest(const double* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k) {
        if (row[k] > row[best]) best = k;
    }
    return best;
}

double clamp_corr(double rho) { return std::clamp(rho, -1.0, 1.0); }

bool constant_values(std::span<const double> v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] != v[0]) return false;
    }
    return true;
}

// Gather (scores for class c, one-vs-rest labels) over dataset rows.
struct OvrProblem {
    std::vector<double> scores;
    std::vector<int> labels;
};

}  // namespace

void EvalBatch::validate() const {
    if (forward.empty() || forward.size() != rc_aligned.size() ||
        forward.size() != labels.size()) {
        throw ContractError("EvalBatch: forward/rc_aligned/labels sizes " +
                            std::to_string(forward.size()) + "/" +
                            std::to_string(rc_aligned.size()) + "/" +
                            std::to_string(labels.size()));
    }
    for (std::size_t i = 0; i < forward.size(); ++i) {
        if (!forward[i].same_shape(rc_aligned[i])) {
            throw DimensionError("EvalBatch: example " + std::to_string(i) +
                                 " shapes " + shape_str(forward[i].shape()) + " vs " +
                                 shape_str(rc_aligned[i].shape()));
        }
    }
}

double MetricReport::at(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ContractError("MetricReport: no value '" + key + "'");
    return it->second;
}

bool MetricReport::is_undefined(const std::string& key) const {
    return std::find(undefined.begin(), undefined.end(), key) != undefined.end();
}

std::string MetricReport::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : counts) j[k] = v;
    for (const auto& [k, v] : values) j[k] = v;
    for (const auto& k : undefined) j[k] = nullptr;
    return j.dump();
}

double sfr(const EvalBatch& batch) {
    batch.validate();
    if (!classification_head(batch.head)) {
        throw ContractError("sfr: requires a classification head, got " +
                            batch.head.describe());
    }
    const std::size_t c = batch.head.classes;
    std::size_t flips = 0, total = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor& f = batch.forward[i];
        const Tensor& r = batch.rc_aligned[i];
        if (f.size() % c != 0) {
            throw DimensionError("sfr: output size " + std::to_string(f.size()) +
                                 " not divisible by " + std::to_string(c) + " classes");
        }
        const std::size_t rows = f.size() / c;
        for (std::size_t b = 0; b < rows; ++b) {
            ++total;
            if (argmax_lowest(f.data() + b * c, c) != argmax_lowest(r.data() + b * c, c)) {
                ++flips;
            }
        }
    }
    return static_cast<double>(flips) / static_cast<double>(total);
}

double rc_corr(const EvalBatch& batch, std::size_t* degenerate) {
    batch.validate();
    if (batch.forward[0].size() < 2) {
        throw ContractError(
            "rc_corr: per-example outputs have fewer than 2 entries; use rc_corr_pooled");
    }
    std::size_t degen = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        // Identical nonconstant outputs correlate at exactly 1; computing the
        // quotient would round through sqrt and miss exactness.
        if (batch.forward[i] == batch.rc_aligned[i]) {
            if (constant_values(batch.forward[i].values())) {
                ++degen;
            } else {
                sum += 1.0;
            }
            continue;
        }
        auto rho = pearson(batch.forward[i].values(), batch.rc_aligned[i].values());
        if (rho) {
            sum += clamp_corr(*rho);
        } else {
            ++degen;  // contributes 0
        }
    }
    if (degenerate) *degenerate = degen;
    return sum / static_cast<double>(batch.size());
}

double rc_corr_pooled(const EvalBatch& batch) {
    batch.validate();
    std::vector<double> f, r;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        f.insert(f.end(), batch.forward[i].data(),
                 batch.forward[i].data() + batch.forward[i].size());
        r.insert(r.end(), batch.rc_aligned[i].data(),
                 batch.rc_aligned[i].data() + batch.rc_aligned[i].size());
    }
    if (f.size() < 2) {
        throw ContractError("rc_corr_pooled: need at least 2 pooled entries");
    }
    if (f == r) return constant_values(f) ? 0.0 : 1.0;
    auto rho = pearson(f, r);
    return rho ? clamp_corr(*rho) : 0.0;
}

double rc_mse(const EvalBatch& batch) {
    batch.validate();
    if (classification_head(batch.head)) {
        throw ContractError("rc_mse: requires a regression head, got " +
                            batch.head.describe());
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor& f = batch.forward[i];
        const Tensor& r = batch.rc_aligned[i];
        for (std::size_t j = 0; j < f.size(); ++j) {
            const double d = f[j] - r[j];
            sum += d * d;
        }
        n += f.size();
    }
    return sum / static_cast<double>(n);
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ContractError("pearson: need two equal-length series of size >= 2");
    }
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ContractError("spearman: need two equal-length series of size >= 2");
    }
    std::vector<double> ra = average_ranks(a);
    std::vector<double> rb = average_ranks(b);
    return pearson(ra, rb);
}

std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw ContractError("auroc: need equal-length nonempty scores/labels");
    }
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ContractError("auroc: labels must be 0/1");
        pos += static_cast<std::size_t>(y);
    }
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) return std::nullopt;
    std::vector<double> ranks = average_ranks(scores);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) rank_sum += ranks[i];
    }
    const double p = static_cast<double>(pos);
    const double u = rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(neg));
}

std::optional<double> auprc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw ContractError("auprc: need equal-length nonempty scores/labels");
    }
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ContractError("auprc: labels must be 0/1");
        pos += static_cast<std::size_t>(y);
    }
    if (pos == 0) return std::nullopt;
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&scores](std::size_t i, std::size_t j) {
        return scores[i] > scores[j];
    });
    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[idx[k]] == 1) {
                ++tp;
            } else {
                ++fp;
            }
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    return ap;
}

std::optional<double> mcc(std::span<const int> truth, std::span<const int> predicted,
                          std::size_t num_classes) {
    if (truth.size() != predicted.size() || truth.empty()) {
        throw ContractError("mcc: need equal-length nonempty label series");
    }
    std::vector<std::size_t> cm(num_classes * num_classes, 0);
    std::vector<std::size_t> label_count(num_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes ||
            static_cast<std::size_t>(p) >= num_classes) {
            throw ContractError("mcc: class index out of range");
        }
        cm[static_cast<std::size_t>(t) * num_classes + static_cast<std::size_t>(p)] += 1;
        label_count[static_cast<std::size_t>(t)] += 1;
    }
    std::size_t classes_present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        classes_present += label_count[c] > 0 ? 1 : 0;
    }
    if (classes_present < 2) return std::nullopt;

    // Gorodkin's multi-class generalization from the confusion matrix.
    const double n = static_cast<double>(truth.size());
    double trace = 0.0, tp_sum = 0.0, pp_sum = 0.0, tt_sum = 0.0;
    std::vector<double> row(num_classes, 0.0), col(num_classes, 0.0);
    for (std::size_t t = 0; t < num_classes; ++t) {
        for (std::size_t p = 0; p < num_classes; ++p) {
            const double v = static_cast<double>(cm[t * num_classes + p]);
            row[t] += v;
            col[p] += v;
            if (t == p) trace += v;
        }
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        tp_sum += row[c] * col[c];
        tt_sum += row[c] * row[c];
        pp_sum += col[c] * col[c];
    }
    const double numer = trace * n - tp_sum;
    const double denom = std::sqrt((n * n - tt_sum) * (n * n - pp_sum));
    if (denom == 0.0) return 0.0;
    return numer / denom;
}

double accuracy(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size() || truth.empty()) {
        throw ContractError("accuracy: need equal-length nonempty label series");
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        hit += truth[i] == predicted[i] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double ece(const std::vector<std::vector<double>>& probs, std::span<const int> labels,
           std::size_t bins) {
    if (probs.size() != labels.size() || probs.empty()) {
        throw ContractError("ece: need equal-length nonempty probs/labels");
    }
    if (bins == 0) throw ConfigError("ece: bins must be positive");
    std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& p = probs[i];
        if (p.empty()) throw ContractError("ece: empty probability row");
        std::size_t best = argmax_lowest(p.data(), p.size());
        const double conf = p[best];
        std::size_t b = std::min(bins - 1,
                                 static_cast<std::size_t>(conf * static_cast<double>(bins)));
        conf_sum[b] += conf;
        acc_sum[b] += (static_cast<std::size_t>(labels[i]) == best) ? 1.0 : 0.0;
        count[b] += 1;
    }
    double e = 0.0;
    const double n = static_cast<double>(probs.size());
    for (std::size_t b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        const double c = static_cast<double>(count[b]);
        e += std::abs(acc_sum[b] / c - conf_sum[b] / c) * (c / n);
    }
    return e;
}

double rmse(std::span<const double> truth, std::span<const double> predicted) {
    if (truth.size() != predicted.size() || truth.empty()) {
        throw ContractError("rmse: need equal-length nonempty series");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = truth[i] - predicted[i];
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(truth.size()));
}

std::optional<double> r_squared(std::span<const double> truth,
                                std::span<const double> predicted) {
    if (truth.size() != predicted.size() || truth.empty()) {
        throw ContractError("r_squared: need equal-length nonempty series");
    }
    double mean = 0.0;
    for (double t : truth) mean += t;
    mean /= static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - predicted[i]) * (truth[i] - predicted[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0.0) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
}

namespace {

MetricReport classification_report(const EvalBatch& batch) {
    const std::size_t c = batch.head.classes;
    // Flatten (example, bin) rows into one classification problem.
    std::vector<int> truth, predicted;
    std::vector<std::vector<double>> probs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor& f = batch.forward[i];
        const std::size_t rows = f.size() / c;
        std::vector<int> row_labels;
        if (batch.head.type == model::HeadType::SequenceClassification) {
            row_labels = {label_class(batch.labels[i])};
        } else {
            const Tensor& prof = label_profile(batch.labels[i]);
            if (prof.size() != rows) {
                throw ContractError("task_metrics: bin label count " +
                                    std::to_string(prof.size()) + " vs " +
                                    std::to_string(rows) + " bins");
            }
            for (std::size_t b = 0; b < rows; ++b) {
                row_labels.push_back(static_cast<int>(prof[b]));
            }
        }
        for (std::size_t b = 0; b < rows; ++b) {
            const double* p = f.data() + b * c;
            const int y = row_labels[b];
            if (y < 0 || static_cast<std::size_t>(y) >= c) {
                throw ContractError("task_metrics: label " + std::to_string(y) +
                                    " out of range [0," + std::to_string(c) + ")");
            }
            truth.push_back(y);
            predicted.push_back(static_cast<int>(argmax_lowest(p, c)));
            probs.emplace_back(p, p + c);
        }
    }

    MetricReport rep;
    rep.counts["n"] = truth.size();
    std::vector<std::size_t> class_count(c, 0);
    for (int y : truth) class_count[static_cast<std::size_t>(y)] += 1;
    for (std::size_t k = 0; k < c; ++k) {
        rep.counts["n_class_" + std::to_string(k)] = class_count[k];
    }

    rep.values["accuracy"] = accuracy(truth, predicted);
    rep.values["ece"] = ece(probs, truth);

    auto put = [&rep](const std::string& key, std::optional<double> v) {
        if (v) {
            rep.values[key] = *v;
        } else {
            rep.undefined.push_back(key);
        }
    };
    put("mcc", mcc(truth, predicted, c));

    // Binary: score the positive class. Multi-class: one-vs-rest macro over
    // classes for which the statistic is defined.
    auto macro = [&](const std::function<std::optional<double>(
                         std::span<const double>, std::span<const int>)>& stat)
        -> std::optional<double> {
        if (c == 2) {
            std::vector<double> s;
            std::vector<int> l;
            for (std::size_t i = 0; i < truth.size(); ++i) {
                s.push_back(probs[i][1]);
                l.push_back(truth[i] == 1 ? 1 : 0);
            }
            return stat(s, l);
        }
        double sum = 0.0;
        std::size_t defined = 0;
        for (std::size_t k = 0; k < c; ++k) {
            std::vector<double> s;
            std::vector<int> l;
            for (std::size_t i = 0; i < truth.size(); ++i) {
                s.push_back(probs[i][k]);
                l.push_back(truth[i] == static_cast<int>(k) ? 1 : 0);
            }
            if (auto v = stat(s, l)) {
                sum += *v;
                ++defined;
            }
        }
        if (defined == 0) return std::nullopt;
        return sum / static_cast<double>(defined);
    };
    put("auroc", macro(auroc));
    put("auprc", macro(auprc));
    return rep;
}

MetricReport regression_report(const EvalBatch& batch) {
    std::vector<double> truth, predicted;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor& f = batch.forward[i];
        if (batch.head.type == model::HeadType::SequenceRegression) {
            const auto& y = label_vector(batch.labels[i]);
            if (y.size() != f.size()) {
                throw ContractError("task_metrics: label dims " + std::to_string(y.size()) +
                                    " vs output dims " + std::to_string(f.size()));
            }
            truth.insert(truth.end(), y.begin(), y.end());
        } else {
            const Tensor& y = label_profile(batch.labels[i]);
            if (!y.same_shape(f)) {
                throw DimensionError("task_metrics: label profile " +
                                     shape_str(y.shape()) + " vs output " +
                                     shape_str(f.shape()));
            }
            truth.insert(truth.end(), y.data(), y.data() + y.size());
        }
        predicted.insert(predicted.end(), f.data(), f.data() + f.size());
    }

    MetricReport rep;
    rep.counts["n"] = truth.size();
    rep.values["rmse"] = rmse(truth, predicted);
    auto put = [&rep](const std::string& key, std::optional<double> v) {
        if (v) {
            rep.values[key] = *v;
        } else {
            rep.undefined.push_back(key);
        }
    };
    put("r2", r_squared(truth, predicted));
    if (truth.size() >= 2) {
        auto rho = pearson(truth, predicted);
        put("pearson", rho ? std::optional<double>(clamp_corr(*rho)) : std::nullopt);
        auto sr = spearman(truth, predicted);
        put("spearman", sr ? std::optional<double>(clamp_corr(*sr)) : std::nullopt);
    } else {
        rep.undefined.push_back("pearson");
        rep.undefined.push_back("spearman");
    }
    return rep;
}

}  // namespace

MetricReport task_metrics(const EvalBatch& batch) {
    batch.validate();
    if (classification_head(batch.head)) return classification_report(batch);
    return regression_report(batch);
}

}  // namespace rccr::metrics
