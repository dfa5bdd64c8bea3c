#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rccr/model.hpp"
#include "rccr/seq.hpp"
#include "rccr/tensor.hpp"

namespace rccr::metrics {

/// Predictions for one evaluation pass, in label space: probabilities for
/// classification heads (softmax already applied), exp-rates for bin
/// regression, raw outputs otherwise. `rc_aligned` holds
/// align(forward(RC(x))).
struct EvalBatch {
    model::HeadKind head;
    std::vector<Tensor> forward;
    std::vector<Tensor> rc_aligned;
    std::vector<Label> labels;

    std::size_t size() const { return forward.size(); }
    void validate() const;
};

/// Flat bag of named metric values. Metrics whose value is mathematically
/// undefined on the given batch are listed by name instead of being faked.
struct MetricReport {
    std::map<std::string, double> values;
    std::map<std::string, std::size_t> counts;
    std::vector<std::string> undefined;

    bool has(const std::string& key) const { return values.count(key) > 0; }
    double at(const std::string& key) const;
    bool is_undefined(const std::string& key) const;
    /// One flat JSON object; undefined metrics serialize as null.
    std::string to_json() const;
};

/// Fraction of examples (and bins, for binned heads) whose argmax class
/// differs between orientations. Ties resolve to the lowest class index on
/// both sides, so exact ties never count as flips.
double sfr(const EvalBatch& batch);

/// Mean over examples of the Pearson correlation between the flattened
/// forward and aligned-RC outputs. Examples where either side is constant
/// contribute 0 and are counted in *degenerate.
double rc_corr(const EvalBatch& batch, std::size_t* degenerate = nullptr);

/// Single Pearson correlation over all outputs pooled across the dataset;
/// the usable variant when per-example outputs are scalars.
double rc_corr_pooled(const EvalBatch& batch);

/// Mean squared difference between forward and aligned-RC outputs
/// (regression heads only).
double rc_mse(const EvalBatch& batch);

/// Standard task metrics: accuracy/MCC/AUROC/AUPRC/ECE for classification,
/// RMSE/R^2/Pearson/Spearman for regression.
MetricReport task_metrics(const EvalBatch& batch);

// Low-level helpers, exposed for reuse and direct testing. Each returns
// nullopt where the quantity is undefined (constant input, missing class).
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);
std::vector<double> average_ranks(std::span<const double> v);
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);
std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels);
std::optional<double> auprc(std::span<const double> scores, std::span<const int> labels);
std::optional<double> mcc(std::span<const int> truth, std::span<const int> predicted,
                          std::size_t num_classes);
double accuracy(std::span<const int> truth, std::span<const int> predicted);
/// Expected calibration error over `bins` equal-width confidence bins on the
/// max-probability prediction.
double ece(const std::vector<std::vector<double>>& probs, std::span<const int> labels,
           std::size_t bins = 15);
double rmse(std::span<const double> truth, std::span<const double> predicted);
std::optional<double> r_squared(std::span<const double> truth,
                                std::span<const double> predicted);

}  // namespace rccr::metrics
