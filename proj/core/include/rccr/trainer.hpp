#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rccr/autodiff.hpp"
#include "rccr/data.hpp"
#include "rccr/metrics.hpp"
#include "rccr/model.hpp"
#include "rccr/symmetry.hpp"
#include "rccr/tensor.hpp"

namespace rccr::train {

enum class Mode { Vanilla, Rccr, RcAug };

const char* to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct TrainConfig {
    Mode mode = Mode::Vanilla;
    double lambda = 0.0;  // consistency weight, rccr mode only
    double lr = 1e-3;
    std::size_t epochs = 3;
    std::size_t batch = 32;
    double warmup_frac = 0.06;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    std::uint64_t seed = 2025;
    bool eval_tta = false;
    double augment_prob = 0.5;     // rc-aug replacement probability
    bool combined_rc_aug = false;  // rccr mode: also RC-augment the inputs

    void validate() const;
};

/// Optimizer state. Moment tensors are created lazily to match the
/// parameter list on the first step.
struct TrainState {
    std::size_t step = 0;
    double lr = 0.0;
    std::vector<Tensor> m, v;
};

/// Linear ramp 0 -> peak over ceil(warmup_frac * total) steps, then linear
/// decay peak -> 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double peak, double warmup_frac);

/// One decoupled-weight-decay Adam update with bias correction, reading the
/// gradients accumulated on the parameter nodes (absent gradient = zero).
/// A non-finite gradient aborts the step naming the parameter.
void adamw_step(TrainState& state,
                std::vector<std::pair<std::string, ad::Value>>& params, double lr,
                const TrainConfig& cfg);

/// Consistency penalty configuration: link into comparison space, divergence
/// on top, optional binary channel mask applied after the link.
struct PenaltySpec {
    sym::LinkSpec link;
    sym::DivergenceSpec divergence;
    std::optional<Tensor> mask;

    const Tensor* mask_ptr() const { return mask ? &*mask : nullptr; }
};

struct EpochLog {
    std::size_t epoch = 0;
    double task_loss = 0.0;  // mean over batches
    double penalty = 0.0;    // mean unweighted divergence (0 outside rccr)
    double lr = 0.0;         // learning rate at the last step of the epoch
    double wall_ms = 0.0;

    std::string to_json_line() const;
};

struct TrainResult {
    std::vector<EpochLog> log;
    TrainState state;
};

/// Mean task loss of raw head outputs against the batch labels: softmax
/// cross-entropy for classification heads, mean squared error for sequence
/// regression, Poisson negative log-likelihood with exp-rates for bin
/// regression (mean of exp(out) - y * out).
ad::Value task_loss(const ad::Value& out, const std::vector<const SequenceRecord*>& batch,
                    const model::HeadKind& head);

/// Run the configured regime over dataset.train. In rccr mode each batch is
/// also forwarded on its reverse complement and the aligned pair feeds the
/// lambda-weighted penalty; with lambda = 0 the extra forward is skipped and
/// the trajectory is bitwise equal to vanilla. In rc-aug mode each example
/// is independently replaced by its reverse complement (label re-aligned).
/// When log_stream is given, one JSON line per epoch is appended.
TrainResult train(model::Predictor& model, const data::Dataset& dataset,
                  const TrainConfig& cfg, const PenaltySpec& penalty,
                  std::ostream* log_stream = nullptr);

struct EvalResult {
    metrics::EvalBatch batch;
    metrics::MetricReport report;
};

/// Forward every record in both orientations, align the RC branch, and
/// score. Classification outputs are stored as probabilities and bin
/// regression outputs as exp-rates, so stored predictions live in label
/// space; the consistency divergence is still taken on raw outputs. With tta,
/// both branches are replaced by their symmetrized average (probability
/// space for classification) before any metric, making the RC metrics exact
/// by construction; the report is annotated accordingly. Without tta the
/// report carries the mean consistency divergence of the raw outputs.
EvalResult evaluate(const model::Predictor& model,
                    const std::vector<SequenceRecord>& records,
                    const data::TaskSpec& task, const PenaltySpec& penalty, bool tta);

}  // namespace rccr::train
