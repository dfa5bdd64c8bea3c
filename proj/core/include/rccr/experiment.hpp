#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rccr/data.hpp"
#include "rccr/metrics.hpp"
#include "rccr/model.hpp"
#include "rccr/trainer.hpp"

namespace rccr::exp {

/// One experiment = task + model + training regime + penalty + output
/// directory, loadable from a JSON file. Unset sections fall back to the
/// task-appropriate defaults; unknown fields are configuration errors.
struct ExperimentConfig {
    data::TaskSpec task;
    model::BackboneConfig backbone;
    train::TrainConfig trainer;
    train::PenaltySpec penalty;
    std::string out_dir = "out";

    static ExperimentConfig defaults_for(data::TaskKind kind);
    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
    std::string to_json_text() const;

    /// Re-validates every section plus the cross-field constraints
    /// (alignment vs head channels, penalty mask size, link/divergence
    /// compatibility).
    void validate() const;

    std::string dataset_dir() const;
    std::string checkpoint_path() const;
    std::string log_path() const;
    std::string eval_path(bool tta) const;
    std::string sweep_dir() const;
    std::string sweep_csv_path() const;
};

/// Generate the configured dataset and write it under dataset_dir().
/// Deterministic: the same config always produces byte-identical files.
void cmd_gendata(const ExperimentConfig& cfg);

/// Train on the previously generated dataset (its manifest must carry the
/// same task hash), write checkpoint + JSON-lines training log, and print
/// the final epoch line to `out`.
train::TrainResult cmd_train(const ExperimentConfig& cfg, std::ostream& out);

/// Evaluate the saved checkpoint on the test split, write eval_path(tta),
/// and print the report JSON to `out`.
metrics::MetricReport cmd_eval(const ExperimentConfig& cfg, bool tta, std::ostream& out);

/// Fixed-schema sweep table; every run writes the same columns so files
/// from different tasks line up. Cells without a defined value stay empty.
struct SweepTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::optional<double>>> rows;

    std::optional<double> cell(std::size_t row, const std::string& column) const;
};

const std::vector<std::string>& sweep_columns();

/// Train + evaluate one rccr model per lambda (shared seed, shared dataset),
/// each in its own subdirectory, then write sweep_csv_path(). Duplicate
/// lambdas are dropped with a warning on `out`. If a run throws, the rows
/// finished so far are still written before the error propagates.
SweepTable cmd_sweep(const ExperimentConfig& cfg, const std::vector<double>& lambdas,
                     std::ostream& out);

std::string sweep_csv(const SweepTable& table);
SweepTable parse_sweep_csv(const std::string& text);

}  // namespace rccr::exp
