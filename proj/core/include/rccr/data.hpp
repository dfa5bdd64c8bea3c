#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rccr/model.hpp"
#include "rccr/seq.hpp"
#include "rccr/symmetry.hpp"

namespace rccr::data {

enum class TaskKind {
    InvariantClassification,  // label 1 iff a motif occurs in either orientation
    EquivariantProfile,       // per-bin motif occurrence counts, optionally stranded
    ScalarRegression,         // smooth symmetric function of total motif count
    StrandControl,            // orientation itself is the label; RC flips it
};

const char* to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

/// Generator settings. `noise` means: label flip probability for
/// classification kinds, additive Gaussian sigma for regression kinds.
struct TaskSpec {
    TaskKind kind = TaskKind::InvariantClassification;
    std::size_t length = 200;                   // L
    std::vector<std::string> motifs = {"TATAAA"};
    double noise = 0.0;
    std::size_t resolution = 128;               // r, bin width (profile kind)
    std::size_t channels = 2;                   // K in {1,2} (profile kind)
    std::uint64_t seed = 2025;
    std::size_t train_n = 5000, val_n = 500, test_n = 500;

    static TaskSpec defaults(TaskKind kind);
    std::size_t bins() const;  // L / r (profile kind requires r | L)
    void validate() const;
};

struct Dataset {
    TaskSpec spec;
    std::vector<SequenceRecord> train, val, test;

    std::size_t total() const { return train.size() + val.size() + test.size(); }
    const std::vector<SequenceRecord>& split(const std::string& name) const;
};

/// Task generators. All are deterministic in the seed, draw backgrounds
/// i.i.d. uniform over {A,C,G,T}, plant motifs by rejection so the scanned
/// ground truth is exact, and never place a sequence and its reverse
/// complement in different splits.
Dataset gen_rc_invariant_classification(const TaskSpec& spec);
Dataset gen_rc_equivariant_profile(const TaskSpec& spec);
Dataset gen_scalar_regression(const TaskSpec& spec);
Dataset gen_strand_control(const TaskSpec& spec);
Dataset generate(const TaskSpec& spec);  // dispatch on spec.kind

/// Split arbitrary records so that a sequence and its reverse complement can
/// never straddle splits: canonicalize to min(x, RC(x)), group, shuffle
/// groups with the seed, then fill splits greedily toward the fractions.
Dataset split_rc_safe(std::vector<SequenceRecord> records, double train_frac,
                      double val_frac, double test_frac, std::uint64_t seed);

/// True when no sequence in one split equals any sequence or reverse
/// complement in another split.
bool rc_safe(const Dataset& ds);

/// On-disk form: per-split FASTA + labels.tsv for sequence-level tasks, a
/// single TSV with JSON profile cells for binned tasks, plus manifest.json
/// (format, task spec, spec hash, counts). Fully deterministic bytes.
void export_dataset(const Dataset& ds, const std::string& dir);
Dataset import_dataset(const std::string& dir);

/// FNV-1a 64-bit hash, used to fingerprint the task spec in the manifest.
std::uint64_t fnv1a64(const std::string& text);
std::string spec_hash(const TaskSpec& spec);

// Task semantics consumed by the trainer and CLI.

/// The head shape this task trains.
model::HeadKind head_for(const TaskSpec& spec);

/// How predictions on RC(x) map back to forward coordinates: binned heads
/// reverse bins; the stranded profile (K=2) also swaps channels.
sym::AlignmentSpec alignment_for(const TaskSpec& spec);

/// Default consistency penalty: tempered softmax + symmetric KL for
/// classification, exp-rate Poisson KL for profiles, scaled MSE for scalars.
void default_penalty(const TaskSpec& spec, sym::LinkSpec& link, sym::DivergenceSpec& div);

/// The label for RC(x) given the label for x (used by RC augmentation and
/// closure tests): invariant kinds keep it, strand control flips it, profile
/// labels are re-aligned through the alignment operator.
Label rc_label(const TaskSpec& spec, const Label& label);

}  // namespace rccr::data
