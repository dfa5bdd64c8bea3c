#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rccr/autodiff.hpp"
#include "rccr/tensor.hpp"

namespace rccr::sym {

enum class HeadLayout { Sequence, Binned };

/// How to map a prediction on the reverse complement back onto forward
/// coordinates: sequence-level heads are left alone, binned heads get their
/// bin axis reversed and channels permuted by a self-inverse permutation.
struct AlignmentSpec {
    HeadLayout layout = HeadLayout::Sequence;
    std::vector<std::size_t> channel_perm;  // empty means identity
    std::optional<Tensor> mask;             // binary, one entry per channel

    /// Check permutation/mask against the channel count of the head.
    void validate(std::size_t channels) const;
};

enum class LinkKind { Identity, Softmax, Log1p };

struct LinkSpec {
    LinkKind kind = LinkKind::Identity;
    double temperature = 2.0;  // used by Softmax only
};

enum class DivergenceKind { SymmetricKL, JensenShannon, ScaledMse, Huber, SymmetricPoissonKL };

struct DivergenceSpec {
    DivergenceKind kind = DivergenceKind::SymmetricKL;
    double sigma = 1.0;  // ScaledMse scale
    double delta = 1.0;  // Huber threshold
};

const char* to_string(HeadLayout k);
const char* to_string(LinkKind k);
const char* to_string(DivergenceKind k);
HeadLayout head_layout_from_string(const std::string& s);
LinkKind link_kind_from_string(const std::string& s);
DivergenceKind divergence_kind_from_string(const std::string& s);

/// Apply the alignment operator. Binned inputs are (..., B, K); applying
/// twice returns the input.
ad::Value align(const ad::Value& y, const AlignmentSpec& spec);
Tensor align(const Tensor& y, const AlignmentSpec& spec);

/// Map raw outputs into the comparison space (identity, tempered softmax
/// over the last axis, or elementwise log1p on nonnegative values).
ad::Value apply_link(const ad::Value& y, const LinkSpec& link);
Tensor apply_link(const Tensor& y, const LinkSpec& link);

/// Symmetric divergence between two linked predictions of equal shape,
/// summed over the last (channel) axis and averaged over everything else,
/// so binned inputs are mean-reduced over bins and examples alike.
/// `check_probability` guards the row-sum contract for SKL/JS; it is
/// disabled internally when a channel mask has zeroed entries out.
ad::Value divergence(const ad::Value& u, const ad::Value& v, const DivergenceSpec& spec,
                     bool check_probability = true);
double divergence_value(const Tensor& u, const Tensor& v, const DivergenceSpec& spec,
                        bool check_probability = true);

/// Consistency penalty D(M·phi(out_fwd), M·phi(out_rc_aligned)).
/// For SymmetricPoissonKL the link must be identity; rates are exp of the
/// raw outputs so positivity is structural.
ad::Value consistency_penalty(const ad::Value& out_fwd, const ad::Value& out_rc_aligned,
                              const LinkSpec& link, const DivergenceSpec& div,
                              const Tensor* mask = nullptr);

/// Full objective: task_loss + lambda * consistency penalty. Gradient flows
/// through both orientation branches. lambda == 0 returns task_loss itself.
ad::Value rccr_loss(const ad::Value& task_loss, const ad::Value& out_fwd,
                    const ad::Value& out_rc_aligned, const LinkSpec& link,
                    const DivergenceSpec& div, double lambda,
                    const Tensor* mask = nullptr);

/// Pointwise average of the two orientation branches; a fixed point once
/// the pair already agrees.
ad::Value symmetrize(const ad::Value& f_x, const ad::Value& f_rc_aligned);
Tensor symmetrize(const Tensor& f_x, const Tensor& f_rc_aligned);

struct FisherCheck {
    double ratio = 1.0;
    bool skipped = false;
    std::string note;
};

/// Ratio of SKL(p(z), p(z+delta)) to its local quadratic model
/// (1/T^2) * d⊥' F(p) d⊥ with F(p) = Diag(p) - p p'. Tends to 1 as the
/// perturbation shrinks. Pure logit shifts give ratio 1 by convention;
/// distributions with a coordinate at 0 or 1 are skipped with a note.
FisherCheck fisher_quadratic_check(const Tensor& p, const Tensor& delta, double temperature);

}  // namespace rccr::sym
