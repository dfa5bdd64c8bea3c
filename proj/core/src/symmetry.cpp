#include "rccr/symmetry.hpp"

#include <cmath>

#include "rccr/errors.hpp"

namespace rccr::sym {

namespace {

constexpr double kRowSumTol = 1e-9;
constexpr double kLogFloor = 1e-12;

void check_self_inverse(const std::vector<std::size_t>& perm) {
    const std::size_t k = perm.size();
    std::vector<bool> seen(k, false);
    for (std::size_t p : perm) {
        if (p >= k || seen[p]) throw ContractError("alignment: channel_perm is not a permutation");
        seen[p] = true;
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (perm[perm[i]] != i) {
            throw ContractError("alignment: channel_perm is not self-inverse at index " +
                                std::to_string(i));
        }
    }
}

bool is_identity(const std::vector<std::size_t>& perm) {
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] != i) return false;
    }
    return true;
}

void check_probability_rows(const char* op, const Tensor& t) {
    if (t.rank() < 1) throw DimensionError(std::string(op) + ": rank-0 input");
    const std::size_t c = t.shape().back();
    const std::size_t rows = t.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) sum += t[r * c + k];
        if (std::abs(sum - 1.0) > kRowSumTol) {
            throw ContractError(std::string(op) + ": row " + std::to_string(r) +
                                " sums to " + std::to_string(sum) + ", not a probability");
        }
    }
}

// Per-element contribution summed over channels, then averaged over every
// remaining axis (examples, and bins when present).
ad::Value reduce_contribution(const ad::Value& contrib) {
    ad::Value per_row = ad::reduce_sum(contrib, contrib.tensor().rank() - 1);
    if (per_row.tensor().rank() == 0) return per_row;
    return ad::mean_all(per_row);
}

}  // namespace

void AlignmentSpec::validate(std::size_t channels) const {
    if (!channel_perm.empty()) {
        if (channel_perm.size() != channels) {
            throw ContractError("alignment: channel_perm size " +
                                std::to_string(channel_perm.size()) + " vs " +
                                std::to_string(channels) + " channels");
        }
        check_self_inverse(channel_perm);
    }
    if (mask) {
        if (mask->rank() != 1 || mask->extent(0) != channels) {
            throw ContractError("alignment: mask length " + shape_str(mask->shape()) +
                                " vs " + std::to_string(channels) + " channels");
        }
        for (std::size_t i = 0; i < mask->size(); ++i) {
            if ((*mask)[i] != 0.0 && (*mask)[i] != 1.0) {
                throw ContractError("alignment: mask entries must be 0 or 1");
            }
        }
    }
}

const char* to_string(HeadLayout k) {
    return k == HeadLayout::Sequence ? "sequence" : "binned";
}

const char* to_string(LinkKind k) {
    switch (k) {
        case LinkKind::Identity: return "identity";
        case LinkKind::Softmax: return "softmax";
        case LinkKind::Log1p: return "log1p";
    }
    return "?";
}

const char* to_string(DivergenceKind k) {
    switch (k) {
        case DivergenceKind::SymmetricKL: return "skl";
        case DivergenceKind::JensenShannon: return "js";
        case DivergenceKind::ScaledMse: return "scaled_mse";
        case DivergenceKind::Huber: return "huber";
        case DivergenceKind::SymmetricPoissonKL: return "poisson_kl";
    }
    return "?";
}

HeadLayout head_layout_from_string(const std::string& s) {
    if (s == "sequence") return HeadLayout::Sequence;
    if (s == "binned") return HeadLayout::Binned;
    throw ConfigError("unknown head layout '" + s + "' (sequence|binned)");
}

LinkKind link_kind_from_string(const std::string& s) {
    if (s == "identity") return LinkKind::Identity;
    if (s == "softmax") return LinkKind::Softmax;
    if (s == "log1p") return LinkKind::Log1p;
    throw ConfigError("unknown link '" + s + "' (identity|softmax|log1p)");
}

DivergenceKind divergence_kind_from_string(const std::string& s) {
    if (s == "skl") return DivergenceKind::SymmetricKL;
    if (s == "js") return DivergenceKind::JensenShannon;
    if (s == "scaled_mse") return DivergenceKind::ScaledMse;
    if (s == "huber") return DivergenceKind::Huber;
    if (s == "poisson_kl") return DivergenceKind::SymmetricPoissonKL;
    throw ConfigError("unknown divergence '" + s + "' (skl|js|scaled_mse|huber|poisson_kl)");
}

ad::Value align(const ad::Value& y, const AlignmentSpec& spec) {
    const Tensor& t = y.tensor();
    if (spec.layout == HeadLayout::Sequence) {
        spec.validate(t.rank() >= 1 ? t.shape().back() : 0);
        return y;
    }
    if (t.rank() < 2) {
        throw DimensionError("align: binned head expects (..., B, K), got " +
                             shape_str(t.shape()));
    }
    spec.validate(t.shape().back());
    ad::Value out = ad::reverse_axis(y, t.rank() - 2);
    if (!spec.channel_perm.empty() && !is_identity(spec.channel_perm)) {
        out = ad::permute_last_axis(out, spec.channel_perm);
    }
    return out;
}

Tensor align(const Tensor& y, const AlignmentSpec& spec) {
    return align(ad::constant(y), spec).tensor();
}

ad::Value apply_link(const ad::Value& y, const LinkSpec& link) {
    switch (link.kind) {
        case LinkKind::Identity:
            return y;
        case LinkKind::Softmax:
            if (!(link.temperature > 0.0)) {
                throw ConfigError("link: softmax temperature must be positive");
            }
            return ad::softmax(y, link.temperature);
        case LinkKind::Log1p:
            for (std::size_t i = 0; i < y.tensor().size(); ++i) {
                if (y.tensor()[i] < 0.0) {
                    throw NumericError("link: log1p applied to negative value " +
                                       std::to_string(y.tensor()[i]));
                }
            }
            return ad::log1p(y);
    }
    throw ContractError("link: unknown kind");
}

Tensor apply_link(const Tensor& y, const LinkSpec& link) {
    return apply_link(ad::constant(y), link).tensor();
}

ad::Value divergence(const ad::Value& u, const ad::Value& v, const DivergenceSpec& spec,
                     bool check_probability) {
    if (!u.tensor().same_shape(v.tensor())) {
        throw DimensionError("divergence: shape mismatch " + shape_str(u.tensor().shape()) +
                             " vs " + shape_str(v.tensor().shape()));
    }
    switch (spec.kind) {
        case DivergenceKind::SymmetricKL: {
            if (check_probability) {
                check_probability_rows("divergence(skl)", u.tensor());
                check_probability_rows("divergence(skl)", v.tensor());
            }
            ad::Value contrib = (u - v) * (ad::log_clamped(u) - ad::log_clamped(v));
            return reduce_contribution(contrib);
        }
        case DivergenceKind::JensenShannon: {
            if (check_probability) {
                check_probability_rows("divergence(js)", u.tensor());
                check_probability_rows("divergence(js)", v.tensor());
            }
            ad::Value m = ad::scale(u + v, 0.5);
            ad::Value lm = ad::log_clamped(m);
            ad::Value contrib = ad::scale(u * (ad::log_clamped(u) - lm), 0.5) +
                                ad::scale(v * (ad::log_clamped(v) - lm), 0.5);
            return reduce_contribution(contrib);
        }
        case DivergenceKind::ScaledMse: {
            if (!(spec.sigma > 0.0)) throw ConfigError("divergence: sigma must be positive");
            ad::Value d = u - v;
            return ad::scale(reduce_contribution(d * d),
                             1.0 / (2.0 * spec.sigma * spec.sigma));
        }
        case DivergenceKind::Huber: {
            if (!(spec.delta > 0.0)) throw ConfigError("divergence: delta must be positive");
            return reduce_contribution(ad::huber(u - v, spec.delta));
        }
        case DivergenceKind::SymmetricPoissonKL: {
            for (std::size_t i = 0; i < u.tensor().size(); ++i) {
                if (u.tensor()[i] < 0.0 || v.tensor()[i] < 0.0) {
                    throw ContractError("divergence(poisson_kl): rates must be nonnegative");
                }
            }
            ad::Value contrib =
                (u - v) * (ad::log_clamped(u) - ad::log_clamped(v));
            return reduce_contribution(contrib);
        }
    }
    throw ContractError("divergence: unknown kind");
}

double divergence_value(const Tensor& u, const Tensor& v, const DivergenceSpec& spec,
                        bool check_probability) {
    return divergence(ad::constant(u), ad::constant(v), spec, check_probability)
        .tensor()
        .item();
}

ad::Value consistency_penalty(const ad::Value& out_fwd, const ad::Value& out_rc_aligned,
                              const LinkSpec& link, const DivergenceSpec& div,
                              const Tensor* mask) {
    if (!out_fwd.tensor().same_shape(out_rc_aligned.tensor())) {
        throw DimensionError("consistency penalty: shape mismatch " +
                             shape_str(out_fwd.tensor().shape()) + " vs " +
                             shape_str(out_rc_aligned.tensor().shape()));
    }
    ad::Value u, v;
    if (div.kind == DivergenceKind::SymmetricPoissonKL) {
        if (link.kind != LinkKind::Identity) {
            throw ContractError(
                "consistency penalty: poisson_kl produces rates via exp of raw outputs; "
                "use the identity link");
        }
        u = ad::exp(out_fwd);
        v = ad::exp(out_rc_aligned);
    } else {
        u = apply_link(out_fwd, link);
        v = apply_link(out_rc_aligned, link);
    }
    bool masked = false;
    if (mask) {
        const std::size_t c = u.tensor().shape().back();
        if (mask->rank() != 1 || mask->extent(0) != c) {
            throw ContractError("consistency penalty: mask length " +
                                shape_str(mask->shape()) + " vs " + std::to_string(c) +
                                " channels");
        }
        for (std::size_t i = 0; i < mask->size(); ++i) {
            if ((*mask)[i] != 0.0 && (*mask)[i] != 1.0) {
                throw ContractError("consistency penalty: mask entries must be 0 or 1");
            }
            if ((*mask)[i] == 0.0) masked = true;
        }
        u = ad::mask_last_axis(u, *mask);
        v = ad::mask_last_axis(v, *mask);
    }
    return divergence(u, v, div, /*check_probability=*/!masked);
}

ad::Value rccr_loss(const ad::Value& task_loss, const ad::Value& out_fwd,
                    const ad::Value& out_rc_aligned, const LinkSpec& link,
                    const DivergenceSpec& div, double lambda, const Tensor* mask) {
    if (lambda < 0.0) throw ConfigError("rccr_loss: lambda must be nonnegative");
    if (task_loss.tensor().size() != 1) {
        throw ContractError("rccr_loss: task_loss must be scalar");
    }
    if (lambda == 0.0) return task_loss;
    ad::Value penalty = consistency_penalty(out_fwd, out_rc_aligned, link, div, mask);
    return task_loss + ad::scale(penalty, lambda);
}

ad::Value symmetrize(const ad::Value& f_x, const ad::Value& f_rc_aligned) {
    return ad::scale(f_x + f_rc_aligned, 0.5);
}

Tensor symmetrize(const Tensor& f_x, const Tensor& f_rc_aligned) {
    if (!f_x.same_shape(f_rc_aligned)) {
        throw DimensionError("symmetrize: shape mismatch " + shape_str(f_x.shape()) +
                             " vs " + shape_str(f_rc_aligned.shape()));
    }
    Tensor out = f_x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.5 * (out[i] + f_rc_aligned[i]);
    }
    return out;
}

FisherCheck fisher_quadratic_check(const Tensor& p, const Tensor& delta,
                                   double temperature) {
    if (p.rank() != 1 || !p.same_shape(delta)) {
        throw DimensionError("fisher check: p " + shape_str(p.shape()) + " vs delta " +
                             shape_str(delta.shape()));
    }
    if (!(temperature > 0.0)) throw ConfigError("fisher check: temperature must be positive");
    check_probability_rows("fisher check", p);

    const std::size_t k = p.size();
    FisherCheck out;
    for (std::size_t i = 0; i < k; ++i) {
        if (p[i] <= kLogFloor || p[i] >= 1.0 - kLogFloor) {
            out.skipped = true;
            out.note = "degenerate distribution: coordinate " + std::to_string(i) +
                       " at " + std::to_string(p[i]);
            out.ratio = std::numeric_limits<double>::quiet_NaN();
            return out;
        }
    }

    double mean = 0.0;
    for (std::size_t i = 0; i < k; ++i) mean += delta[i];
    mean /= static_cast<double>(k);

    // d_perp' F(p) d_perp with F(p) = Diag(p) - p p'.
    double ed = 0.0, ed2 = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double d = delta[i] - mean;
        norm2 += d * d;
        ed += p[i] * d;
        ed2 += p[i] * d * d;
    }
    const double quad = (ed2 - ed * ed) / (temperature * temperature);
    if (norm2 == 0.0 || quad <= 0.0) {
        out.note = "pure shift perturbation";
        out.ratio = 1.0;
        return out;
    }

    // Exact SKL between softmax_T(z) and softmax_T(z + delta) at z = T log p.
    std::vector<double> q(k);
    double zmax = -std::numeric_limits<double>::infinity();
    std::vector<double> zp(k);
    for (std::size_t i = 0; i < k; ++i) {
        zp[i] = std::log(p[i]) + delta[i] / temperature;
        zmax = std::max(zmax, zp[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        q[i] = std::exp(zp[i] - zmax);
        sum += q[i];
    }
    double skl = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        q[i] /= sum;
        skl += (p[i] - q[i]) * (std::log(p[i]) - std::log(q[i]));
    }
    out.ratio = skl / quad;
    return out;
}

}  // namespace rccr::sym
