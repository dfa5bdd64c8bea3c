#include "rccr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json_util.hpp"
#include "rccr/errors.hpp"
#include "rccr/rng.hpp"

namespace rccr::train {

const char* to_string(Mode m) {
    switch (m) {
        case Mode::Vanilla: return "vanilla";
        case Mode::Rccr: return "rccr";
        case Mode::RcAug: return "rc-aug";
    }
    return "?";
}

Mode mode_from_string(const std::string& s) {
    if (s == "vanilla") return Mode::Vanilla;
    if (s == "rccr") return Mode::Rccr;
    if (s == "rc-aug") return Mode::RcAug;
    throw ConfigError("unknown training mode '" + s + "' (vanilla|rccr|rc-aug)");
}

void TrainConfig::validate() const {
    if (lambda < 0.0 || !std::isfinite(lambda)) {
        throw ConfigError("train: lambda must be finite and >= 0");
    }
    if (mode != Mode::Rccr && lambda != 0.0) {
        throw ConfigError("train: lambda is only used in rccr mode (mode is '" +
                          std::string(to_string(mode)) + "')");
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    if (batch == 0) throw ConfigError("train: batch size must be positive");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0) {
        throw ConfigError("train: warmup fraction must lie in [0, 1)");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("train: Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("train: Adam epsilon must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight decay must be >= 0");
    if (augment_prob < 0.0 || augment_prob > 1.0) {
        throw ConfigError("train: augment probability must lie in [0, 1]");
    }
}

double lr_at(std::size_t step, std::size_t total_steps, double peak, double warmup_frac) {
    if (total_steps == 0) throw ConfigError("lr_at: total_steps must be positive");
    if (step > total_steps) throw ContractError("lr_at: step exceeds total_steps");
    const auto warmup = static_cast<std::size_t>(
        std::ceil(warmup_frac * static_cast<double>(total_steps)));
    if (step <= warmup) {
        if (warmup == 0) return peak;
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    return peak * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

void adamw_step(TrainState& state,
                std::vector<std::pair<std::string, ad::Value>>& params, double lr,
                const TrainConfig& cfg) {
    if (state.m.empty()) {
        for (const auto& [name, p] : params) {
            state.m.emplace_back(p.tensor().shape());
            state.v.emplace_back(p.tensor().shape());
        }
    }
    if (state.m.size() != params.size()) {
        throw ContractError("adamw: optimizer state does not match the parameter list");
    }
    // Validate every gradient before touching any parameter so a failed step
    // leaves the model unchanged.
    for (const auto& [name, p] : params) {
        const auto& node = *p.node();
        if (node.grad_present && !node.grad.all_finite()) {
            throw NumericError("adamw: non-finite gradient for parameter '" + name + "'");
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& node = *params[pi].second.node();
        Tensor& w = node.value;
        Tensor& m = state.m[pi];
        Tensor& v = state.v[pi];
        const bool has_grad = node.grad_present;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = has_grad ? node.grad[i] : 0.0;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                          cfg.weight_decay * w[i]);
        }
    }
    state.lr = lr;
}

std::string EpochLog::to_json_line() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["task_loss"] = task_loss;
    j["penalty"] = penalty;
    j["lr"] = lr;
    j["wall_ms"] = wall_ms;
    return j.dump();
}

namespace {

const char* record_name(const SequenceRecord& rec) {
    return rec.id.empty() ? "<unnamed>" : rec.id.c_str();
}

std::vector<int> class_labels(const std::vector<const SequenceRecord*>& batch) {
    std::vector<int> labels;
    labels.reserve(batch.size());
    for (const auto* rec : batch) {
        if (!has_label(rec->label)) {
            throw ContractError(std::string("train: unlabeled record '") +
                                record_name(*rec) + "'");
        }
        labels.push_back(label_class(rec->label));
    }
    return labels;
}

Tensor stack_vector_labels(const std::vector<const SequenceRecord*>& batch,
                           std::size_t dims) {
    Tensor y({batch.size(), dims});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& vec = label_vector(batch[i]->label);
        if (vec.size() != dims) {
            throw DimensionError(std::string("train: record '") + record_name(*batch[i]) +
                                 "' has a " + std::to_string(vec.size()) +
                                 "-dim target, head expects " + std::to_string(dims));
        }
        for (std::size_t d = 0; d < dims; ++d) y.at({i, d}) = vec[d];
    }
    return y;
}

Tensor stack_profile_labels(const std::vector<const SequenceRecord*>& batch,
                            std::size_t bins, std::size_t channels) {
    Tensor y({batch.size(), bins, channels});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor& prof = label_profile(batch[i]->label);
        if (prof.rank() != 2 || prof.extent(0) != bins || prof.extent(1) != channels) {
            throw DimensionError(std::string("train: record '") + record_name(*batch[i]) +
                                 "' has profile " + shape_str(prof.shape()) +
                                 ", head expects (" + std::to_string(bins) + ", " +
                                 std::to_string(channels) + ")");
        }
        std::copy(prof.data(), prof.data() + prof.size(),
                  y.data() + i * bins * channels);
    }
    return y;
}

std::vector<int> bin_class_labels(const std::vector<const SequenceRecord*>& batch,
                                  std::size_t bins) {
    std::vector<int> labels;
    labels.reserve(batch.size() * bins);
    for (const auto* rec : batch) {
        const Tensor& t = label_profile(rec->label);
        if (t.rank() != 1 || t.extent(0) != bins) {
            throw DimensionError(std::string("train: record '") + record_name(*rec) +
                                 "' needs a rank-1 tensor of " + std::to_string(bins) +
                                 " per-bin class indices, got " + shape_str(t.shape()));
        }
        for (std::size_t b = 0; b < bins; ++b) {
            labels.push_back(static_cast<int>(t[b]));
        }
    }
    return labels;
}

}  // namespace

ad::Value task_loss(const ad::Value& out, const std::vector<const SequenceRecord*>& batch,
                    const model::HeadKind& head) {
    if (batch.empty()) throw ContractError("task_loss: empty batch");
    switch (head.type) {
        case model::HeadType::SequenceClassification:
            return ad::cross_entropy(out, class_labels(batch));
        case model::HeadType::SequenceRegression: {
            ad::Value y = ad::constant(stack_vector_labels(batch, head.dims));
            ad::Value d = out - y;
            return ad::mean_all(d * d);
        }
        case model::HeadType::BinRegression: {
            // Poisson NLL with rate exp(out), dropping the label-only term:
            // mean of exp(out) - y * out.
            ad::Value y = ad::constant(stack_profile_labels(batch, head.bins, head.channels));
            return ad::mean_all(ad::exp(out) - y * out);
        }
        case model::HeadType::BinClassification: {
            ad::Value flat = ad::reshape(out, {batch.size() * head.bins, head.classes});
            return ad::cross_entropy(flat, bin_class_labels(batch, head.bins));
        }
    }
    throw ContractError("task_loss: unknown head type");
}

namespace {

void check_head_matches(const model::Predictor& model, const data::TaskSpec& task,
                        const char* who) {
    const model::HeadKind expect = data::head_for(task);
    if (model.head.describe() != expect.describe()) {
        throw ConfigError(std::string(who) + ": model head " + model.head.describe() +
                          " does not match the dataset task (expected " +
                          expect.describe() + ")");
    }
    if (model.input_length != task.length) {
        throw ConfigError(std::string(who) + ": model input length " +
                          std::to_string(model.input_length) +
                          " does not match the dataset length " +
                          std::to_string(task.length));
    }
}

}  // namespace

TrainResult train(model::Predictor& model, const data::Dataset& dataset,
                  const TrainConfig& cfg, const PenaltySpec& penalty,
                  std::ostream* log_stream) {
    cfg.validate();
    dataset.spec.validate();
    check_head_matches(model, dataset.spec, "train");
    const auto& records = dataset.train;
    if (records.empty()) throw ConfigError("train: empty training split");
    const sym::AlignmentSpec align_spec = data::alignment_for(dataset.spec);
    align_spec.validate(model.head.out_channels());

    const std::size_t n = records.size();
    const std::size_t batches_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = cfg.epochs * batches_per_epoch;
    const bool rc_aug_active =
        (cfg.mode == Mode::RcAug || (cfg.mode == Mode::Rccr && cfg.combined_rc_aug)) &&
        cfg.augment_prob > 0.0;
    const bool penalty_active = cfg.mode == Mode::Rccr && cfg.lambda != 0.0;

    TrainResult result;
    TrainState& state = result.state;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t(0));
        Rng shuffle_rng(Rng::derive(cfg.seed, 1000 + epoch));
        shuffle_rng.shuffle(order);
        // Separate stream for augmentation coins so the example order and the
        // coin sequence cannot alias; untouched unless augmentation is live.
        Rng aug_rng(Rng::derive(cfg.seed, 2000 + epoch));

        double task_sum = 0.0, pen_sum = 0.0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::size_t lo = b * cfg.batch;
            const std::size_t hi = std::min(n, lo + cfg.batch);
            std::vector<SequenceRecord> augmented;
            augmented.reserve(hi - lo);  // stable addresses for the pointer batch
            std::vector<const SequenceRecord*> batch_recs;
            batch_recs.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                const SequenceRecord& rec = records[order[i]];
                if (rc_aug_active && aug_rng.uniform() < cfg.augment_prob) {
                    SequenceRecord copy = reverse_complement(rec);
                    copy.label = data::rc_label(dataset.spec, rec.label);
                    augmented.push_back(std::move(copy));
                    batch_recs.push_back(&augmented.back());
                } else {
                    batch_recs.push_back(&rec);
                }
            }
            ad::Value out = model.forward(one_hot_batch(batch_recs));
            ad::Value task = task_loss(out, batch_recs, model.head);
            ad::Value loss = task;
            double pen_val = 0.0;
            if (penalty_active) {
                std::vector<SequenceRecord> rc_records;
                rc_records.reserve(batch_recs.size());
                std::vector<const SequenceRecord*> rc_recs;
                rc_recs.reserve(batch_recs.size());
                for (const auto* rec : batch_recs) {
                    rc_records.push_back(reverse_complement(*rec));
                    rc_recs.push_back(&rc_records.back());
                }
                ad::Value out_rc = model.forward(one_hot_batch(rc_recs));
                ad::Value aligned = sym::align(out_rc, align_spec);
                ad::Value pen = sym::consistency_penalty(out, aligned, penalty.link,
                                                         penalty.divergence,
                                                         penalty.mask_ptr());
                loss = task + ad::scale(pen, cfg.lambda);
                pen_val = pen.tensor().item();
            }
            model.zero_grad();
            ad::backward(loss);
            const double lr = lr_at(state.step, total_steps, cfg.lr, cfg.warmup_frac);
            adamw_step(state, model.named_params, lr, cfg);
            task_sum += task.tensor().item();
            pen_sum += pen_val;
        }

        EpochLog log;
        log.epoch = epoch;
        log.task_loss = task_sum / static_cast<double>(batches_per_epoch);
        log.penalty = pen_sum / static_cast<double>(batches_per_epoch);
        log.lr = state.lr;
        log.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        result.log.push_back(log);
        if (log_stream) *log_stream << log.to_json_line() << '\n';
    }
    return result;
}

EvalResult evaluate(const model::Predictor& model,
                    const std::vector<SequenceRecord>& records,
                    const data::TaskSpec& task, const PenaltySpec& penalty, bool tta) {
    task.validate();
    check_head_matches(model, task, "evaluate");
    if (records.empty()) throw ConfigError("evaluate: empty evaluation split");
    const sym::AlignmentSpec align_spec = data::alignment_for(task);
    align_spec.validate(model.head.out_channels());
    const bool classification = model.head.type == model::HeadType::SequenceClassification ||
                                model.head.type == model::HeadType::BinClassification;
    const sym::LinkSpec prob_link{sym::LinkKind::Softmax, 1.0};

    EvalResult res;
    res.batch.head = model.head;
    const std::size_t n = records.size();
    res.batch.forward.reserve(n);
    res.batch.rc_aligned.reserve(n);
    res.batch.labels.reserve(n);

    double div_weighted = 0.0;
    const std::size_t chunk = 64;
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        std::vector<const SequenceRecord*> fwd_recs;
        std::vector<SequenceRecord> rc_records;
        std::vector<const SequenceRecord*> rc_recs;
        fwd_recs.reserve(hi - lo);
        rc_records.reserve(hi - lo);
        rc_recs.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            fwd_recs.push_back(&records[i]);
            rc_records.push_back(reverse_complement(records[i]));
            rc_recs.push_back(&rc_records.back());
        }
        const Tensor out = model.forward(one_hot_batch(fwd_recs)).tensor();
        const Tensor aligned =
            sym::align(model.forward(one_hot_batch(rc_recs)).tensor(), align_spec);
        if (!tta) {
            // Raw-output consistency, the same quantity the rccr penalty
            // trains; mean over examples recombines exactly across chunks.
            const double d = sym::consistency_penalty(ad::constant(out),
                                                      ad::constant(aligned), penalty.link,
                                                      penalty.divergence,
                                                      penalty.mask_ptr())
                                 .tensor()
                                 .item();
            div_weighted += d * static_cast<double>(hi - lo);
        }

        const std::size_t row = out.size() / (hi - lo);
        std::vector<std::size_t> tail(out.shape().begin() + 1, out.shape().end());
        for (std::size_t i = lo; i < hi; ++i) {
            Tensor f(tail), a(tail);
            std::copy_n(out.data() + (i - lo) * row, row, f.data());
            std::copy_n(aligned.data() + (i - lo) * row, row, a.data());
            if (classification) {
                f = sym::apply_link(f, prob_link);
                a = sym::apply_link(a, prob_link);
            } else if (model.head.type == model::HeadType::BinRegression) {
                // Bin heads predict log-rates; score in count space.
                for (std::size_t k = 0; k < f.size(); ++k) {
                    f[k] = std::exp(f[k]);
                    a[k] = std::exp(a[k]);
                }
            }
            if (tta) {
                const Tensor s = sym::symmetrize(f, a);
                f = s;
                a = s;
            }
            res.batch.forward.push_back(std::move(f));
            res.batch.rc_aligned.push_back(std::move(a));
            res.batch.labels.push_back(records[i].label);
        }
    }
    res.batch.validate();

    res.report = metrics::task_metrics(res.batch);
    if (classification) {
        res.report.values["sfr"] = metrics::sfr(res.batch);
    } else {
        res.report.values["rc_mse"] = metrics::rc_mse(res.batch);
    }
    const std::size_t per_example = res.batch.forward.front().size();
    if (per_example >= 2) {
        std::size_t degenerate = 0;
        res.report.values["rc_corr"] = metrics::rc_corr(res.batch, &degenerate);
        if (degenerate > 0) res.report.counts["rc_corr_degenerate"] = degenerate;
    }
    res.report.values["rc_corr_pooled"] = metrics::rc_corr_pooled(res.batch);
    if (tta) {
        res.report.values["consistency_divergence"] = 0.0;
        res.report.counts["tta_exact_by_construction"] = 1;
    } else {
        res.report.values["consistency_divergence"] =
            div_weighted / static_cast<double>(n);
    }
    return res;
}

}  // namespace rccr::train
