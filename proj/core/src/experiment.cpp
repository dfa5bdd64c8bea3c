#include "rccr/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json_util.hpp"
#include "rccr/errors.hpp"

namespace fs = std::filesystem;

namespace rccr::exp {

namespace {

using detail::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& prefix) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
                return it.key() == k;
            }) == allowed.end()) {
            throw ConfigError("config: unknown field '" + prefix + it.key() + "'");
        }
    }
}

void merge_train(train::TrainConfig& cfg, const json& j) {
    check_keys(j,
               {"mode", "lambda", "lr", "epochs", "batch", "warmup_frac", "beta1",
                "beta2", "adam_eps", "weight_decay", "seed", "eval_tta", "augment_prob",
                "combined_rc_aug"},
               "train.");
    if (j.contains("mode")) cfg.mode = train::mode_from_string(j.at("mode"));
    cfg.lambda = j.value("lambda", cfg.lambda);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.warmup_frac = j.value("warmup_frac", cfg.warmup_frac);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.eval_tta = j.value("eval_tta", cfg.eval_tta);
    cfg.augment_prob = j.value("augment_prob", cfg.augment_prob);
    cfg.combined_rc_aug = j.value("combined_rc_aug", cfg.combined_rc_aug);
}

void merge_penalty(train::PenaltySpec& p, const json& j) {
    check_keys(j, {"link", "temperature", "divergence", "sigma", "delta", "mask"},
               "penalty.");
    if (j.contains("link")) p.link.kind = sym::link_kind_from_string(j.at("link"));
    p.link.temperature = j.value("temperature", p.link.temperature);
    if (j.contains("divergence")) {
        p.divergence.kind = sym::divergence_kind_from_string(j.at("divergence"));
    }
    p.divergence.sigma = j.value("sigma", p.divergence.sigma);
    p.divergence.delta = j.value("delta", p.divergence.delta);
    if (j.contains("mask")) {
        const auto vals = j.at("mask").get<std::vector<double>>();
        Tensor mask({vals.size()});
        std::copy(vals.begin(), vals.end(), mask.data());
        p.mask = std::move(mask);
    }
}

json penalty_to_json(const train::PenaltySpec& p) {
    json j = {{"link", sym::to_string(p.link.kind)},
              {"temperature", p.link.temperature},
              {"divergence", sym::to_string(p.divergence.kind)},
              {"sigma", p.divergence.sigma},
              {"delta", p.divergence.delta}};
    if (p.mask) {
        j["mask"] = std::vector<double>(p.mask->data(), p.mask->data() + p.mask->size());
    }
    return j;
}

json train_to_json(const train::TrainConfig& cfg) {
    return {{"mode", train::to_string(cfg.mode)},
            {"lambda", cfg.lambda},
            {"lr", cfg.lr},
            {"epochs", cfg.epochs},
            {"batch", cfg.batch},
            {"warmup_frac", cfg.warmup_frac},
            {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},
            {"adam_eps", cfg.adam_eps},
            {"weight_decay", cfg.weight_decay},
            {"seed", cfg.seed},
            {"eval_tta", cfg.eval_tta},
            {"augment_prob", cfg.augment_prob},
            {"combined_rc_aug", cfg.combined_rc_aug}};
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw ContractError("write to '" + path.string() + "' failed");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string lambda_tag(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults_for(data::TaskKind kind) {
    ExperimentConfig cfg;
    cfg.task = data::TaskSpec::defaults(kind);
    data::default_penalty(cfg.task, cfg.penalty.link, cfg.penalty.divergence);
    return cfg;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    try {
        check_keys(j, {"task", "model", "train", "penalty", "out"}, "");
        data::TaskKind kind = data::TaskKind::InvariantClassification;
        if (j.contains("task")) {
            check_keys(j.at("task"),
                       {"kind", "length", "motifs", "noise", "resolution", "channels",
                        "seed", "train_n", "val_n", "test_n"},
                       "task.");
            if (!j.at("task").contains("kind")) {
                throw ConfigError("config: task.kind is required");
            }
            kind = data::task_kind_from_string(j.at("task").at("kind"));
        }
        ExperimentConfig cfg = defaults_for(kind);
        if (j.contains("task")) cfg.task = detail::task_from_json(j.at("task"));
        if (j.contains("model")) {
            check_keys(j.at("model"), {"conv", "hidden", "activation", "seed"}, "model.");
            cfg.backbone = detail::backbone_from_json(j.at("model"));
        }
        if (j.contains("train")) merge_train(cfg.trainer, j.at("train"));
        if (j.contains("penalty")) merge_penalty(cfg.penalty, j.at("penalty"));
        cfg.out_dir = j.value("out", cfg.out_dir);
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

std::string ExperimentConfig::to_json_text() const {
    nlohmann::ordered_json j;
    j["task"] = detail::task_to_json(task);
    j["model"] = detail::backbone_to_json(backbone);
    j["train"] = train_to_json(trainer);
    j["penalty"] = penalty_to_json(penalty);
    j["out"] = out_dir;
    return j.dump(2) + "\n";
}

void ExperimentConfig::validate() const {
    task.validate();
    backbone.validate();
    trainer.validate();
    if (out_dir.empty()) throw ConfigError("config: out directory must be nonempty");
    const model::HeadKind head = data::head_for(task);
    head.validate();
    data::alignment_for(task).validate(head.out_channels());
    if (!(penalty.link.temperature > 0.0)) {
        throw ConfigError("config: penalty.temperature must be positive");
    }
    if (!(penalty.divergence.sigma > 0.0)) {
        throw ConfigError("config: penalty.sigma must be positive");
    }
    if (!(penalty.divergence.delta > 0.0)) {
        throw ConfigError("config: penalty.delta must be positive");
    }
    if (penalty.divergence.kind == sym::DivergenceKind::SymmetricPoissonKL &&
        penalty.link.kind != sym::LinkKind::Identity) {
        throw ConfigError(
            "config: the symmetric Poisson divergence requires the identity link");
    }
    if (penalty.mask) {
        const Tensor& m = *penalty.mask;
        if (m.rank() != 1 || m.extent(0) != head.out_channels()) {
            throw ConfigError("config: penalty.mask needs " +
                              std::to_string(head.out_channels()) + " entries, got " +
                              shape_str(m.shape()));
        }
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m[i] != 0.0 && m[i] != 1.0) {
                throw ConfigError("config: penalty.mask entries must be 0 or 1");
            }
        }
    }
}

std::string ExperimentConfig::dataset_dir() const { return out_dir + "/dataset"; }
std::string ExperimentConfig::checkpoint_path() const { return out_dir + "/model.ckpt"; }
std::string ExperimentConfig::log_path() const { return out_dir + "/train.log.jsonl"; }
std::string ExperimentConfig::eval_path(bool tta) const {
    return out_dir + (tta ? "/eval.tta.json" : "/eval.json");
}
std::string ExperimentConfig::sweep_dir() const { return out_dir + "/sweep"; }
std::string ExperimentConfig::sweep_csv_path() const { return sweep_dir() + "/sweep.csv"; }

void cmd_gendata(const ExperimentConfig& cfg) {
    cfg.validate();
    data::export_dataset(data::generate(cfg.task), cfg.dataset_dir());
}

namespace {

data::Dataset load_dataset_checked(const ExperimentConfig& cfg) {
    data::Dataset ds = data::import_dataset(cfg.dataset_dir());
    if (data::spec_hash(ds.spec) != data::spec_hash(cfg.task)) {
        throw ConfigError("dataset under '" + cfg.dataset_dir() +
                          "' was generated from a different task spec; rerun gendata");
    }
    return ds;
}

json report_json(const metrics::MetricReport& report) {
    return json::parse(report.to_json());
}

metrics::MetricReport run_eval(const ExperimentConfig& cfg, const model::Predictor& p,
                               const data::Dataset& ds, bool tta) {
    train::EvalResult res = train::evaluate(p, ds.test, cfg.task, cfg.penalty, tta);
    nlohmann::ordered_json out;
    out["tta"] = tta;
    out["split"] = "test";
    out["metrics"] = report_json(res.report);
    write_text(cfg.eval_path(tta), out.dump(2) + "\n");
    return res.report;
}

}  // namespace

train::TrainResult cmd_train(const ExperimentConfig& cfg, std::ostream& out) {
    cfg.validate();
    data::Dataset ds = load_dataset_checked(cfg);
    model::Predictor p =
        model::build_predictor(cfg.backbone, data::head_for(cfg.task), cfg.task.length);
    fs::create_directories(cfg.out_dir);
    std::ofstream log(cfg.log_path(), std::ios::binary);
    if (!log) throw ContractError("cannot open '" + cfg.log_path() + "' for writing");
    train::TrainResult result = train::train(p, ds, cfg.trainer, cfg.penalty, &log);
    model::save_checkpoint(p, cfg.checkpoint_path());
    out << result.log.back().to_json_line() << "\n";
    return result;
}

metrics::MetricReport cmd_eval(const ExperimentConfig& cfg, bool tta, std::ostream& out) {
    cfg.validate();
    data::Dataset ds = load_dataset_checked(cfg);
    if (!fs::exists(cfg.checkpoint_path())) {
        throw ConfigError("missing checkpoint '" + cfg.checkpoint_path() +
                          "' (run train first)");
    }
    model::Predictor p = model::load_checkpoint(cfg.checkpoint_path());
    metrics::MetricReport report = run_eval(cfg, p, ds, tta);
    out << report.to_json() << "\n";
    return report;
}

const std::vector<std::string>& sweep_columns() {
    static const std::vector<std::string> cols = {
        "lambda", "accuracy", "mcc",     "auroc",   "auprc",
        "ece",    "rmse",     "r2",      "pearson", "spearman",
        "sfr",    "rc_corr",  "rc_corr_pooled",     "rc_mse",
        "consistency_divergence"};
    return cols;
}

std::optional<double> SweepTable::cell(std::size_t row, const std::string& column) const {
    const auto it = std::find(columns.begin(), columns.end(), column);
    if (it == columns.end()) throw ContractError("sweep: no column '" + column + "'");
    return rows.at(row).at(static_cast<std::size_t>(it - columns.begin()));
}

std::string sweep_csv(const SweepTable& table) {
    std::ostringstream out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        out << (c ? "," : "") << table.columns[c];
    }
    out << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.columns.size()) {
            throw ContractError("sweep: row width does not match the schema");
        }
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << ',';
            if (row[c]) out << format_double(*row[c]);
        }
        out << '\n';
    }
    return out.str();
}

SweepTable parse_sweep_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("sweep csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    auto split = [](const std::string& s) {
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = s.find(',', start);
            fields.push_back(s.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return fields;
    };

    SweepTable table;
    table.columns = split(line);
    if (table.columns != sweep_columns()) {
        throw ParseError("sweep csv: header does not match the documented schema");
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line);
        if (fields.size() != table.columns.size()) {
            throw ParseError("sweep csv:" + std::to_string(lineno) + ": expected " +
                             std::to_string(table.columns.size()) + " fields, got " +
                             std::to_string(fields.size()));
        }
        std::vector<std::optional<double>> row;
        row.reserve(fields.size());
        for (const auto& f : fields) {
            if (f.empty()) {
                row.push_back(std::nullopt);
                continue;
            }
            try {
                std::size_t used = 0;
                const double v = std::stod(f, &used);
                if (used != f.size()) throw std::invalid_argument(f);
                row.push_back(v);
            } catch (const std::exception&) {
                throw ParseError("sweep csv:" + std::to_string(lineno) +
                                 ": bad number '" + f + "'");
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

SweepTable cmd_sweep(const ExperimentConfig& cfg, const std::vector<double>& lambdas,
                     std::ostream& out) {
    cfg.validate();
    if (lambdas.empty()) throw ConfigError("sweep: lambda list must be nonempty");
    std::vector<double> unique;
    for (double v : lambdas) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ConfigError("sweep: lambda values must be finite and >= 0");
        }
        if (std::find(unique.begin(), unique.end(), v) != unique.end()) {
            out << "warning: duplicate lambda " << lambda_tag(v) << " ignored\n";
            continue;
        }
        unique.push_back(v);
    }

    data::Dataset ds = load_dataset_checked(cfg);
    SweepTable table;
    table.columns = sweep_columns();
    fs::create_directories(cfg.sweep_dir());

    auto flush = [&] { write_text(cfg.sweep_csv_path(), sweep_csv(table)); };
    for (double lambda : unique) {
        ExperimentConfig sub = cfg;
        sub.trainer.mode = train::Mode::Rccr;
        sub.trainer.lambda = lambda;
        sub.out_dir = cfg.sweep_dir() + "/lambda-" + lambda_tag(lambda);
        try {
            fs::create_directories(sub.out_dir);
            model::Predictor p = model::build_predictor(
                sub.backbone, data::head_for(sub.task), sub.task.length);
            std::ofstream log(sub.log_path(), std::ios::binary);
            if (!log) {
                throw ContractError("cannot open '" + sub.log_path() + "' for writing");
            }
            train::train(p, ds, sub.trainer, sub.penalty, &log);
            model::save_checkpoint(p, sub.checkpoint_path());
            // The divergence column must reflect raw-output consistency, so
            // sweep rows always evaluate without TTA.
            const metrics::MetricReport report = run_eval(sub, p, ds, false);
            std::vector<std::optional<double>> row;
            row.reserve(table.columns.size());
            for (const auto& col : table.columns) {
                if (col == "lambda") {
                    row.push_back(lambda);
                } else if (report.has(col)) {
                    row.push_back(report.at(col));
                } else {
                    row.push_back(std::nullopt);
                }
            }
            table.rows.push_back(std::move(row));
            out << "lambda " << lambda_tag(lambda) << " done\n";
        } catch (...) {
            flush();  // keep the rows that finished
            throw;
        }
    }
    flush();
    return table;
}

}  // namespace rccr::exp
