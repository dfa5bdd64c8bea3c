#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rccr/errors.hpp"
#include "rccr/experiment.hpp"

namespace {

std::vector<double> parse_lambda_list(const std::vector<std::string>& tokens) {
    std::vector<double> out;
    for (const auto& token : tokens) {
        std::size_t start = 0;
        while (start <= token.size()) {
            const std::size_t comma = token.find(',', start);
            const std::string piece =
                token.substr(start, comma == std::string::npos ? comma : comma - start);
            if (!piece.empty()) {
                try {
                    std::size_t used = 0;
                    const double v = std::stod(piece, &used);
                    if (used != piece.size()) throw std::invalid_argument(piece);
                    out.push_back(v);
                } catch (const std::exception&) {
                    throw rccr::ConfigError("sweep: bad lambda value '" + piece + "'");
                }
            }
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"Reverse-complement consistency regularization toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    bool tta = false;
    std::vector<std::string> lambda_tokens;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
        cmd->add_option("--out", out_dir, "output directory (overrides the config)");
        cmd->add_option("--seed", seed, "seed override for generator and trainer");
    };

    CLI::App* gendata = app.add_subcommand("gendata", "generate the configured dataset");
    add_common(gendata);
    CLI::App* train = app.add_subcommand("train", "train on the generated dataset");
    add_common(train);
    CLI::App* eval = app.add_subcommand("eval", "evaluate the trained checkpoint");
    add_common(eval);
    eval->add_flag("--tta", tta, "average both orientations at inference");
    CLI::App* sweep = app.add_subcommand("sweep", "train and evaluate one model per lambda");
    add_common(sweep);
    sweep->add_option("--lambda", lambda_tokens,
                      "comma-separated consistency weights, e.g. 0,0.1,0.3");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    rccr::exp::ExperimentConfig cfg = rccr::exp::ExperimentConfig::from_file(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) {
        cfg.task.seed = *seed;
        cfg.trainer.seed = *seed;
    }
    cfg.validate();

    if (gendata->parsed()) {
        rccr::exp::cmd_gendata(cfg);
        std::cout << "dataset written to " << cfg.dataset_dir() << "\n";
    } else if (train->parsed()) {
        rccr::exp::cmd_train(cfg, std::cout);
    } else if (eval->parsed()) {
        rccr::exp::cmd_eval(cfg, tta, std::cout);
    } else if (sweep->parsed()) {
        if (lambda_tokens.empty()) {
            throw rccr::ConfigError("sweep: --lambda is required");
        }
        rccr::exp::cmd_sweep(cfg, parse_lambda_list(lambda_tokens), std::cout);
        std::cout << "sweep table written to " << cfg.sweep_csv_path() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const rccr::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const rccr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
