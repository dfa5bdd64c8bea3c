// End-to-end checks of the command-line tool. Runs the real binary (path in
// argv[1]) through std::system and inspects exit codes, output, and files.
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int g_checks = 0;
int g_failures = 0;

void expect(bool ok, const std::string& what) {
    ++g_checks;
    if (!ok) {
        ++g_failures;
        std::cerr << "FAIL: " << what << "\n";
    }
}

std::string g_tool;

int run(const std::string& args) {
    const std::string cmd =
        g_tool + " " + args + " >tmp_cli_stdout.txt 2>tmp_cli_stderr.txt";
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status)) return -1;
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string out_text() { return slurp("tmp_cli_stdout.txt"); }
std::string err_text() { return slurp("tmp_cli_stderr.txt"); }

bool contains(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
}

const char* kConfig = R"({
  "task": {"kind": "rc-invariant-classification", "length": 60,
           "train_n": 80, "val_n": 20, "test_n": 20, "seed": 33},
  "model": {"conv": [{"channels": 8, "kernel": 5}], "hidden": 8},
  "train": {"epochs": 1},
  "out": "tmp_cli_run"
})";

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: " << argv[0] << " <path-to-cli-binary>\n";
        return 1;
    }
    g_tool = argv[1];
    for (const char* p : {"tmp_cli_run", "tmp_cli_seed", "tmp_cli_fresh"}) {
        fs::remove_all(p);
    }
    write_file("tmp_cli_cfg.json", kConfig);

    expect(run("") == 2, "no arguments exits 2");
    expect(run("--help") == 0, "--help exits 0");
    expect(contains(out_text(), "gendata"), "--help lists the subcommands");
    expect(run("gendata") == 2, "gendata without --config exits 2");

    expect(run("gendata --config tmp_cli_cfg.json") == 0, "gendata succeeds");
    expect(contains(out_text(), "dataset written to tmp_cli_run/dataset"),
           "gendata reports the dataset directory");
    expect(fs::exists("tmp_cli_run/dataset/manifest.json"), "gendata writes a manifest");
    const std::string manifest = slurp("tmp_cli_run/dataset/manifest.json");
    expect(run("gendata --config tmp_cli_cfg.json") == 0, "gendata reruns cleanly");
    expect(slurp("tmp_cli_run/dataset/manifest.json") == manifest,
           "regeneration is byte-identical");

    expect(run("gendata --config tmp_cli_cfg.json --seed 99 --out tmp_cli_seed") == 0,
           "gendata honors --seed and --out");
    expect(fs::exists("tmp_cli_seed/dataset/manifest.json"), "seed run writes elsewhere");
    expect(slurp("tmp_cli_seed/dataset/manifest.json") != manifest,
           "a different seed changes the dataset");

    write_file("tmp_cli_bad.json",
               R"({"task": {"kind": "rc-invariant-classification", "motif": "TATA"}})");
    expect(run("gendata --config tmp_cli_bad.json") == 2, "unknown config field exits 2");
    expect(contains(err_text(), "unknown field 'task.motif'"),
           "unknown config field is named");
    expect(run("gendata --config tmp_cli_nowhere.json") == 2, "missing config exits 2");
    expect(contains(err_text(), "config: cannot open"), "missing config is reported");

    expect(run("train --config tmp_cli_cfg.json --out tmp_cli_fresh") == 2,
           "train without a dataset exits 2");
    expect(contains(err_text(), "(run gendata first)"), "train points at gendata");
    expect(run("eval --config tmp_cli_cfg.json") == 2, "eval before train exits 2");
    expect(contains(err_text(), "missing checkpoint"), "eval names the checkpoint");

    expect(run("train --config tmp_cli_cfg.json") == 0, "train succeeds");
    expect(contains(out_text(), "\"task_loss\":"), "train prints the final epoch line");
    expect(fs::exists("tmp_cli_run/model.ckpt"), "train writes the checkpoint");
    expect(fs::exists("tmp_cli_run/train.log.jsonl"), "train writes the log");

    expect(run("eval --config tmp_cli_cfg.json") == 0, "eval succeeds");
    expect(contains(out_text(), "\"sfr\":"), "eval reports the strand flip rate");
    expect(fs::exists("tmp_cli_run/eval.json"), "eval writes its report");
    expect(run("eval --config tmp_cli_cfg.json --tta") == 0, "tta eval succeeds");
    expect(contains(slurp("tmp_cli_run/eval.tta.json"), "tta_exact_by_construction"),
           "tta eval is annotated as exact");

    expect(run("sweep --config tmp_cli_cfg.json") == 2, "sweep without lambdas exits 2");
    expect(contains(err_text(), "sweep: --lambda is required"), "sweep demands lambdas");
    expect(run("sweep --config tmp_cli_cfg.json --lambda 0,abc") == 2,
           "malformed lambda exits 2");
    expect(contains(err_text(), "sweep: bad lambda value 'abc'"),
           "malformed lambda is named");

    expect(run("sweep --config tmp_cli_cfg.json --lambda 0,0.1") == 0, "sweep succeeds");
    expect(contains(out_text(), "sweep table written to tmp_cli_run/sweep/sweep.csv"),
           "sweep reports the table path");
    const std::string csv = slurp("tmp_cli_run/sweep/sweep.csv");
    expect(static_cast<int>(std::count(csv.begin(), csv.end(), '\n')) == 3,
           "sweep table holds a header and one row per lambda");
    expect(contains(csv, "lambda,accuracy"), "sweep table uses the fixed schema");

    for (const char* p : {"tmp_cli_run", "tmp_cli_seed", "tmp_cli_fresh"}) {
        fs::remove_all(p);
    }
    for (const char* p : {"tmp_cli_cfg.json", "tmp_cli_bad.json", "tmp_cli_stdout.txt",
                          "tmp_cli_stderr.txt"}) {
        fs::remove(p);
    }
    std::cout << "cli tests: " << g_checks << " checks, " << g_failures << " failures\n";
    return g_failures == 0 ? 0 : 1;
}
