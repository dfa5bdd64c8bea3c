#include "rccr/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json_util.hpp"
#include "rccr/errors.hpp"
#include "rccr/rng.hpp"

namespace fs = std::filesystem;

namespace rccr::data {

namespace {

constexpr std::size_t kMaxAttempts = 100000;

std::vector<Base> motif_bases(const std::string& m) {
    std::vector<Base> out;
    out.reserve(m.size());
    for (char c : m) {
        auto b = base_from_char(c);
        if (!b || *b == Base::N) {
            throw ConfigError("task: motif '" + m + "' contains a symbol outside ACGT");
        }
        out.push_back(*b);
    }
    return out;
}

bool matches_at(const std::vector<Base>& seq, std::size_t pos,
                const std::vector<Base>& motif) {
    for (std::size_t k = 0; k < motif.size(); ++k) {
        if (seq[pos + k] != motif[k]) return false;
    }
    return true;
}

std::vector<std::size_t> occurrences(const std::vector<Base>& seq,
                                     const std::vector<Base>& motif) {
    std::vector<std::size_t> hits;
    if (motif.size() > seq.size()) return hits;
    for (std::size_t pos = 0; pos + motif.size() <= seq.size(); ++pos) {
        if (matches_at(seq, pos, motif)) hits.push_back(pos);
    }
    return hits;
}

struct MotifSet {
    std::vector<std::vector<Base>> fwd;  // motifs as written
    std::vector<std::vector<Base>> rc;   // their reverse complements

    explicit MotifSet(const TaskSpec& spec) {
        for (const auto& m : spec.motifs) {
            fwd.push_back(motif_bases(m));
            rc.push_back(reverse_complement(fwd.back()));
        }
    }

    bool any_hit(const std::vector<Base>& seq) const {
        for (const auto& m : fwd) {
            if (!occurrences(seq, m).empty()) return true;
        }
        for (const auto& m : rc) {
            if (!occurrences(seq, m).empty()) return true;
        }
        return false;
    }

    std::size_t count_all(const std::vector<Base>& seq) const {
        std::size_t n = 0;
        for (const auto& m : fwd) n += occurrences(seq, m).size();
        for (const auto& m : rc) n += occurrences(seq, m).size();
        return n;
    }
};

std::vector<Base> random_background(Rng& rng, std::size_t length) {
    std::vector<Base> seq(length);
    for (std::size_t i = 0; i < length; ++i) {
        seq[i] = static_cast<Base>(rng.below(4));
    }
    return seq;
}

std::vector<Base> clean_background(Rng& rng, std::size_t length, const MotifSet& motifs) {
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::vector<Base> seq = random_background(rng, length);
        if (!motifs.any_hit(seq)) return seq;
    }
    throw ContractError("generator: could not draw a motif-free background");
}

// Pick a plant position whose span does not overlap previously used spans.
std::size_t free_position(Rng& rng, std::size_t length, std::size_t width,
                          std::vector<std::pair<std::size_t, std::size_t>>& spans) {
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const std::size_t pos = rng.below(length - width + 1);
        bool clash = false;
        for (auto [s, e] : spans) {
            if (pos < e && pos + width > s) {
                clash = true;
                break;
            }
        }
        if (!clash) {
            spans.emplace_back(pos, pos + width);
            return pos;
        }
    }
    throw ContractError("generator: could not place a non-overlapping motif");
}

void plant(std::vector<Base>& seq, std::size_t pos, const std::vector<Base>& motif) {
    std::copy(motif.begin(), motif.end(), seq.begin() + static_cast<std::ptrdiff_t>(pos));
}

std::string bases_str(const std::vector<Base>& seq) {
    std::string s;
    s.reserve(seq.size());
    for (Base b : seq) s.push_back(base_to_char(b));
    return s;
}

std::string canonical_form(const std::vector<Base>& seq) {
    std::string a = bases_str(seq);
    std::string b = bases_str(reverse_complement(seq));
    return a < b ? a : b;
}

const char* id_prefix(TaskKind k) {
    switch (k) {
        case TaskKind::InvariantClassification: return "inv";
        case TaskKind::EquivariantProfile: return "prof";
        case TaskKind::ScalarRegression: return "reg";
        case TaskKind::StrandControl: return "strand";
    }
    return "seq";
}

// Shared skeleton: derive one stream per example index, reject canonical
// duplicates so the fixed split counts stay RC-safe by construction.
template <typename MakeFn>
Dataset assemble(const TaskSpec& spec, MakeFn make) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    std::unordered_set<std::string> seen;
    const std::size_t total = spec.train_n + spec.val_n + spec.test_n;
    for (std::size_t i = 0; i < total; ++i) {
        Rng rng(Rng::derive(spec.seed, i));
        SequenceRecord rec;
        bool accepted = false;
        for (std::size_t attempt = 0; attempt < 1000 && !accepted; ++attempt) {
            rec = make(rng);
            accepted = seen.insert(canonical_form(rec.bases)).second;
        }
        if (!accepted) {
            throw ContractError("generator: duplicate rejection exhausted at example " +
                                std::to_string(i));
        }
        rec.id = std::string(id_prefix(spec.kind)) + "_" + std::to_string(i);
        if (i < spec.train_n) {
            ds.train.push_back(std::move(rec));
        } else if (i < spec.train_n + spec.val_n) {
            ds.val.push_back(std::move(rec));
        } else {
            ds.test.push_back(std::move(rec));
        }
    }
    if (!rc_safe(ds)) throw ContractError("generator: RC-safety invariant violated");
    return ds;
}

}  // namespace

const char* to_string(TaskKind k) {
    switch (k) {
        case TaskKind::InvariantClassification: return "rc-invariant-classification";
        case TaskKind::EquivariantProfile: return "rc-equivariant-profile";
        case TaskKind::ScalarRegression: return "scalar-regression";
        case TaskKind::StrandControl: return "strand-control";
    }
    return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "rc-invariant-classification") return TaskKind::InvariantClassification;
    if (s == "rc-equivariant-profile") return TaskKind::EquivariantProfile;
    if (s == "scalar-regression") return TaskKind::ScalarRegression;
    if (s == "strand-control") return TaskKind::StrandControl;
    throw ConfigError("unknown task kind '" + s +
                      "' (rc-invariant-classification|rc-equivariant-profile|"
                      "scalar-regression|strand-control)");
}

TaskSpec TaskSpec::defaults(TaskKind kind) {
    TaskSpec s;
    s.kind = kind;
    switch (kind) {
        case TaskKind::InvariantClassification:
            break;  // struct defaults
        case TaskKind::EquivariantProfile:
            s.length = 2048;
            s.motifs = {"GATTACA"};
            s.resolution = 128;
            s.channels = 2;
            break;
        case TaskKind::ScalarRegression:
            break;
        case TaskKind::StrandControl:
            // Short marker: spontaneous background occurrences are common, so
            // strand evidence is genuinely noisy and the task is not saturated.
            s.motifs = {"TGACA"};
            break;
    }
    return s;
}

std::size_t TaskSpec::bins() const { return model::bins_for(length, resolution); }

void TaskSpec::validate() const {
    if (length == 0) throw ConfigError("task: length must be positive");
    if (motifs.empty()) throw ConfigError("task: motif set must be nonempty");
    for (const auto& m : motifs) {
        std::vector<Base> bases = motif_bases(m);
        if (bases.empty()) throw ConfigError("task: empty motif");
        if (bases.size() > length) {
            throw ConfigError("task: motif '" + m + "' is longer than the sequence length");
        }
    }
    if (noise < 0.0 || noise >= 0.5) {
        throw ConfigError("task: noise must lie in [0, 0.5)");
    }
    if (train_n == 0 || val_n == 0 || test_n == 0) {
        throw ConfigError("task: split sizes must be positive");
    }
    if (kind == TaskKind::EquivariantProfile) {
        if (resolution == 0 || length % resolution != 0) {
            throw ConfigError("task: bin resolution must divide the sequence length");
        }
        if (bins() < 2) throw ConfigError("task: need at least 2 bins");
        if (channels != 1 && channels != 2) {
            throw ConfigError("task: profile channels must be 1 or 2");
        }
        for (const auto& m : motifs) {
            if (m.size() % 2 == 0) {
                throw ConfigError("task: profile motifs must have odd length '" + m +
                  "' (the occurrence center must land in mirrored bins under RC)");
            }
        }
    }
    if (kind == TaskKind::StrandControl) {
        for (const auto& m : motifs) {
            std::vector<Base> fwd = motif_bases(m);
            if (fwd == reverse_complement(fwd)) {
                throw ConfigError("task: strand marker '" + m +
                                  "' equals its own reverse complement");
            }
        }
    }
}

const std::vector<SequenceRecord>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ContractError("dataset: unknown split '" + name + "' (train|val|test)");
}

// Positives carry the planted motif mostly in forward orientation, mimicking
// corpora annotated against a reference strand.  The label stays orientation-free
// (it scans for the motif and its reverse complement), so an unregularized model
// is free to learn a strand-biased detector that disagrees with itself under RC.
constexpr double kForwardPlantProb = 0.9;

Dataset gen_rc_invariant_classification(const TaskSpec& spec) {
    if (spec.kind != TaskKind::InvariantClassification) {
        throw ConfigError("generator: spec kind is not rc-invariant-classification");
    }
    const MotifSet motifs(spec);
    return assemble(spec, [&](Rng& rng) {
        const bool positive = rng.below(2) == 1;
        std::vector<Base> seq = clean_background(rng, spec.length, motifs);
        if (positive) {
            const std::size_t mi = rng.below(motifs.fwd.size());
            const auto& oriented =
                rng.uniform() < kForwardPlantProb ? motifs.fwd[mi] : motifs.rc[mi];
            std::vector<std::pair<std::size_t, std::size_t>> spans;
            plant(seq, free_position(rng, spec.length, oriented.size(), spans), oriented);
        }
        int label = motifs.any_hit(seq) ? 1 : 0;  // scan the final sequence
        if (spec.noise > 0.0 && rng.uniform() < spec.noise) label = 1 - label;
        SequenceRecord rec;
        rec.bases = std::move(seq);
        rec.label = label;
        return rec;
    });
}

Dataset gen_rc_equivariant_profile(const TaskSpec& spec) {
    if (spec.kind != TaskKind::EquivariantProfile) {
        throw ConfigError("generator: spec kind is not rc-equivariant-profile");
    }
    const MotifSet motifs(spec);
    const std::size_t bins = spec.bins();
    return assemble(spec, [&](Rng& rng) {
        std::vector<Base> seq = clean_background(rng, spec.length, motifs);
        // Dense planting keeps per-bin rates high enough that the Poisson
        // likelihood carries a usable training signal at desk scale.
        const std::size_t n_occ = rng.below(16);
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        for (std::size_t k = 0; k < n_occ; ++k) {
            const std::size_t mi = rng.below(motifs.fwd.size());
            const auto& oriented = rng.below(2) == 0 ? motifs.fwd[mi] : motifs.rc[mi];
            plant(seq, free_position(rng, spec.length, oriented.size(), spans), oriented);
        }
        // Exact target from the final sequence: occurrence centers per bin,
        // forward hits in channel 0 and RC hits in channel 1 (or everything
        // in channel 0 when K=1).
        Tensor prof({bins, spec.channels});
        for (std::size_t mi = 0; mi < motifs.fwd.size(); ++mi) {
            const std::size_t half = (motifs.fwd[mi].size() - 1) / 2;
            for (std::size_t pos : occurrences(seq, motifs.fwd[mi])) {
                prof.at({(pos + half) / spec.resolution, 0}) += 1.0;
            }
            const std::size_t rc_channel = spec.channels == 2 ? 1 : 0;
            for (std::size_t pos : occurrences(seq, motifs.rc[mi])) {
                prof.at({(pos + half) / spec.resolution, rc_channel}) += 1.0;
            }
        }
        if (spec.noise > 0.0) {
            for (std::size_t i = 0; i < prof.size(); ++i) {
                prof[i] += spec.noise * rng.gaussian();
            }
        }
        SequenceRecord rec;
        rec.bases = std::move(seq);
        rec.label = prof;
        return rec;
    });
}

Dataset gen_scalar_regression(const TaskSpec& spec) {
    if (spec.kind != TaskKind::ScalarRegression) {
        throw ConfigError("generator: spec kind is not scalar-regression");
    }
    const MotifSet motifs(spec);
    return assemble(spec, [&](Rng& rng) {
        std::vector<Base> seq = clean_background(rng, spec.length, motifs);
        const std::size_t n_occ = rng.below(4);
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        for (std::size_t k = 0; k < n_occ; ++k) {
            const std::size_t mi = rng.below(motifs.fwd.size());
            const auto& oriented = rng.below(2) == 0 ? motifs.fwd[mi] : motifs.rc[mi];
            plant(seq, free_position(rng, spec.length, oriented.size(), spans), oriented);
        }
        // Smooth symmetric target of the total occurrence count over both
        // orientations; count 0 gives the baseline value 0.
        double y = std::log1p(static_cast<double>(motifs.count_all(seq)));
        if (spec.noise > 0.0) y += spec.noise * rng.gaussian();
        SequenceRecord rec;
        rec.bases = std::move(seq);
        rec.label = std::vector<double>{y};
        return rec;
    });
}

Dataset gen_strand_control(const TaskSpec& spec) {
    if (spec.kind != TaskKind::StrandControl) {
        throw ConfigError("generator: spec kind is not strand-control");
    }
    const MotifSet motifs(spec);
    return assemble(spec, [&](Rng& rng) {
        const int cls = static_cast<int>(rng.below(2));  // 0 = '+', 1 = '-'
        // Backgrounds are NOT scrubbed of the marker: spontaneous occurrences in
        // either orientation are kept, so some sequences carry evidence for both
        // strands and the task has irreducible ambiguity (as real promoters do).
        std::vector<Base> forward_style = random_background(rng, spec.length);
        const std::size_t mi = rng.below(motifs.fwd.size());
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        plant(forward_style,
              free_position(rng, spec.length, motifs.fwd[mi].size(), spans),
              motifs.fwd[mi]);
        SequenceRecord rec;
        rec.bases = cls == 1 ? reverse_complement(forward_style) : forward_style;
        int label = cls;
        if (spec.noise > 0.0 && rng.uniform() < spec.noise) label = 1 - label;
        rec.label = label;
        return rec;
    });
}

Dataset generate(const TaskSpec& spec) {
    switch (spec.kind) {
        case TaskKind::InvariantClassification: return gen_rc_invariant_classification(spec);
        case TaskKind::EquivariantProfile: return gen_rc_equivariant_profile(spec);
        case TaskKind::ScalarRegression: return gen_scalar_regression(spec);
        case TaskKind::StrandControl: return gen_strand_control(spec);
    }
    throw ConfigError("generate: unknown task kind");
}

Dataset split_rc_safe(std::vector<SequenceRecord> records, double train_frac,
                      double val_frac, double test_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(test_frac > 0.0) ||
        std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw ConfigError("split: fractions must be positive and sum to 1");
    }
    // Group records by canonical form, keeping first-appearance order.
    std::unordered_map<std::string, std::size_t> group_of;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::string canon = canonical_form(records[i].bases);
        auto [it, fresh] = group_of.try_emplace(canon, groups.size());
        if (fresh) groups.emplace_back();
        groups[it->second].push_back(i);
    }
    if (groups.size() < 3) {
        throw ContractError("split: need at least 3 reverse-complement groups, have " +
                            std::to_string(groups.size()));
    }

    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const double n = static_cast<double>(records.size());
    const double target[3] = {train_frac * n, val_frac * n, test_frac * n};
    double assigned[3] = {0.0, 0.0, 0.0};
    Dataset ds;
    ds.spec.seed = seed;
    std::vector<SequenceRecord>* splits[3] = {&ds.train, &ds.val, &ds.test};
    for (std::size_t gi : order) {
        int best = 0;
        for (int s = 1; s < 3; ++s) {
            if (target[s] - assigned[s] > target[best] - assigned[best]) best = s;
        }
        for (std::size_t ri : groups[gi]) {
            splits[best]->push_back(records[ri]);
        }
        assigned[best] += static_cast<double>(groups[gi].size());
    }
    if (!rc_safe(ds)) throw ContractError("split: RC-safety invariant violated");
    return ds;
}

bool rc_safe(const Dataset& ds) {
    const std::vector<SequenceRecord>* splits[3] = {&ds.train, &ds.val, &ds.test};
    std::unordered_map<std::string, int> owner;
    for (int s = 0; s < 3; ++s) {
        for (const auto& rec : *splits[s]) {
            auto [it, fresh] = owner.try_emplace(canonical_form(rec.bases), s);
            if (!fresh && it->second != s) return false;
        }
    }
    return true;
}

namespace {

std::string label_cell(const Label& label) {
    if (std::holds_alternative<int>(label)) {
        return std::to_string(std::get<int>(label));
    }
    if (std::holds_alternative<std::vector<double>>(label)) {
        return detail::json(std::get<std::vector<double>>(label)).dump();
    }
    if (std::holds_alternative<Tensor>(label)) {
        const Tensor& t = std::get<Tensor>(label);
        if (t.rank() != 2) {
            throw ContractError("export: profile labels must be rank-2 (B,K)");
        }
        detail::json rows = detail::json::array();
        for (std::size_t b = 0; b < t.extent(0); ++b) {
            detail::json row = detail::json::array();
            for (std::size_t k = 0; k < t.extent(1); ++k) {
                row.push_back(t.at({b, k}));
            }
            rows.push_back(std::move(row));
        }
        return rows.dump();
    }
    throw ContractError("export: unlabeled record cannot be exported");
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("export: cannot open '" + path.string() + "'");
    out << content;
    if (!out) throw ContractError("export: write to '" + path.string() + "' failed");
}

std::string fasta_text(const std::vector<SequenceRecord>& records) {
    std::ostringstream out;
    for (const auto& rec : records) {
        out << '>' << rec.id << '\n';
        const std::string s = rec.to_string();
        for (std::size_t i = 0; i < s.size(); i += 80) {
            out << s.substr(i, 80) << '\n';
        }
    }
    return out.str();
}

std::string labels_text(const std::vector<SequenceRecord>& records) {
    std::ostringstream out;
    out << "id\tlabel\n";
    for (const auto& rec : records) {
        out << rec.id << '\t' << label_cell(rec.label) << '\n';
    }
    return out.str();
}

std::string profile_tsv_text(const std::vector<SequenceRecord>& records) {
    std::ostringstream out;
    out << "id\tsequence\tlabel\n";
    for (const auto& rec : records) {
        out << rec.id << '\t' << rec.to_string() << '\t' << label_cell(rec.label) << '\n';
    }
    return out.str();
}

void attach_labels(std::vector<SequenceRecord>& records, const std::string& tsv,
                   const std::string& file) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < records.size(); ++i) index[records[i].id] = i;
    std::istringstream in(tsv);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    std::size_t attached = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != "id\tlabel") {
                throw ParseError(file + ":" + std::to_string(lineno) +
                                 ": expected header 'id\\tlabel'");
            }
            header_seen = true;
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError(file + ":" + std::to_string(lineno) + ": missing tab");
        }
        const std::string id = line.substr(0, tab);
        const std::string cell = line.substr(tab + 1);
        auto it = index.find(id);
        if (it == index.end()) {
            throw ParseError(file + ":" + std::to_string(lineno) + ": unknown id '" + id +
                             "'");
        }
        try {
            detail::json j = detail::json::parse(cell);
            if (j.is_number_integer()) {
                records[it->second].label = j.get<int>();
            } else if (j.is_array()) {
                records[it->second].label = j.get<std::vector<double>>();
            } else {
                throw ParseError(file + ":" + std::to_string(lineno) +
                                 ": label must be an integer or a JSON array");
            }
        } catch (const detail::json::exception& e) {
            throw ParseError(file + ":" + std::to_string(lineno) + ": bad label cell: " +
                             e.what());
        }
        ++attached;
    }
    if (attached != records.size()) {
        throw ParseError(file + ": " + std::to_string(attached) + " labels for " +
                         std::to_string(records.size()) + " sequences");
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("dataset: cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string spec_hash(const TaskSpec& spec) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a:%016llx",
                  static_cast<unsigned long long>(fnv1a64(detail::task_to_json(spec).dump())));
    return buf;
}

void export_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    const bool profile = ds.spec.kind == TaskKind::EquivariantProfile;
    const std::pair<const char*, const std::vector<SequenceRecord>*> splits[3] = {
        {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};

    detail::json manifest;
    manifest["format"] = "rccr-dataset-v1";
    manifest["task"] = detail::task_to_json(ds.spec);
    manifest["spec_hash"] = spec_hash(ds.spec);
    detail::json split_info;
    for (const auto& [name, records] : splits) {
        detail::json files = detail::json::array();
        if (profile) {
            const std::string fname = std::string(name) + ".tsv";
            write_file(fs::path(dir) / fname, profile_tsv_text(*records));
            files.push_back(fname);
        } else {
            const std::string fasta = std::string(name) + ".fasta";
            const std::string labels = std::string(name) + ".labels.tsv";
            write_file(fs::path(dir) / fasta, fasta_text(*records));
            write_file(fs::path(dir) / labels, labels_text(*records));
            files.push_back(fasta);
            files.push_back(labels);
        }
        split_info[name] = {{"count", records->size()}, {"files", files}};
    }
    manifest["splits"] = split_info;
    write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
}

Dataset import_dataset(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw ConfigError("dataset: no manifest at '" + manifest_path.string() +
                          "' (run gendata first)");
    }
    Dataset ds;
    try {
        detail::json manifest = detail::json::parse(read_file(manifest_path));
        if (manifest.at("format").get<std::string>() != "rccr-dataset-v1") {
            throw ParseError("dataset: unknown manifest format");
        }
        ds.spec = detail::task_from_json(manifest.at("task"));
        const bool profile = ds.spec.kind == TaskKind::EquivariantProfile;
        const std::pair<const char*, std::vector<SequenceRecord>*> splits[3] = {
            {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
        for (const auto& [name, records] : splits) {
            if (profile) {
                *records = parse_tsv(read_file(fs::path(dir) / (std::string(name) + ".tsv")));
            } else {
                *records =
                    parse_fasta(read_file(fs::path(dir) / (std::string(name) + ".fasta")));
                const std::string labels_file = std::string(name) + ".labels.tsv";
                attach_labels(*records, read_file(fs::path(dir) / labels_file),
                              labels_file);
            }
            const auto expected =
                manifest.at("splits").at(name).at("count").get<std::size_t>();
            if (records->size() != expected) {
                throw ParseError("dataset: split '" + std::string(name) + "' has " +
                                 std::to_string(records->size()) + " records, manifest says " +
                                 std::to_string(expected));
            }
        }
    } catch (const detail::json::exception& e) {
        throw ParseError(std::string("dataset: bad manifest: ") + e.what());
    }
    if (!rc_safe(ds)) {
        throw ContractError("dataset: splits violate the RC-safety invariant");
    }
    return ds;
}

model::HeadKind head_for(const TaskSpec& spec) {
    switch (spec.kind) {
        case TaskKind::InvariantClassification:
        case TaskKind::StrandControl:
            return model::HeadKind::sequence_classification(2);
        case TaskKind::EquivariantProfile:
            return model::HeadKind::bin_regression(spec.bins(), spec.channels);
        case TaskKind::ScalarRegression:
            return model::HeadKind::sequence_regression(1);
    }
    throw ConfigError("head_for: unknown task kind");
}

sym::AlignmentSpec alignment_for(const TaskSpec& spec) {
    sym::AlignmentSpec align;
    if (spec.kind == TaskKind::EquivariantProfile) {
        align.layout = sym::HeadLayout::Binned;
        if (spec.channels == 2) align.channel_perm = {1, 0};
    }
    return align;
}

void default_penalty(const TaskSpec& spec, sym::LinkSpec& link, sym::DivergenceSpec& div) {
    switch (spec.kind) {
        case TaskKind::InvariantClassification:
        case TaskKind::StrandControl:
            link.kind = sym::LinkKind::Softmax;
            link.temperature = 2.0;
            div.kind = sym::DivergenceKind::SymmetricKL;
            break;
        case TaskKind::EquivariantProfile:
            link.kind = sym::LinkKind::Identity;
            div.kind = sym::DivergenceKind::SymmetricPoissonKL;
            break;
        case TaskKind::ScalarRegression:
            link.kind = sym::LinkKind::Identity;
            div.kind = sym::DivergenceKind::ScaledMse;
            div.sigma = 1.0;
            break;
    }
}

Label rc_label(const TaskSpec& spec, const Label& label) {
    switch (spec.kind) {
        case TaskKind::InvariantClassification:
        case TaskKind::ScalarRegression:
            return label;
        case TaskKind::StrandControl:
            return 1 - label_class(label);
        case TaskKind::EquivariantProfile:
            return sym::align(label_profile(label), alignment_for(spec));
    }
    throw ConfigError("rc_label: unknown task kind");
}

}  // namespace rccr::data

namespace rccr::detail {

json task_to_json(const data::TaskSpec& spec) {
    return {{"kind", data::to_string(spec.kind)},
            {"length", spec.length},
            {"motifs", spec.motifs},
            {"noise", spec.noise},
            {"resolution", spec.resolution},
            {"channels", spec.channels},
            {"seed", spec.seed},
            {"train_n", spec.train_n},
            {"val_n", spec.val_n},
            {"test_n", spec.test_n}};
}

data::TaskSpec task_from_json(const json& j) {
    data::TaskSpec spec = data::TaskSpec::defaults(
        data::task_kind_from_string(j.at("kind").get<std::string>()));
    spec.length = j.value("length", spec.length);
    if (j.contains("motifs")) spec.motifs = j.at("motifs").get<std::vector<std::string>>();
    spec.noise = j.value("noise", spec.noise);
    spec.resolution = j.value("resolution", spec.resolution);
    spec.channels = j.value("channels", spec.channels);
    spec.seed = j.value("seed", spec.seed);
    spec.train_n = j.value("train_n", spec.train_n);
    spec.val_n = j.value("val_n", spec.val_n);
    spec.test_n = j.value("test_n", spec.test_n);
    spec.validate();
    return spec;
}

}  // namespace rccr::detail
