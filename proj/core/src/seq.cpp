#include "rccr/seq.hpp"

#include <cctype>
#include <istream>
#include <sstream>

#include <json.hpp>

#include "rccr/errors.hpp"

namespace rccr {

Base complement(Base b) {
    switch (b) {
        case Base::A: return Base::T;
        case Base::T: return Base::A;
        case Base::C: return Base::G;
        case Base::G: return Base::C;
        case Base::N: return Base::N;
    }
    throw ContractError("complement: invalid base");
}

char base_to_char(Base b) {
    static constexpr char table[] = {'A', 'C', 'G', 'T', 'N'};
    return table[static_cast<std::uint8_t>(b)];
}

std::optional<Base> base_from_char(char c) {
    switch (std::toupper(static_cast<unsigned char>(c))) {
        case 'A': return Base::A;
        case 'C': return Base::C;
        case 'G': return Base::G;
        case 'T': return Base::T;
        case 'N': return Base::N;
        default: return std::nullopt;
    }
}

bool has_label(const Label& l) { return !std::holds_alternative<std::monostate>(l); }

int label_class(const Label& l) {
    if (const int* v = std::get_if<int>(&l)) return *v;
    throw ContractError("label_class: record does not carry a class label");
}

const std::vector<double>& label_vector(const Label& l) {
    if (const auto* v = std::get_if<std::vector<double>>(&l)) return *v;
    throw ContractError("label_vector: record does not carry a vector label");
}

const Tensor& label_profile(const Label& l) {
    if (const auto* v = std::get_if<Tensor>(&l)) return *v;
    throw ContractError("label_profile: record does not carry a profile label");
}

std::string SequenceRecord::to_string() const {
    std::string s;
    s.reserve(bases.size());
    for (Base b : bases) s.push_back(base_to_char(b));
    return s;
}

SequenceRecord SequenceRecord::from_string(std::string id, const std::string& seq) {
    SequenceRecord r;
    r.id = std::move(id);
    r.bases.reserve(seq.size());
    for (char c : seq) {
        auto b = base_from_char(c);
        if (!b) {
            throw ParseError("illegal symbol '" + std::string(1, c) + "' in record '" +
                             r.id + "'");
        }
        r.bases.push_back(*b);
    }
    return r;
}

double SequenceRecord::ambiguous_fraction() const {
    if (bases.empty()) return 0.0;
    std::size_t n = 0;
    for (Base b : bases) {
        if (b == Base::N) ++n;
    }
    return static_cast<double>(n) / static_cast<double>(bases.size());
}

std::vector<Base> reverse_complement(const std::vector<Base>& bases) {
    std::vector<Base> out;
    out.reserve(bases.size());
    for (auto it = bases.rbegin(); it != bases.rend(); ++it) {
        out.push_back(complement(*it));
    }
    return out;
}

SequenceRecord reverse_complement(const SequenceRecord& s) {
    SequenceRecord out;
    out.id = s.id;
    out.label = s.label;
    out.bases = reverse_complement(s.bases);
    return out;
}

Tensor one_hot(const SequenceRecord& s) {
    Tensor m({s.bases.size(), 4});
    for (std::size_t i = 0; i < s.bases.size(); ++i) {
        Base b = s.bases[i];
        if (b != Base::N) m.at({i, static_cast<std::size_t>(b)}) = 1.0;
    }
    return m;
}

Tensor one_hot_batch(const std::vector<const SequenceRecord*>& records) {
    if (records.empty()) throw ContractError("one_hot_batch: empty batch");
    const std::size_t len = records[0]->length();
    Tensor batch({records.size(), len, 4});
    for (std::size_t n = 0; n < records.size(); ++n) {
        const SequenceRecord& r = *records[n];
        if (r.length() != len) {
            throw DimensionError("one_hot_batch: record '" + r.id + "' has length " +
                                 std::to_string(r.length()) + ", expected " +
                                 std::to_string(len));
        }
        for (std::size_t i = 0; i < len; ++i) {
            Base b = r.bases[i];
            if (b != Base::N) batch.at({n, i, static_cast<std::size_t>(b)}) = 1.0;
        }
    }
    return batch;
}

std::vector<SequenceRecord> parse_fasta(std::istream& in) {
    std::vector<SequenceRecord> records;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::string id;
    std::vector<Base> bases;

    auto flush = [&]() {
        if (!have_header) return;
        SequenceRecord r;
        r.id = id;
        r.bases = std::move(bases);
        bases = {};
        records.push_back(std::move(r));
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '>') {
            flush();
            have_header = true;
            id = line.substr(1);
            // header is everything up to first whitespace
            auto ws = id.find_first_of(" \t");
            if (ws != std::string::npos) id.resize(ws);
            continue;
        }
        if (!have_header) {
            throw ParseError("FASTA parse error at line " + std::to_string(line_no) +
                             ": sequence data before first '>' header");
        }
        for (char c : line) {
            auto b = base_from_char(c);
            if (!b) {
                throw ParseError("FASTA parse error at line " + std::to_string(line_no) +
                                 ": illegal symbol '" + std::string(1, c) +
                                 "' in record '" + id + "'");
            }
            bases.push_back(*b);
        }
    }
    flush();
    return records;
}

std::vector<SequenceRecord> parse_fasta(const std::string& text) {
    std::istringstream in(text);
    return parse_fasta(in);
}

namespace {

Label parse_label_cell(const std::string& cell, std::size_t line_no) {
    if (cell.empty()) return std::monostate{};
    try {
        nlohmann::json j = nlohmann::json::parse(cell);
        if (j.is_number_integer()) return static_cast<int>(j.get<long long>());
        if (j.is_number()) return std::vector<double>{j.get<double>()};
        if (j.is_array() && !j.empty() && j[0].is_array()) {
            const std::size_t rows = j.size();
            const std::size_t cols = j[0].size();
            std::vector<double> flat;
            flat.reserve(rows * cols);
            for (const auto& row : j) {
                if (!row.is_array() || row.size() != cols) {
                    throw ParseError("TSV parse error at line " + std::to_string(line_no) +
                                     ": ragged profile label");
                }
                for (const auto& v : row) flat.push_back(v.get<double>());
            }
            return Tensor::from({rows, cols}, std::move(flat));
        }
        if (j.is_array()) return j.get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError("TSV parse error at line " + std::to_string(line_no) +
                         ": unreadable label cell '" + cell + "'");
    }
    throw ParseError("TSV parse error at line " + std::to_string(line_no) +
                     ": unsupported label cell '" + cell + "'");
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return cells;
}

}  // namespace

std::vector<SequenceRecord> parse_tsv(std::istream& in) {
    std::vector<SequenceRecord> records;
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_tabs(line);
        if (!saw_header) {
            if (cells.size() < 2 || cells[0] != "id" || cells[1] != "sequence") {
                throw ParseError("TSV parse error at line " + std::to_string(line_no) +
                                 ": expected header 'id\\tsequence[\\tlabel]'");
            }
            saw_header = true;
            continue;
        }
        if (cells.size() < 2) {
            throw ParseError("TSV parse error at line " + std::to_string(line_no) +
                             ": expected at least id and sequence columns");
        }
        SequenceRecord r = SequenceRecord::from_string(cells[0], cells[1]);
        if (cells.size() >= 3) r.label = parse_label_cell(cells[2], line_no);
        records.push_back(std::move(r));
    }
    if (!saw_header) throw ParseError("TSV parse error: missing header row");
    return records;
}

std::vector<SequenceRecord> parse_tsv(const std::string& text) {
    std::istringstream in(text);
    return parse_tsv(in);
}

std::vector<SequenceRecord> filter_ambiguous(std::vector<SequenceRecord> records,
                                             double max_fraction) {
    std::vector<SequenceRecord> kept;
    kept.reserve(records.size());
    for (auto& r : records) {
        if (r.ambiguous_fraction() <= max_fraction) kept.push_back(std::move(r));
    }
    return kept;
}

}  // namespace rccr
