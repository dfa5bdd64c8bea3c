#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rccr/tensor.hpp"

namespace rccr {

/// DNA alphabet. N is the ambiguity symbol; complement(N) = N.
enum class Base : std::uint8_t { A = 0, C = 1, G = 2, T = 3, N = 4 };

/// Watson-Crick complement; an involution on all five symbols.
Base complement(Base b);

char base_to_char(Base b);

/// Case-insensitive. Returns nullopt for symbols outside {A,C,G,T,N}.
std::optional<Base> base_from_char(char c);

/// Label payload carried by a sequence record. Opaque to the reverse
/// complement; task-aware alignment of labels is the data module's concern.
///   monostate        -> unlabeled
///   int              -> class index
///   vector<double>   -> real vector target
///   Tensor           -> bin profile target (B x K)
using Label = std::variant<std::monostate, int, std::vector<double>, Tensor>;

bool has_label(const Label& l);
int label_class(const Label& l);
const std::vector<double>& label_vector(const Label& l);
const Tensor& label_profile(const Label& l);

struct SequenceRecord {
    std::string id;
    std::vector<Base> bases;
    Label label;

    std::size_t length() const { return bases.size(); }
    std::string to_string() const;
    static SequenceRecord from_string(std::string id, const std::string& seq);

    /// Fraction of N symbols.
    double ambiguous_fraction() const;
};

/// Output position i holds the complement of input position L+1-i. Id and
/// label payload are carried through unchanged.
SequenceRecord reverse_complement(const SequenceRecord& s);

std::vector<Base> reverse_complement(const std::vector<Base>& bases);

/// L x 4 one-hot matrix, channels ordered A,C,G,T. N rows are all zero so
/// every entry stays in {0,1} and the RC commutation identity
/// one_hot(RC(s)) == rowreverse(channelswap(one_hot(s))) is exact.
Tensor one_hot(const SequenceRecord& s);

/// Pack one-hot rows for a batch of equal-length records into (N, L, 4).
Tensor one_hot_batch(const std::vector<const SequenceRecord*>& records);

/// FASTA ingestion: '>' header lines, multi-line bodies, case-insensitive.
/// Lowercase (soft-masked) bases are normalized to uppercase. Symbols outside
/// {A,C,G,T,N} and bodies before the first header are ParseErrors that name
/// the line (and record id where known).
std::vector<SequenceRecord> parse_fasta(std::istream& in);
std::vector<SequenceRecord> parse_fasta(const std::string& text);

/// TSV ingestion: columns id, sequence, label; tab-separated; header row
/// required. Label cells may be empty (unlabeled), an integer class index,
/// a JSON real array, or a JSON 2-D array (profile).
std::vector<SequenceRecord> parse_tsv(std::istream& in);
std::vector<SequenceRecord> parse_tsv(const std::string& text);

/// Drop records whose ambiguous-base fraction exceeds the threshold.
std::vector<SequenceRecord> filter_ambiguous(std::vector<SequenceRecord> records,
                                             double max_fraction = 0.20);

}  // namespace rccr
