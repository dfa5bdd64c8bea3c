#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rccr/autodiff.hpp"
#include "rccr/tensor.hpp"

namespace rccr::model {

struct ConvSpec {
    std::size_t channels = 32;
    std::size_t kernel = 5;  // must be odd
    std::size_t stride = 1;
};

/// Shared trunk: conv blocks (conv -> activation -> max-pool/2 while the
/// sequence is long enough), then a task head on top.
struct BackboneConfig {
    std::vector<ConvSpec> conv = {{32, 5, 1}, {32, 5, 1}};
    std::size_t hidden = 64;
    std::string activation = "relu";  // relu | gelu
    std::uint64_t seed = 2025;

    void validate() const;
};

enum class HeadType {
    SequenceClassification,  // logits over C classes
    SequenceRegression,      // d real outputs
    BinRegression,           // (B, K) real outputs
    BinClassification,       // (B, C) per-bin logits
};

struct HeadKind {
    HeadType type = HeadType::SequenceClassification;
    std::size_t classes = 2;   // C
    std::size_t dims = 1;      // d
    std::size_t bins = 1;      // B
    std::size_t channels = 1;  // K

    static HeadKind sequence_classification(std::size_t c);
    static HeadKind sequence_regression(std::size_t d);
    static HeadKind bin_regression(std::size_t b, std::size_t k);
    static HeadKind bin_classification(std::size_t b, std::size_t c);

    bool binned() const;
    /// Size of the last output axis (C, d, K or C depending on type).
    std::size_t out_channels() const;
    void validate() const;
    std::string describe() const;
};

/// Number of bins covering length `length` at resolution `resolution`.
std::size_t bins_for(std::size_t length, std::size_t resolution);

const char* to_string(HeadType t);
HeadType head_type_from_string(const std::string& s);

/// A built network: named parameter tensors plus the forward graph builder.
/// Parameters are requires-grad leaves shared by every forward call.
class Predictor {
public:
    BackboneConfig backbone;
    HeadKind head;
    std::size_t input_length = 0;
    std::vector<std::pair<std::string, ad::Value>> named_params;

    /// Forward a one-hot batch (N, L, 4); returns raw head outputs of shape
    /// (N, C), (N, d), (N, B, K) or (N, B, C) according to the head kind.
    ad::Value forward(const Tensor& batch) const;

    std::vector<ad::Value> parameters() const;
    void zero_grad();
    std::size_t parameter_count() const;
};

/// Deterministic seeded build: equal config and seed give bit-identical
/// parameters.
Predictor build_predictor(const BackboneConfig& cfg, const HeadKind& head,
                          std::size_t input_length);

/// Binary checkpoint: one JSON header line (config + tensor table), then the
/// raw little-endian 64-bit parameter values in table order. Round-trips
/// bit-exactly.
void save_checkpoint(const Predictor& p, const std::string& path);
Predictor load_checkpoint(const std::string& path);

}  // namespace rccr::model
