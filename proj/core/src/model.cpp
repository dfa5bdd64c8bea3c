#include "rccr/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "json_util.hpp"
#include "rccr/errors.hpp"
#include "rccr/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace rccr::model {

namespace {

Tensor init_uniform(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = (2.0 * rng.uniform() - 1.0) * bound;
    }
    return t;
}

ad::Value activate(const ad::Value& x, const std::string& name) {
    if (name == "relu") return ad::relu(x);
    if (name == "gelu") return ad::gelu(x);
    throw ConfigError("model: unknown activation '" + name + "'");
}

std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride) {
    const std::size_t pad = (kernel - 1) / 2;
    return (len + 2 * pad - kernel) / stride + 1;
}

}  // namespace

void BackboneConfig::validate() const {
    if (conv.empty()) throw ConfigError("model: need at least one conv layer");
    for (const ConvSpec& c : conv) {
        if (c.channels == 0) throw ConfigError("model: conv channels must be positive");
        if (c.kernel == 0 || c.kernel % 2 == 0) {
            throw ConfigError("model: conv kernel width must be odd, got " +
                              std::to_string(c.kernel));
        }
        if (c.stride == 0) throw ConfigError("model: conv stride must be positive");
    }
    if (hidden == 0) throw ConfigError("model: hidden width must be positive");
    if (activation != "relu" && activation != "gelu") {
        throw ConfigError("model: unknown activation '" + activation + "' (relu|gelu)");
    }
}

HeadKind HeadKind::sequence_classification(std::size_t c) {
    HeadKind h;
    h.type = HeadType::SequenceClassification;
    h.classes = c;
    return h;
}

HeadKind HeadKind::sequence_regression(std::size_t d) {
    HeadKind h;
    h.type = HeadType::SequenceRegression;
    h.dims = d;
    return h;
}

HeadKind HeadKind::bin_regression(std::size_t b, std::size_t k) {
    HeadKind h;
    h.type = HeadType::BinRegression;
    h.bins = b;
    h.channels = k;
    return h;
}

HeadKind HeadKind::bin_classification(std::size_t b, std::size_t c) {
    HeadKind h;
    h.type = HeadType::BinClassification;
    h.bins = b;
    h.classes = c;
    return h;
}

bool HeadKind::binned() const {
    return type == HeadType::BinRegression || type == HeadType::BinClassification;
}

std::size_t HeadKind::out_channels() const {
    switch (type) {
        case HeadType::SequenceClassification: return classes;
        case HeadType::SequenceRegression: return dims;
        case HeadType::BinRegression: return channels;
        case HeadType::BinClassification: return classes;
    }
    return 0;
}

void HeadKind::validate() const {
    switch (type) {
        case HeadType::SequenceClassification:
            if (classes < 2) throw ConfigError("head: classes must be >= 2");
            break;
        case HeadType::SequenceRegression:
            if (dims < 1) throw ConfigError("head: dims must be >= 1");
            break;
        case HeadType::BinRegression:
            if (bins < 1) throw ConfigError("head: bins must be >= 1");
            if (channels < 1) throw ConfigError("head: channels must be >= 1");
            break;
        case HeadType::BinClassification:
            if (bins < 1) throw ConfigError("head: bins must be >= 1");
            if (classes < 2) throw ConfigError("head: classes must be >= 2");
            break;
    }
}

std::string HeadKind::describe() const {
    switch (type) {
        case HeadType::SequenceClassification:
            return "sequence_classification(C=" + std::to_string(classes) + ")";
        case HeadType::SequenceRegression:
            return "sequence_regression(d=" + std::to_string(dims) + ")";
        case HeadType::BinRegression:
            return "bin_regression(B=" + std::to_string(bins) +
                   ",K=" + std::to_string(channels) + ")";
        case HeadType::BinClassification:
            return "bin_classification(B=" + std::to_string(bins) +
                   ",C=" + std::to_string(classes) + ")";
    }
    return "?";
}

std::size_t bins_for(std::size_t length, std::size_t resolution) {
    if (length == 0 || resolution == 0) {
        throw ConfigError("bins_for: length and resolution must be positive");
    }
    return (length + resolution - 1) / resolution;
}

const char* to_string(HeadType t) {
    switch (t) {
        case HeadType::SequenceClassification: return "sequence_classification";
        case HeadType::SequenceRegression: return "sequence_regression";
        case HeadType::BinRegression: return "bin_regression";
        case HeadType::BinClassification: return "bin_classification";
    }
    return "?";
}

HeadType head_type_from_string(const std::string& s) {
    if (s == "sequence_classification") return HeadType::SequenceClassification;
    if (s == "sequence_regression") return HeadType::SequenceRegression;
    if (s == "bin_regression") return HeadType::BinRegression;
    if (s == "bin_classification") return HeadType::BinClassification;
    throw ConfigError("unknown head type '" + s + "'");
}

ad::Value Predictor::forward(const Tensor& batch) const {
    if (batch.rank() != 3 || batch.extent(2) != 4) {
        throw DimensionError("forward: expected one-hot batch (N,L,4), got " +
                             shape_str(batch.shape()));
    }
    if (batch.extent(1) != input_length) {
        throw DimensionError("forward: sequence length " + std::to_string(batch.extent(1)) +
                             " but predictor was built for " + std::to_string(input_length));
    }

    auto param = [this](const std::string& name) -> const ad::Value& {
        for (const auto& [n, v] : named_params) {
            if (n == name) return v;
        }
        throw ContractError("forward: missing parameter '" + name + "'");
    };

    ad::Value x = ad::constant(batch);
    std::size_t len = input_length;
    for (std::size_t i = 0; i < backbone.conv.size(); ++i) {
        const ConvSpec& c = backbone.conv[i];
        const std::string base = "conv" + std::to_string(i);
        x = ad::conv1d(x, param(base + ".w"), param(base + ".b"), c.stride);
        len = conv_out_len(len, c.kernel, c.stride);
        x = activate(x, backbone.activation);
        if (len >= 2) {
            x = ad::max_pool1d(x, 2, 2);
            len = (len - 2) / 2 + 1;
        }
    }

    if (head.binned()) {
        x = ad::adaptive_mean_pool1d(x, head.bins);
        return ad::affine(x, param("head.w"), param("head.b"));
    }
    x = ad::reduce_mean(x, 1);  // global mean over positions
    x = activate(ad::affine(x, param("head.w1"), param("head.b1")), backbone.activation);
    return ad::affine(x, param("head.w2"), param("head.b2"));
}

std::vector<ad::Value> Predictor::parameters() const {
    std::vector<ad::Value> out;
    out.reserve(named_params.size());
    for (const auto& [n, v] : named_params) out.push_back(v);
    return out;
}

void Predictor::zero_grad() {
    for (auto& [n, v] : named_params) v.zero_grad();
}

std::size_t Predictor::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [n, v] : named_params) total += v.tensor().size();
    return total;
}

Predictor build_predictor(const BackboneConfig& cfg, const HeadKind& head,
                          std::size_t input_length) {
    cfg.validate();
    head.validate();
    if (input_length == 0) throw ConfigError("model: input length must be positive");

    Predictor p;
    p.backbone = cfg;
    p.head = head;
    p.input_length = input_length;

    Rng rng(cfg.seed);
    auto push = [&p, &rng](const std::string& name, std::vector<std::size_t> shape,
                           std::size_t fan_in) {
        p.named_params.emplace_back(
            name, ad::parameter(init_uniform(rng, std::move(shape), fan_in)));
    };

    std::size_t in_ch = 4;
    for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
        const ConvSpec& c = cfg.conv[i];
        const std::string base = "conv" + std::to_string(i);
        push(base + ".w", {c.channels, in_ch, c.kernel}, in_ch * c.kernel);
        push(base + ".b", {c.channels}, in_ch * c.kernel);
        in_ch = c.channels;
    }

    const std::size_t out = head.out_channels();
    if (head.binned()) {
        push("head.w", {in_ch, out}, in_ch);
        push("head.b", {out}, in_ch);
    } else {
        push("head.w1", {in_ch, cfg.hidden}, in_ch);
        push("head.b1", {cfg.hidden}, in_ch);
        push("head.w2", {cfg.hidden, out}, cfg.hidden);
        push("head.b2", {out}, cfg.hidden);
    }
    return p;
}

void save_checkpoint(const Predictor& p, const std::string& path) {
    detail::json header;
    header["format"] = "rccr-checkpoint-v1";
    header["backbone"] = detail::backbone_to_json(p.backbone);
    header["head"] = detail::head_to_json(p.head);
    header["input_length"] = p.input_length;
    detail::json tensors = detail::json::array();
    for (const auto& [name, v] : p.named_params) {
        tensors.push_back({{"name", name}, {"shape", v.tensor().shape()}});
    }
    header["tensors"] = tensors;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("checkpoint: cannot open '" + path + "' for writing");
    out << header.dump() << '\n';
    for (const auto& [name, v] : p.named_params) {
        const Tensor& t = v.tensor();
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw ContractError("checkpoint: write to '" + path + "' failed");
}

Predictor load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("checkpoint: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("checkpoint: missing header line");

    Predictor p;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> table;
    try {
        detail::json header = detail::json::parse(line);
        if (header.at("format").get<std::string>() != "rccr-checkpoint-v1") {
            throw ParseError("checkpoint: unknown format '" +
                             header.at("format").get<std::string>() + "'");
        }
        BackboneConfig cfg = detail::backbone_from_json(header.at("backbone"));
        HeadKind head = detail::head_from_json(header.at("head"));
        const auto input_length = header.at("input_length").get<std::size_t>();
        p = build_predictor(cfg, head, input_length);
        for (const auto& entry : header.at("tensors")) {
            table.emplace_back(entry.at("name").get<std::string>(),
                               entry.at("shape").get<std::vector<std::size_t>>());
        }
    } catch (const detail::json::exception& e) {
        throw ParseError(std::string("checkpoint: bad header: ") + e.what());
    }

    if (table.size() != p.named_params.size()) {
        throw ParseError("checkpoint: tensor table lists " + std::to_string(table.size()) +
                         " tensors, model has " + std::to_string(p.named_params.size()));
    }
    for (std::size_t i = 0; i < table.size(); ++i) {
        auto& [name, v] = p.named_params[i];
        if (table[i].first != name || table[i].second != v.tensor().shape()) {
            throw ParseError("checkpoint: tensor " + std::to_string(i) + " is '" +
                             table[i].first + "' " + shape_str(table[i].second) +
                             ", expected '" + name + "' " +
                             shape_str(v.tensor().shape()));
        }
        Tensor& t = v.node()->value;
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(double))) {
            throw ParseError("checkpoint: truncated payload at tensor '" + name + "'");
        }
    }
    if (in.peek() != std::ifstream::traits_type::eof()) {
        throw ParseError("checkpoint: trailing bytes after payload");
    }
    return p;
}

}  // namespace rccr::model

namespace rccr::detail {

json backbone_to_json(const model::BackboneConfig& cfg) {
    json conv = json::array();
    for (const auto& c : cfg.conv) {
        conv.push_back({{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}});
    }
    return {{"conv", conv},
            {"hidden", cfg.hidden},
            {"activation", cfg.activation},
            {"seed", cfg.seed}};
}

model::BackboneConfig backbone_from_json(const json& j) {
    model::BackboneConfig cfg;
    if (j.contains("conv")) {
        cfg.conv.clear();
        for (const auto& c : j.at("conv")) {
            model::ConvSpec s;
            s.channels = c.at("channels").get<std::size_t>();
            s.kernel = c.at("kernel").get<std::size_t>();
            s.stride = c.value("stride", std::size_t{1});
            cfg.conv.push_back(s);
        }
    }
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.activation = j.value("activation", cfg.activation);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

json head_to_json(const model::HeadKind& head) {
    return {{"type", model::to_string(head.type)},
            {"classes", head.classes},
            {"dims", head.dims},
            {"bins", head.bins},
            {"channels", head.channels}};
}

model::HeadKind head_from_json(const json& j) {
    model::HeadKind h;
    h.type = model::head_type_from_string(j.at("type").get<std::string>());
    h.classes = j.value("classes", h.classes);
    h.dims = j.value("dims", h.dims);
    h.bins = j.value("bins", h.bins);
    h.channels = j.value("channels", h.channels);
    h.validate();
    return h;
}

}  // namespace rccr::detail
