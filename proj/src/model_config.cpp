#include "patchcast/model.hpp"
#include "patchcast/text.hpp"

#include <cmath>
#include <numeric>

namespace patchcast {

std::string_view to_string(ActivationKind kind) {
    return kind == ActivationKind::relu ? "relu" : "gelu";
}

ActivationKind parse_activation(std::string_view value) {
    const std::string v = text::trim(value);
    if (v == "gelu") return ActivationKind::gelu;
    if (v == "relu") return ActivationKind::relu;
    throw ConfigError("invalid value '" + v + "' for activation: expected gelu or relu");
}

namespace {

void check_scales(Index lookback, const std::vector<Index>& scales) {
    if (scales.empty()) throw ConfigError("patch_scales must not be empty");
    for (Index p : scales) {
        if (p <= 0 || lookback % p != 0) {
            throw ConfigError("patch_scales: patch size " + std::to_string(p) + " does not divide lookback " +
                              std::to_string(lookback));
        }
    }
}

} // namespace

std::vector<Index> derive_scale_dims(Index lookback, const std::vector<Index>& scales, Index d_model) {
    check_scales(lookback, scales);
    if (d_model < 1) throw ConfigError("d_model must be >= 1");
    const double share = static_cast<double>(d_model) / static_cast<double>(scales.size());
    std::vector<Index> dims;
    Index used = 0;
    for (Index p : scales) {
        const Index n = lookback / p;
        const Index d = std::max<Index>(1, std::llround(share / static_cast<double>(n)));
        dims.push_back(d);
        used += n * d;
    }
    const Index first_n = lookback / scales.front();
    if (d_model > used) dims.front() += (d_model - used) / first_n;
    return dims;
}

Index ModelConfig::hidden_width(Index width) const {
    return std::max<Index>(1, std::llround(hidden_mult * static_cast<double>(width)));
}

ModelConfig ModelConfig::resolved() const {
    if (lookback < 1) throw ConfigError("lookback must be >= 1");
    ModelConfig out = *this;
    check_scales(lookback, patch_scales);
    if (!use_mpe && patch_scales.size() > 1) {
        out.patch_scales = {patch_scales.front()};
        out.scale_dims.clear();
    }
    if (out.scale_dims.empty()) {
        out.scale_dims = derive_scale_dims(lookback, out.patch_scales, d_model);
    } else if (out.scale_dims.size() != out.patch_scales.size()) {
        throw ConfigError("scale_dims must have one entry per patch scale (" +
                          std::to_string(out.patch_scales.size()) + "), got " +
                          std::to_string(out.scale_dims.size()));
    }
    out.d_model = 0;
    for (std::size_t i = 0; i < out.patch_scales.size(); ++i) {
        out.d_model += (lookback / out.patch_scales[i]) * out.scale_dims[i];
    }
    return out;
}

void ModelConfig::validate() const {
    if (lookback < 1) throw ConfigError("lookback must be >= 1");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (variables < 1) throw ConfigError("variables must be >= 1");
    if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
    if (use_instance_norm && lookback < 2) throw ConfigError("lookback must be >= 2 with instance normalization");
    if (!(hidden_mult > 0.0)) throw ConfigError("hidden_mult must be > 0");
    check_dropout_rate(dropout_rate);
    check_scales(lookback, patch_scales);
    if (scale_dims.size() != patch_scales.size()) throw ConfigError("scale_dims must match patch_scales");
    Index total = 0;
    for (std::size_t i = 0; i < patch_scales.size(); ++i) {
        if (scale_dims[i] < 1) throw ConfigError("scale_dims entries must be >= 1");
        total += (lookback / patch_scales[i]) * scale_dims[i];
    }
    if (total != d_model) {
        throw ConfigError("d_model " + std::to_string(d_model) + " differs from the concatenated embedding width " +
                          std::to_string(total));
    }
    if (decompose_input) {
        check_pool_kernel(input_pool_kernel, lookback);
    } else if (use_decompose) {
        check_pool_kernel(pool_kernel, d_model);
    }
}

std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& c) {
    const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {
        {"lookback", std::to_string(c.lookback)},
        {"horizon", std::to_string(c.horizon)},
        {"variables", std::to_string(c.variables)},
        {"patch_scales", text::join(c.patch_scales)},
        {"scale_dims", text::join(c.scale_dims)},
        {"d_model", std::to_string(c.d_model)},
        {"num_blocks", std::to_string(c.num_blocks)},
        {"hidden_mult", text::format_double(c.hidden_mult)},
        {"pool_kernel", std::to_string(c.pool_kernel)},
        {"dropout", text::format_double(c.dropout_rate)},
        {"activation", std::string(to_string(c.activation))},
        {"use_decompose", b(c.use_decompose)},
        {"use_mpe", b(c.use_mpe)},
        {"use_dot_product", b(c.use_dot_product)},
        {"use_inter_variable", b(c.use_inter_variable)},
        {"use_instance_norm", b(c.use_instance_norm)},
        {"decompose_input", b(c.decompose_input)},
        {"input_pool_kernel", std::to_string(c.input_pool_kernel)},
    };
}

bool set_model_config_entry(ModelConfig& c, std::string_view key, std::string_view value) {
    const auto index_list = [&] {
        std::vector<Index> out;
        for (long long v : text::parse_int_list(value, key)) out.push_back(static_cast<Index>(v));
        return out;
    };
    if (key == "lookback") c.lookback = text::parse_int(value, key);
    else if (key == "horizon") c.horizon = text::parse_int(value, key);
    else if (key == "variables") c.variables = text::parse_int(value, key);
    else if (key == "patch_scales") c.patch_scales = index_list();
    else if (key == "scale_dims") c.scale_dims = index_list();
    else if (key == "d_model") c.d_model = text::parse_int(value, key);
    else if (key == "num_blocks") c.num_blocks = text::parse_int(value, key);
    else if (key == "hidden_mult") c.hidden_mult = text::parse_double(value, key);
    else if (key == "pool_kernel") c.pool_kernel = text::parse_int(value, key);
    else if (key == "dropout") c.dropout_rate = text::parse_double(value, key);
    else if (key == "activation") c.activation = parse_activation(value);
    else if (key == "use_decompose") c.use_decompose = text::parse_bool(value, key);
    else if (key == "use_mpe") c.use_mpe = text::parse_bool(value, key);
    else if (key == "use_dot_product") c.use_dot_product = text::parse_bool(value, key);
    else if (key == "use_inter_variable") c.use_inter_variable = text::parse_bool(value, key);
    else if (key == "use_instance_norm") c.use_instance_norm = text::parse_bool(value, key);
    else if (key == "decompose_input") c.decompose_input = text::parse_bool(value, key);
    else if (key == "input_pool_kernel") c.input_pool_kernel = text::parse_int(value, key);
    else return false;
    return true;
}

} // namespace patchcast
