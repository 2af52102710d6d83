#include "patchcast/model.hpp"
#include "patchcast/text.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace patchcast {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'A', 'S', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw DataError("checkpoint " + path.string() + " is truncated");
    return value;
}

std::string get_string(std::istream& is, const std::filesystem::path& path) {
    const auto size = get<std::uint64_t>(is, path);
    if (size > (1u << 26)) throw DataError("checkpoint " + path.string() + " has a corrupt string header");
    std::string s(size, '\0');
    is.read(s.data(), static_cast<std::streamsize>(size));
    if (!is) throw DataError("checkpoint " + path.string() + " is truncated");
    return s;
}

} // namespace

template <class S>
void save_checkpoint(const std::filesystem::path& path, PatchMLP<S>& model) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, sizeof(S));

    std::string config_text;
    for (const auto& [k, v] : model_config_entries(model.config())) config_text += k + "=" + v + "\n";
    put_string(os, config_text);

    const auto params = model.parameters();
    put<std::uint64_t>(os, params.size());
    for (const auto& p : params) {
        put_string(os, p.name);
        put<std::uint64_t>(os, static_cast<std::uint64_t>(p.rows));
        put<std::uint64_t>(os, static_cast<std::uint64_t>(p.cols));
        os.write(reinterpret_cast<const char*>(p.value.data()),
                 static_cast<std::streamsize>(p.value.size() * sizeof(S)));
    }
    if (!os) throw DataError("failed writing checkpoint " + path.string());
}

template <class S>
PatchMLP<S> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError(path.string() + " is not a checkpoint file");
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto scalar = get<std::uint32_t>(is, path);
    if (scalar != sizeof(S)) {
        throw DataError("checkpoint stores " + std::to_string(scalar * 8) + "-bit values, expected " +
                        std::to_string(sizeof(S) * 8));
    }

    ModelConfig config;
    for (const auto& line : text::split(get_string(is, path), '\n')) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || !set_model_config_entry(config, line.substr(0, eq), line.substr(eq + 1))) {
            throw DataError("checkpoint config line not understood: " + line);
        }
    }
    PatchMLP<S> model(config);
    auto params = model.parameters();
    std::map<std::string, ParamView<S>*> by_name;
    for (auto& p : params) by_name[p.name] = &p;

    const auto count = get<std::uint64_t>(is, path);
    if (count != params.size()) {
        throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                        std::to_string(params.size()));
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = get_string(is, path);
        const auto rows = get<std::uint64_t>(is, path);
        const auto cols = get<std::uint64_t>(is, path);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint parameter " + name + " is unknown to the model");
        auto& p = *it->second;
        if (rows != static_cast<std::uint64_t>(p.rows) || cols != static_cast<std::uint64_t>(p.cols)) {
            throw DataError("checkpoint parameter " + name + " has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", model expects " + std::to_string(p.rows) + "x" +
                            std::to_string(p.cols));
        }
        is.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(S)));
        if (!is) throw DataError("checkpoint " + path.string() + " is truncated");
    }
    return model;
}

template void save_checkpoint<float>(const std::filesystem::path&, PatchMLP<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, PatchMLP<double>&);
template PatchMLP<float> load_checkpoint<float>(const std::filesystem::path&);
template PatchMLP<double> load_checkpoint<double>(const std::filesystem::path&);

} // namespace patchcast
