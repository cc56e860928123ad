#include "shadowlift/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <map>

#include "shadowlift/error.hpp"

namespace shadowlift {

namespace {

constexpr char kMagic[4] = {'S', 'L', 'W', 'T'};

template <class T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw Error(Errc::checkpoint_error, "truncated checkpoint " + path.string());
    return v;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& weights) {
    return std::filesystem::path(weights.string() + ".json");
}

void save_weights(const std::filesystem::path& path, const nn::ParameterList& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointSchemaVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.items().size()));
    for (const auto& [name, var] : params.items()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Tensor& t = var.value();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) put<std::int32_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw Error(Errc::io_error, "failed writing " + path.string());
}

void load_weights(const std::filesystem::path& path, const nn::ParameterList& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::checkpoint_error, "cannot open checkpoint " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic))
        throw Error(Errc::checkpoint_error, path.string() + " is not a weights file");
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointSchemaVersion)
        throw Error(Errc::checkpoint_error, "unsupported weights version " + std::to_string(version));
    const auto count = get<std::uint32_t>(in, path);
    std::map<std::string, Tensor> stored;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(get<std::uint32_t>(in, path), '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(name.size())))
            throw Error(Errc::checkpoint_error, "truncated checkpoint " + path.string());
        Shape shape(get<std::uint32_t>(in, path));
        for (int& d : shape) d = get<std::int32_t>(in, path);
        Tensor t(shape);
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
            throw Error(Errc::checkpoint_error, "truncated checkpoint " + path.string());
        stored.emplace(std::move(name), std::move(t));
    }
    if (stored.size() != params.items().size())
        throw Error(Errc::checkpoint_error, path.string() + " holds " + std::to_string(stored.size()) +
                                                " tensors, model expects " + std::to_string(params.items().size()));
    for (const auto& [name, var] : params.items()) {
        auto it = stored.find(name);
        if (it == stored.end()) throw Error(Errc::checkpoint_error, "checkpoint lacks tensor '" + name + "'");
        if (it->second.shape() != var.value().shape())
            throw Error(Errc::checkpoint_error, "tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                                                    ", model expects " + shape_str(var.value().shape()));
        ag::Var v = var;
        v.mutable_value() = std::move(it->second);
    }
}

void save_checkpoint(const std::filesystem::path& path, const std::string& role, const nn::ParameterList& params,
                     nlohmann::json meta) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    save_weights(path, params);
    meta["schema_version"] = kCheckpointSchemaVersion;
    meta["role"] = role;
    std::ofstream out(sidecar_path(path));
    if (!out) throw Error(Errc::io_error, "cannot write " + sidecar_path(path).string());
    out << meta.dump(2) << '\n';
}

nlohmann::json read_sidecar(const std::filesystem::path& path, const std::string& role) {
    const auto side = sidecar_path(path);
    std::ifstream in(side);
    if (!in) throw Error(Errc::checkpoint_error, "missing checkpoint metadata " + side.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::checkpoint_error, side.string() + ": " + e.what());
    }
    if (j.value("schema_version", -1) != kCheckpointSchemaVersion)
        throw Error(Errc::checkpoint_error, side.string() + ": incompatible schema_version");
    if (j.value("role", std::string()) != role)
        throw Error(Errc::checkpoint_error, side.string() + ": expected role '" + role + "', found '" +
                                                j.value("role", std::string()) + "'");
    return j;
}

}  // namespace shadowlift
