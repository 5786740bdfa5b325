#include "coat/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace coat {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& file) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) {
        throw std::runtime_error(file + ": truncated checkpoint at offset " + std::to_string(is.gcount()));
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

std::string get_string(std::istream& is, std::size_t n, const std::string& file) {
    std::string s(n, '\0');
    if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
        throw std::runtime_error(file + ": truncated checkpoint string");
    }
    return s;
}

constexpr char kMagic[8] = {'C', 'O', 'A', 'T', 'C', 'K', 'P', 'T'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        os.write(kMagic, sizeof(kMagic));
        put<std::uint32_t>(os, kCheckpointVersion);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.size()));
        for (const auto& e : ckpt.params) {
            put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
            os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
            put<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.shape.size()));
            for (auto d : e.value.shape) put<std::int64_t>(os, d);
            for (double v : e.value.data) put<double>(os, v);
        }
        const std::string meta = ckpt.meta.dump();
        put<std::uint64_t>(os, meta.size());
        os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
        if (!os.flush()) throw std::runtime_error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string file = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + file);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error(file + ": not a checkpoint");
    const auto version = get<std::uint32_t>(is, file);
    if (version != kCheckpointVersion) {
        throw std::runtime_error(file + ": unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    const auto count = get<std::uint32_t>(is, file);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(is, get<std::uint32_t>(is, file), file);
        const auto rank = get<std::uint32_t>(is, file);
        if (rank > 8) throw std::runtime_error(file + ": implausible rank for '" + name + "'");
        Shape shape(rank);
        for (auto& d : shape) d = get<std::int64_t>(is, file);
        Array a(shape);
        for (double& v : a.data) v = get<double>(is, file);
        ck.params.add(std::move(name), std::move(a));
    }
    const auto meta_len = get<std::uint64_t>(is, file);
    ck.meta = nlohmann::json::parse(get_string(is, meta_len, file));
    return ck;
}

ParamSet extract_prefixed(const ParamSet& all, const std::string& prefix) {
    ParamSet out;
    for (const auto& e : all) {
        if (e.name.rfind(prefix, 0) == 0) out.add(e.name.substr(prefix.size()), e.value);
    }
    return out;
}

void insert_prefixed(ParamSet& all, const ParamSet& part, const std::string& prefix) {
    for (const auto& e : part) all.add(prefix + e.name, e.value);
}

}  // namespace coat
