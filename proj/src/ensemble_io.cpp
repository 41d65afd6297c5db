#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "bsdelab/errors.hpp"
#include "bsdelab/forward.hpp"

namespace bsdelab {

namespace {

constexpr char kMagic[8] = {'B', 'S', 'D', 'E', 'E', 'N', 'S', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagReflected = 1u;
constexpr std::uint32_t kFlagLocalTime = 2u;
constexpr std::uint32_t kFlagTau = 4u;

template <class T>
void put(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) throw ConfigError("ensemble file is truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    } else {
        for (double d : v) put(out, d);
    }
}

void get_doubles(std::istream& in, std::vector<double>& v, std::size_t count) {
    v.resize(count);
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw ConfigError("ensemble file is truncated");
    } else {
        for (auto& d : v) d = get<double>(in);
    }
}

}  // namespace

void write_ensemble(std::ostream& out, const PathEnsemble& ens) {
    out.write(kMagic, sizeof(kMagic));
    std::uint32_t flags = 0;
    if (ens.reflected) flags |= kFlagReflected;
    if (ens.has_local_time()) flags |= kFlagLocalTime;
    if (ens.has_tau()) flags |= kFlagTau;
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ens.state_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ens.noise_dim));
    put<std::uint32_t>(out, flags);
    put<std::uint64_t>(out, ens.paths);
    put<std::uint64_t>(out, ens.seed);
    put<std::uint64_t>(out, ens.grid.nodes().size());
    put_doubles(out, ens.grid.nodes());
    put_doubles(out, ens.dW);
    put_doubles(out, ens.X);
    if (ens.has_local_time()) put_doubles(out, ens.L);
    if (ens.has_tau()) {
        for (int t : ens.tau) put<std::int32_t>(out, t);
        put_doubles(out, ens.exit_point);
    }
    if (!out) throw std::runtime_error("failed to write ensemble");
}

PathEnsemble read_ensemble(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ConfigError("not an ensemble file (bad magic)");
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion) throw ConfigError("unsupported ensemble file version " + std::to_string(version));
    PathEnsemble ens;
    ens.state_dim = static_cast<int>(get<std::uint32_t>(in));
    ens.noise_dim = static_cast<int>(get<std::uint32_t>(in));
    const auto flags = get<std::uint32_t>(in);
    ens.paths = get<std::uint64_t>(in);
    ens.seed = get<std::uint64_t>(in);
    const auto node_count = get<std::uint64_t>(in);
    if (ens.state_dim < 1 || ens.noise_dim < 1 || node_count < 2 || node_count > (1u << 26) || ens.paths > (1ull << 40)) {
        throw ConfigError("ensemble header is inconsistent");
    }
    std::vector<double> nodes;
    get_doubles(in, nodes, node_count);
    ens.grid = TimeGrid::from_nodes(std::move(nodes));
    const std::size_t steps = node_count - 1;
    ens.reflected = (flags & kFlagReflected) != 0;
    get_doubles(in, ens.dW, ens.paths * steps * static_cast<std::size_t>(ens.noise_dim));
    get_doubles(in, ens.X, ens.paths * node_count * static_cast<std::size_t>(ens.state_dim));
    if (flags & kFlagLocalTime) get_doubles(in, ens.L, ens.paths * node_count);
    if (flags & kFlagTau) {
        ens.tau.resize(ens.paths);
        for (auto& t : ens.tau) t = get<std::int32_t>(in);
        get_doubles(in, ens.exit_point, ens.paths * static_cast<std::size_t>(ens.state_dim));
    }
    return ens;
}

void save_ensemble(const std::string& path, const PathEnsemble& ens) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_ensemble(out, ens);
}

PathEnsemble load_ensemble(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    return read_ensemble(in);
}

}  // namespace bsdelab
