#pragma once

#include <cstring>
#include <fstream>

#include "seqlab/tensor.hpp"

namespace seqlab {

/// Versioned binary container of named parameter tensors plus a config echo.
/// Layout: magic "SQLB", u32 version, u8 dtype size, u64 config length +
/// bytes, u64 tensor count, then per tensor: u64 name length + bytes, u8 ndim,
/// i64 extents, raw row-major payload. Round-trips bit-exactly.
namespace checkpoint {

constexpr char kMagic[4] = {'S', 'Q', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

namespace detail {
template <class V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V read_pod(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    require(static_cast<bool>(is), "checkpoint: truncated file");
    return v;
}
inline void write_string(std::ostream& os, const std::string& s) {
    write_pod(os, static_cast<std::uint64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_string(std::istream& is) {
    auto n = read_pod<std::uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    require(static_cast<bool>(is), "checkpoint: truncated file");
    return s;
}
}  // namespace detail

template <class T>
void save(const std::string& path, const std::string& config_echo,
          const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), "checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    detail::write_pod(os, kVersion);
    detail::write_pod(os, static_cast<std::uint8_t>(sizeof(T)));
    detail::write_string(os, config_echo);
    detail::write_pod(os, static_cast<std::uint64_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_string(os, name);
        detail::write_pod(os, static_cast<std::uint8_t>(t->ndim()));
        for (auto d : t->shape) detail::write_pod(os, d);
        os.write(reinterpret_cast<const char*>(t->data.data()),
                 static_cast<std::streamsize>(t->data.size() * sizeof(T)));
    }
    require(static_cast<bool>(os), "checkpoint: write failed");
}

template <class T>
std::string load(const std::string& path,
                 std::vector<std::pair<std::string, Tensor<T>>>& tensors_out) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), "checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    require(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
            "checkpoint: bad magic");
    require(detail::read_pod<std::uint32_t>(is) == kVersion, "checkpoint: unsupported version");
    require(detail::read_pod<std::uint8_t>(is) == sizeof(T), "checkpoint: dtype mismatch");
    std::string config_echo = detail::read_string(is);
    auto count = detail::read_pod<std::uint64_t>(is);
    tensors_out.clear();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = detail::read_string(is);
        auto ndim = detail::read_pod<std::uint8_t>(is);
        Shape shape;
        for (std::uint8_t d = 0; d < ndim; ++d) shape.push_back(detail::read_pod<std::int64_t>(is));
        Tensor<T> t(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(T)));
        require(static_cast<bool>(is), "checkpoint: truncated tensor payload");
        tensors_out.emplace_back(std::move(name), std::move(t));
    }
    return config_echo;
}

}  // namespace checkpoint
}  // namespace seqlab
