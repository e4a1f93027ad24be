// SPDX-License-Identifier: Apache-2.0

#include "mfpn/weight_file.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace mfpn {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'F', 'P', 'W'};

template <typename U>
void put_le(std::ostream& out, U v) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    }
    out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
    std::array<unsigned char, sizeof(U)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!in) {
        throw std::runtime_error(std::string("weight file truncated while reading ") + what);
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(bytes[i]) << (8 * i);
    }
    return v;
}

}  // namespace

void write_arrays(std::ostream& out, const std::vector<NamedArray>& arrays) {
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kWeightFormatVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
    for (const NamedArray& a : arrays) {
        std::int64_t expected = 1;
        for (std::int64_t d : a.dims) {
            expected *= d;
        }
        if (expected != static_cast<std::int64_t>(a.values.size())) {
            throw std::invalid_argument("array '" + a.name + "' dims do not match its value count");
        }
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
        out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
        for (std::int64_t d : a.dims) {
            put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        }
        for (double v : a.values) {
            put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    if (!out) {
        throw std::runtime_error("failed writing weight data");
    }
}

std::vector<NamedArray> read_arrays(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) {
        throw std::runtime_error("not a weight file (bad magic)");
    }
    const auto version = get_le<std::uint32_t>(in, "version");
    if (version != kWeightFormatVersion) {
        throw std::runtime_error("unsupported weight file version " + std::to_string(version));
    }
    const auto count = get_le<std::uint32_t>(in, "entry count");
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (std::uint32_t e = 0; e < count; ++e) {
        NamedArray a;
        const auto name_len = get_le<std::uint32_t>(in, "name length");
        a.name.resize(name_len);
        in.read(a.name.data(), name_len);
        if (!in) {
            throw std::runtime_error("weight file truncated while reading a name");
        }
        const auto rank = get_le<std::uint32_t>(in, "rank");
        std::uint64_t total = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = get_le<std::uint64_t>(in, "dims");
            if (d == 0 || d > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max())) {
                throw std::runtime_error("implausible dimension in entry '" + a.name + "'");
            }
            a.dims.push_back(static_cast<std::int64_t>(d));
            total *= d;
        }
        a.values.reserve(total);
        for (std::uint64_t i = 0; i < total; ++i) {
            a.values.push_back(std::bit_cast<double>(get_le<std::uint64_t>(in, "values")));
        }
        arrays.push_back(std::move(a));
    }
    return arrays;
}

void write_weights(std::ostream& out, const WeightStore& store) {
    std::vector<NamedArray> arrays;
    arrays.reserve(store.size());
    for (const auto& [name, p] : store) {
        const auto v = p.tensor.values();
        arrays.push_back(NamedArray{name, p.dims, std::vector<double>(v.begin(), v.end())});
    }
    write_arrays(out, arrays);
}

void save_weights(const std::filesystem::path& path, const WeightStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_weights(out, store);
}

WeightStore read_weights(std::istream& in) {
    WeightStore store;
    for (NamedArray& a : read_arrays(in)) {
        Parameter& p = store.add(a.name, a.dims);
        auto dst = p.tensor.mutable_values();
        std::copy(a.values.begin(), a.values.end(), dst.begin());
    }
    return store;
}

WeightStore load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return read_weights(in);
}

void load_weights_into(const std::filesystem::path& path, WeightStore& store) {
    WeightStore loaded = load_weights(path);
    if (loaded.size() != store.size()) {
        throw std::runtime_error(path.string() + ": expected " + std::to_string(store.size()) +
                                 " entries, found " + std::to_string(loaded.size()));
    }
    for (auto& [name, p] : store) {
        if (!loaded.contains(name)) {
            throw std::runtime_error(path.string() + ": missing entry " + name);
        }
        const Parameter& src = loaded.at(name);
        if (src.dims != p.dims) {
            throw std::runtime_error(path.string() + ": shape mismatch for " + name);
        }
        const auto v = src.tensor.values();
        std::copy(v.begin(), v.end(), p.tensor.mutable_values().begin());
    }
}

}  // namespace mfpn
