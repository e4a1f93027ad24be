// SPDX-License-Identifier: Apache-2.0

#include "mfpn/heatmap.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mfpn {

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <typename T>
T parse_field(const std::string& s, int line_no) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("heatmap csv line " + std::to_string(line_no) + ": bad field '" + s + "'");
    }
    return v;
}

}  // namespace

Heatmap reduce_heatmap(const Tensor& map, int level) {
    const Shape s = map.shape();
    Heatmap hm;
    hm.level = level;
    hm.height = static_cast<int>(s.h);
    hm.width = static_cast<int>(s.w);
    hm.values.assign(static_cast<std::size_t>(s.plane()), 0.0);
    const auto v = map.values();
    for (std::int64_t c = 0; c < s.c; ++c) {
        for (std::int64_t p = 0; p < s.plane(); ++p) {
            hm.values[static_cast<std::size_t>(p)] += std::abs(v[static_cast<std::size_t>(c * s.plane() + p)]);
        }
    }
    for (double& x : hm.values) {
        x /= static_cast<double>(s.c);
    }
    return hm;
}

std::vector<std::uint8_t> to_gray(const std::vector<double>& values) {
    std::vector<std::uint8_t> out(values.size(), kConstantGray);
    if (values.empty()) {
        return out;
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) {
        return out;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double t = (values[i] - *lo) / range;
        out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(t * 255.0), 0L, 255L));
    }
    return out;
}

void write_pgm(std::ostream& out, const Heatmap& map) {
    out << "P5\n" << map.width << " " << map.height << "\n255\n";
    const std::vector<std::uint8_t> px = to_gray(map.values);
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_heatmap_csv(std::ostream& out, const Heatmap& map) {
    out << "level,y,x,value\n";
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            out << map.level << ',' << y << ',' << x << ','
                << shortest(map.values[static_cast<std::size_t>(y * map.width + x)]) << '\n';
        }
    }
}

Heatmap read_heatmap_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "level,y,x,value") {
        throw std::runtime_error("heatmap csv: missing header");
    }
    struct Cell {
        int y, x;
        double v;
    };
    std::vector<Cell> cells;
    Heatmap hm;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string f[4];
        for (int i = 0; i < 4; ++i) {
            if (!std::getline(ls, f[i], ',')) {
                throw std::runtime_error("heatmap csv line " + std::to_string(line_no) + ": expected 4 fields");
            }
        }
        const int level = parse_field<int>(f[0], line_no);
        if (cells.empty()) {
            hm.level = level;
        } else if (level != hm.level) {
            throw std::runtime_error("heatmap csv line " + std::to_string(line_no) + ": mixed levels");
        }
        cells.push_back({parse_field<int>(f[1], line_no), parse_field<int>(f[2], line_no),
                         parse_field<double>(f[3], line_no)});
        hm.height = std::max(hm.height, cells.back().y + 1);
        hm.width = std::max(hm.width, cells.back().x + 1);
    }
    hm.values.assign(static_cast<std::size_t>(hm.height) * static_cast<std::size_t>(hm.width), 0.0);
    for (const Cell& c : cells) {
        hm.values[static_cast<std::size_t>(c.y * hm.width + c.x)] = c.v;
    }
    return hm;
}

std::vector<std::filesystem::path> export_heatmap(const PyramidSet& pyramid, const std::filesystem::path& prefix) {
    std::vector<std::filesystem::path> written;
    for (const auto& [level, map] : pyramid.maps) {
        const Heatmap hm = reduce_heatmap(map, level);
        const std::string stem = prefix.string() + "_L" + std::to_string(level);
        const std::filesystem::path pgm = stem + ".pgm";
        const std::filesystem::path csv = stem + ".csv";
        std::ofstream p(pgm, std::ios::binary);
        write_pgm(p, hm);
        std::ofstream c(csv, std::ios::binary);
        write_heatmap_csv(c, hm);
        if (!p || !c) {
            throw std::runtime_error("cannot write heatmap files under " + stem);
        }
        written.push_back(pgm);
        written.push_back(csv);
    }
    return written;
}

}  // namespace mfpn
