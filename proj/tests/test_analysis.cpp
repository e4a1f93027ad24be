// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mfpn/analysis.hpp"
#include "mfpn/heatmap.hpp"
#include "mfpn/ops.hpp"
#include "support.hpp"

using namespace mfpn;

namespace {

// Hand count straight from conv shapes, independent of pyramid_param_specs.
std::int64_t conv_count(std::int64_t c_out, std::int64_t c_in, std::int64_t k) {
    return c_out * c_in * k * k + c_out;
}

FpnConfig random_config(std::mt19937_64& rng, bool four_backbone_levels) {
    std::uniform_int_distribution<int> ch(1, 64);
    FpnConfig cfg;
    cfg.min_level = four_backbone_levels ? 2 : std::uniform_int_distribution<int>(2, 3)(rng);
    const int n = four_backbone_levels ? 4 : std::uniform_int_distribution<int>(2, 5)(rng);
    cfg.max_level = cfg.min_level + n - 1;
    cfg.channels = ch(rng);
    cfg.backbone_channels.clear();
    for (int i = 0; i < n; ++i) cfg.backbone_channels.push_back(ch(rng));
    if (rng() % 2 == 0) {
        cfg.extra_levels = ExtraLevels::strided_conv;
        cfg.max_level += std::uniform_int_distribution<int>(0, 2)(rng);
    }
    return cfg;
}

}  // namespace

TEST_CASE("single-channel top-down count") {
    FpnConfig cfg;
    cfg.channels = 1;
    cfg.backbone_channels = {1, 1, 1, 1};
    const ParamReport r = count_params(cfg, BuilderKind::top_down);
    CHECK(r.total == 48);
    CHECK(r.subtotal("laterals") == 8);
    CHECK(r.subtotal("td") == 40);
}

TEST_CASE("retinanet baseline preset") {
    const FpnConfig cfg = retinanet_fpn_preset();
    CHECK(cfg.levels() == std::vector<int>{3, 4, 5, 6, 7});
    CHECK(cfg.channels == 256);
    const ParamReport r = count_params(cfg, BuilderKind::fpn);
    const std::int64_t hand = conv_count(256, 512, 1) + conv_count(256, 1024, 1) + conv_count(256, 2048, 1) +
                              3 * conv_count(256, 256, 3) + conv_count(256, 2048, 3) + conv_count(256, 256, 3);
    CHECK(hand == 7997440);
    CHECK(r.total == hand);
    CHECK(std::abs(static_cast<double>(r.total) - 8.0e6) <= 0.05 * 8.0e6);
    CHECK(r.subtotal("extra") == conv_count(256, 2048, 3) + conv_count(256, 256, 3));
}

TEST_CASE("report totals equal row sums") {
    for (BuilderKind kind : kAllBuilders) {
        const ParamReport r = count_params(resnet50_pyramid_preset(), kind);
        std::int64_t rows = 0;
        for (const ParamRow& row : r.rows) {
            std::int64_t prod = 1;
            for (auto d : row.dims) prod *= d;
            CHECK(row.count == prod);
            rows += row.count;
        }
        std::int64_t subs = 0;
        for (const auto& [k, v] : r.subtotals) subs += v;
        CHECK(r.total == rows);
        CHECK(r.total == subs);
        const auto j = r.to_json();
        CHECK(j["total"].get<std::int64_t>() == r.total);
        CHECK(r.to_text().find(std::to_string(r.total)) != std::string::npos);
    }
}

TEST_CASE("resnet50 four-level preset counts") {
    const FpnConfig cfg = resnet50_pyramid_preset();
    const std::int64_t lat = conv_count(256, 256, 1) + conv_count(256, 512, 1) + conv_count(256, 1024, 1) +
                             conv_count(256, 2048, 1);
    CHECK(lat == 984064);
    CHECK(count_params(cfg, BuilderKind::top_down).total == lat + 4 * conv_count(256, 256, 3));
    CHECK(count_params(cfg, BuilderKind::top_down).total == 3344384);
    CHECK(count_params(cfg, BuilderKind::fusing_splitting).total == lat + 2 * conv_count(256, 512, 3));
    CHECK(count_params(cfg, BuilderKind::mfpn).total == 8064512);
}

TEST_CASE("count identities on random configs") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const FpnConfig any = random_config(rng, false);
        REQUIRE_NOTHROW(any.validate());
        CHECK(count_params(any, BuilderKind::top_down).total == count_params(any, BuilderKind::bottom_up).total);

        const FpnConfig four = random_config(rng, true);
        const auto td = count_params(four, BuilderKind::top_down);
        const auto bu = count_params(four, BuilderKind::bottom_up);
        const auto fs = count_params(four, BuilderKind::fusing_splitting);
        const auto mf = count_params(four, BuilderKind::mfpn);
        CHECK(td.total == bu.total);
        CHECK(fs.total < td.total);
        CHECK(mf.total < td.total + bu.total + fs.total);
        // laterals and extra-level convs form the shared stem, counted once
        const std::int64_t stem = td.subtotal("laterals") + td.subtotal("extra");
        CHECK(mf.total == td.total + bu.total + fs.total - 2 * stem);
        if (four.extra_levels == ExtraLevels::off) {
            CHECK(mf.total == td.total + bu.total + fs.total - 2 * td.subtotal("laterals"));
        }
    }
}

TEST_CASE("count ordering under the four-level resnet preset") {
    const FpnConfig cfg = resnet50_pyramid_preset();
    const auto fs = count_params(cfg, BuilderKind::fusing_splitting).total;
    const auto td = count_params(cfg, BuilderKind::top_down).total;
    const auto bu = count_params(cfg, BuilderKind::bottom_up).total;
    const auto mf = count_params(cfg, BuilderKind::mfpn).total;
    CHECK(fs < td);
    CHECK(td == bu);
    CHECK(bu < mf);
}

TEST_CASE("count_params is config-pure") {
    const FpnConfig cfg = resnet50_pyramid_preset(ExtraLevels::strided_conv);
    const ParamReport a = count_params(cfg, BuilderKind::mfpn);
    const ParamReport b = count_params(cfg, BuilderKind::mfpn);
    CHECK(a.to_text() == b.to_text());
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("reconciliation report lists every builder") {
    const std::string rep = parameter_reconciliation_report();
    for (const char* name : {"fpn", "top_down", "bottom_up", "fusing_splitting", "mfpn", "8.00", "8.52", "6.49", "11.47"})
        CHECK(rep.find(name) != std::string::npos);
}

TEST_CASE("flow matrix text and csv") {
    FpnConfig cfg;
    cfg.channels = 2;
    cfg.backbone_channels = {2, 2, 2, 2};
    const FlowMatrix fm = flow_matrix(BuilderKind::top_down, cfg, 0);
    CHECK(fm.output_levels == std::vector<int>{2, 3, 4, 5});
    const std::string csv = fm.to_csv();
    CHECK(csv.rfind("output_level", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 16);
    CHECK_FALSE(fm.to_text().empty());
    CHECK(flow_matrix(BuilderKind::top_down, cfg, 0).to_csv() == csv);
}

TEST_CASE("grad_check rejects a non-scalar loss") {
    Tensor x = test::random_tensor(Shape{1, 1, 2, 2}, 1);
    x.set_requires_grad(true);
    CHECK_THROWS_AS(grad_check([&](Graph& g) { return scale(g, x, 2.0); }, {{"x", x}}, 1e-5),
                    std::invalid_argument);
}

TEST_CASE("grad_check passes for a zero network") {
    Tensor w(Shape{1, 1, 3, 3});
    Tensor b(Shape{1, 1, 1, 1});
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    const Tensor x = test::random_tensor(Shape{1, 1, 4, 4}, 2);
    const GradCheckReport r =
        grad_check([&](Graph& g) { return sum_squares(g, conv2d(g, x, w, b)); }, {{"w", w}, {"b", b}}, 1e-5);
    CHECK(r.passed());
    CHECK(r.worst() == 0.0);
}

// ---- heatmaps -----------------------------------------------------------

TEST_CASE("min-max gray mapping") {
    CHECK(to_gray({0, 1, 2, 3}) == std::vector<std::uint8_t>{0, 85, 170, 255});
    CHECK(to_gray({5, 5, 5}) == std::vector<std::uint8_t>{kConstantGray, kConstantGray, kConstantGray});
    CHECK(to_gray({-1, 1}) == std::vector<std::uint8_t>{0, 255});
}

TEST_CASE("channel reduction is mean absolute value") {
    Tensor t(Shape{1, 2, 1, 2}, std::vector<double>{1, -3, -1, 5});
    const Heatmap h = reduce_heatmap(t, 3);
    CHECK(h.level == 3);
    CHECK(h.height == 1);
    CHECK(h.width == 2);
    CHECK(h.values == std::vector<double>{1, 4});
}

TEST_CASE("pgm layout") {
    Heatmap h{2, 2, 2, {0, 1, 2, 3}};
    std::ostringstream os;
    write_pgm(os, h);
    const std::string s = os.str();
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(s.size() == header.size() + 4);
    CHECK(s.substr(0, header.size()) == header);
    CHECK(static_cast<unsigned char>(s[header.size() + 0]) == 0);
    CHECK(static_cast<unsigned char>(s[header.size() + 1]) == 85);
    CHECK(static_cast<unsigned char>(s[header.size() + 2]) == 170);
    CHECK(static_cast<unsigned char>(s[header.size() + 3]) == 255);
}

TEST_CASE("csv round trip keeps full precision") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-1e3, 1e3);
    Heatmap h{4, 3, 5, {}};
    for (int i = 0; i < 15; ++i) h.values.push_back(d(rng));
    h.values[0] = 0.1;
    h.values[1] = 1e-300;
    std::stringstream ss;
    write_heatmap_csv(ss, h);
    CHECK(ss.str().rfind("level,y,x,value\n", 0) == 0);
    const Heatmap back = read_heatmap_csv(ss);
    CHECK(back.level == 4);
    CHECK(back.height == 3);
    CHECK(back.width == 5);
    CHECK(back.values == h.values);
    std::stringstream bad("level,y,x,value\n4,0,0,abc\n");
    CHECK_THROWS(read_heatmap_csv(bad));
}

TEST_CASE("export writes one file pair per level, byte-stable") {
    PyramidSet p;
    p.kind = BuilderKind::top_down;
    p.maps[2] = test::random_tensor(Shape{1, 3, 8, 8}, 1);
    p.maps[3] = Tensor(Shape{1, 3, 4, 4}, 2.5);
    const auto dir = test::scratch_dir("heatmap");
    const auto paths = export_heatmap(p, dir / "td");
    REQUIRE(paths.size() == 4);
    CHECK(std::filesystem::exists(dir / "td_L2.pgm"));
    CHECK(std::filesystem::exists(dir / "td_L3.csv"));
    const std::string l3 = test::slurp(dir / "td_L3.pgm");
    CHECK(l3.substr(l3.size() - 16) == std::string(16, static_cast<char>(kConstantGray)));
    std::vector<std::string> first;
    for (const auto& path : paths) first.push_back(test::slurp(path));
    export_heatmap(p, dir / "td");
    for (std::size_t i = 0; i < paths.size(); ++i) CHECK(test::slurp(paths[i]) == first[i]);
    CHECK_THROWS_AS(export_heatmap(p, dir / "missing" / "sub" / "td"), std::runtime_error);
}
