// SPDX-License-Identifier: Apache-2.0

#include "mfpn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <spdlog/spdlog.h>

namespace mfpn {

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T number(std::string_view s, int line, const std::string& key) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ConfigError(line, key, "expected a number, got '" + std::string(s) + "'");
    }
    return v;
}

std::vector<int> int_list(std::string_view s, int line, const std::string& key) {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = std::min(s.find(',', pos), s.size());
        out.push_back(number<int>(trim(s.substr(pos, comma - pos)), line, key));
        pos = comma + 1;
    }
    return out;
}

std::string join(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        s += (i ? "," : "") + std::to_string(xs[i]);
    }
    return s;
}

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, std::string_view, int)> read;
    std::function<std::string(const ExperimentConfig&)> write;
};

template <typename T>
Field num_field(const char* key, T ExperimentConfig::*member) {
    return {key, [key, member](ExperimentConfig& c, std::string_view v, int line) { c.*member = number<T>(v, line, key); },
            [member](const ExperimentConfig& c) {
                if constexpr (std::is_floating_point_v<T>) {
                    return shortest(c.*member);
                } else {
                    return std::to_string(c.*member);
                }
            }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"builder",
         [](ExperimentConfig& c, std::string_view v, int line) {
             try {
                 c.builder = parse_builder_kind(v);
             } catch (const std::invalid_argument& e) {
                 throw ConfigError(line, "builder", e.what());
             }
         },
         [](const ExperimentConfig& c) { return std::string(to_string(c.builder)); }},
        {"fpn.min_level", [](ExperimentConfig& c, std::string_view v, int line) { c.fpn.min_level = number<int>(v, line, "fpn.min_level"); },
         [](const ExperimentConfig& c) { return std::to_string(c.fpn.min_level); }},
        {"fpn.max_level", [](ExperimentConfig& c, std::string_view v, int line) { c.fpn.max_level = number<int>(v, line, "fpn.max_level"); },
         [](const ExperimentConfig& c) { return std::to_string(c.fpn.max_level); }},
        {"fpn.channels", [](ExperimentConfig& c, std::string_view v, int line) { c.fpn.channels = number<int>(v, line, "fpn.channels"); },
         [](const ExperimentConfig& c) { return std::to_string(c.fpn.channels); }},
        {"fpn.backbone_channels",
         [](ExperimentConfig& c, std::string_view v, int line) {
             c.fpn.backbone_channels = int_list(v, line, "fpn.backbone_channels");
         },
         [](const ExperimentConfig& c) { return join(c.fpn.backbone_channels); }},
        {"fpn.extra_levels",
         [](ExperimentConfig& c, std::string_view v, int line) {
             try {
                 c.fpn.extra_levels = parse_extra_levels(v);
             } catch (const std::invalid_argument& e) {
                 throw ConfigError(line, "fpn.extra_levels", e.what());
             }
         },
         [](const ExperimentConfig& c) { return std::string(to_string(c.fpn.extra_levels)); }},
        {"backbone.image_channels",
         [](ExperimentConfig& c, std::string_view v, int line) {
             c.backbone.image_channels = number<int>(v, line, "backbone.image_channels");
             c.scene.channels = c.backbone.image_channels;
         },
         [](const ExperimentConfig& c) { return std::to_string(c.backbone.image_channels); }},
        {"backbone.widths",
         [](ExperimentConfig& c, std::string_view v, int line) { c.backbone.widths = int_list(v, line, "backbone.widths"); },
         [](const ExperimentConfig& c) { return join(c.backbone.widths); }},
        {"scene.image_size", [](ExperimentConfig& c, std::string_view v, int line) { c.scene.image_size = number<int>(v, line, "scene.image_size"); },
         [](const ExperimentConfig& c) { return std::to_string(c.scene.image_size); }},
        {"scene.small", [](ExperimentConfig& c, std::string_view v, int line) { c.scene.small = number<int>(v, line, "scene.small"); },
         [](const ExperimentConfig& c) { return std::to_string(c.scene.small); }},
        {"scene.medium", [](ExperimentConfig& c, std::string_view v, int line) { c.scene.medium = number<int>(v, line, "scene.medium"); },
         [](const ExperimentConfig& c) { return std::to_string(c.scene.medium); }},
        {"scene.large", [](ExperimentConfig& c, std::string_view v, int line) { c.scene.large = number<int>(v, line, "scene.large"); },
         [](const ExperimentConfig& c) { return std::to_string(c.scene.large); }},
        {"scene.noise", [](ExperimentConfig& c, std::string_view v, int line) { c.scene.noise = number<double>(v, line, "scene.noise"); },
         [](const ExperimentConfig& c) { return shortest(c.scene.noise); }},
        num_field("train.lr", &ExperimentConfig::lr),
        num_field("train.epochs", &ExperimentConfig::epochs),
        num_field("train.scenes_per_epoch", &ExperimentConfig::scenes_per_epoch),
        num_field("train.seed", &ExperimentConfig::seed),
        num_field("eval.scenes", &ExperimentConfig::eval_scenes),
        num_field("eval.seed", &ExperimentConfig::eval_seed),
        {"out_dir", [](ExperimentConfig& c, std::string_view v, int) { c.out_dir = std::string(v); },
         [](const ExperimentConfig& c) { return c.out_dir; }},
    };
    return table;
}

void check(bool ok, const char* field, const std::string& message) {
    if (!ok) {
        throw ConfigError(0, field, message);
    }
}

}  // namespace

ConfigError::ConfigError(int line, std::string field, const std::string& message)
    : std::runtime_error((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) +
                         (field.empty() ? std::string() : "field '" + field + "': ") + message),
      line_(line),
      field_(std::move(field)) {}

void ExperimentConfig::validate() const {
    check(fpn.channels >= 1, "fpn.channels", "must be >= 1");
    try {
        fpn.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(0, "fpn", e.what());
    }
    try {
        backbone.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(0, "backbone", e.what());
    }
    try {
        scene.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(0, "scene", e.what());
    }
    check(scene.channels == backbone.image_channels, "backbone.image_channels", "scene and backbone channels differ");
    check(lr >= 0.0 && lr < 1e6, "train.lr", "must be finite and >= 0");
    check(epochs >= 0, "train.epochs", "must be >= 0");
    check(scenes_per_epoch >= 1, "train.scenes_per_epoch", "must be >= 1");
    check(eval_scenes >= 1, "eval.scenes", "must be >= 1");
    check(!out_dir.empty(), "out_dir", "must not be empty");
}

ModelConfig ExperimentConfig::model_config() const {
    check(fpn.min_level == kBackboneMinLevel && fpn.max_level == kBackboneMaxLevel &&
              fpn.extra_levels == ExtraLevels::off,
          "fpn", "the toy model uses levels 2..5 without extra levels");
    ModelConfig m;
    m.kind = builder;
    m.channels = fpn.channels;
    m.backbone = backbone;
    m.scene = scene;
    return m;
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig cfg;
    std::set<std::string, std::less<>> seen;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = std::min(text.find('\n', pos), text.size());
        const std::string_view line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) {
            throw ConfigError(line_no, "", "expected 'key: value', got '" + std::string(line) + "'");
        }
        const std::string key(trim(line.substr(0, colon)));
        const std::string_view value = trim(line.substr(colon + 1));
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
        if (it == table.end()) {
            throw ConfigError(line_no, key, "unknown key");
        }
        if (!seen.insert(key).second) {
            throw ConfigError(line_no, key, "duplicate key");
        }
        it->read(cfg, value, line_no);
    }
    cfg.validate();
    return cfg;
}

std::string write_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const Field& f : fields()) {
        out += std::string(f.key) + ": " + f.write(cfg) + "\n";
    }
    return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read config " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    ExperimentConfig cfg = parse_config(text.str());
    spdlog::info("config {}:\n{}", path.string(), write_config(cfg));
    return cfg;
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    out << write_config(cfg);
    if (!out) {
        throw std::runtime_error("cannot write config " + path.string());
    }
}

}  // namespace mfpn
