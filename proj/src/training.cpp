// SPDX-License-Identifier: Apache-2.0

#include "mfpn/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mfpn/ops.hpp"
#include "mfpn/weight_file.hpp"

namespace mfpn {

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view s, const std::string& what) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("train state: bad " + what + " '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace

SceneSpec default_training_scene() {
    SceneSpec spec;
    spec.image_size = 256;
    return spec;
}

FpnConfig ModelConfig::fpn_config() const {
    FpnConfig cfg;
    cfg.min_level = kBackboneMinLevel;
    cfg.max_level = kBackboneMaxLevel;
    cfg.channels = channels;
    cfg.backbone_channels = backbone.widths;
    cfg.extra_levels = ExtraLevels::off;
    return cfg;
}

void ModelConfig::validate() const {
    backbone.validate();
    scene.validate();
    fpn_config().validate();
    if (backbone.image_channels != scene.channels) {
        throw std::invalid_argument("backbone.image_channels must equal scene channels");
    }
}

void add_head_weights(WeightStore& store, int channels) { add_conv(store, "head", 1, channels, 1); }

void add_model_weights(WeightStore& store, const ModelConfig& cfg) {
    cfg.validate();
    add_backbone_weights(store, cfg.backbone);
    add_pyramid_weights(store, cfg.fpn_config(), cfg.kind);
    add_head_weights(store, cfg.channels);
}

LevelMap head_forward(Graph& g, const PyramidSet& pyramid, const WeightStore& weights) {
    const ConvWeights head = conv_weights(weights, "head");
    const std::int64_t c_in = head.weight.shape().c;
    LevelMap out;
    for (const auto& [level, map] : pyramid.maps) {
        if (map.shape().c != c_in) {
            throw std::invalid_argument("head expects " + std::to_string(c_in) + " channels, level " +
                                        std::to_string(level) + " has " + std::to_string(map.shape().c));
        }
        out[level] = sigmoid(g, conv2d(g, map, head.weight, head.bias));
    }
    return out;
}

LevelMap model_forward(Graph& g, const ModelConfig& cfg, const WeightStore& weights, const Tensor& image) {
    const FpnConfig fpn = cfg.fpn_config();
    const BackboneFeatures raw = synth_backbone_forward(g, image, cfg.backbone, weights);
    const BackboneFeatures feats = apply_laterals(g, raw, fpn, weights);
    return head_forward(g, build_pyramid(g, cfg.kind, feats, fpn, weights), weights);
}

double positive_weight(const Tensor& target) {
    std::int64_t pos = 0;
    for (double t : target.values()) {
        pos += t >= kPositiveTarget ? 1 : 0;
    }
    if (pos == 0) {
        return 1.0;
    }
    const double ratio = static_cast<double>(target.numel() - pos) / static_cast<double>(pos);
    return std::clamp(ratio, 1.0, 100.0);
}

Tensor detection_loss(Graph& g, const LevelMap& pred, const LevelMap& target) {
    if (pred.size() != target.size() || pred.empty()) {
        throw std::invalid_argument("detection_loss: prediction and target levels differ");
    }
    std::vector<Tensor> terms;
    double total_weight = 0.0;
    for (const auto& [level, p] : pred) {
        auto it = target.find(level);
        if (it == target.end()) {
            throw std::invalid_argument("detection_loss: no target for level " + std::to_string(level));
        }
        const Tensor& t = it->second;
        if (!(p.shape() == t.shape())) {
            throw std::invalid_argument("detection_loss: level " + std::to_string(level) + " prediction " +
                                        p.shape().str() + " vs target " + t.shape().str());
        }
        const double pw = positive_weight(t);
        Tensor w(t.shape());
        auto wv = w.mutable_values();
        const auto tv = t.values();
        for (std::size_t k = 0; k < wv.size(); ++k) {
            wv[k] = tv[k] >= kPositiveTarget ? pw : 1.0;
            total_weight += wv[k];
        }
        terms.push_back(weighted_bce_sum(g, p, t, w));
    }
    return scale(g, add(g, terms), 1.0 / total_weight);
}

TrainState make_train_state(const ModelConfig& cfg, double lr, std::uint64_t seed) {
    TrainState state;
    state.lr = lr;
    state.seed = seed;
    add_model_weights(state.weights, cfg);
    init_glorot_uniform(state.weights, seed);
    return state;
}

std::uint64_t scene_seed(std::uint64_t seed, std::int64_t step) {
    // splitmix64 finaliser over the pair
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(step) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double train_step(TrainState& state, const ModelConfig& cfg, const BlobScene& scene) {
    state.weights.zero_grad();
    Graph g;
    const Tensor loss = detection_loss(g, model_forward(g, cfg, state.weights, scene.image), scene.targets);
    const double value = loss.item();
    if (!std::isfinite(value)) {
        throw std::runtime_error("non-finite loss " + shortest(value) + " at step " + std::to_string(state.step) +
                                 " (scene seed " + std::to_string(scene.seed) + ")");
    }
    g.backward(loss);
    for (auto& [name, p] : state.weights) {
        if (!p.trainable || !p.tensor.has_grad()) {
            continue;
        }
        auto v = p.tensor.mutable_values();
        const auto grad = p.tensor.grad();
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] -= state.lr * grad[k];
        }
    }
    state.weights.zero_grad();
    state.losses.push_back(value);
    ++state.step;
    const std::size_t n = state.losses.size();
    const std::size_t w = std::min<std::size_t>(n, kRunningWindow);
    state.running_loss = window_mean(state.losses, n - w, w);
    return value;
}

void train_epoch(TrainState& state, const ModelConfig& cfg, int scenes) {
    if (!(state.lr >= 0.0)) {
        throw std::invalid_argument("learning rate must be >= 0");
    }
    if (scenes < 0) {
        throw std::invalid_argument("scene count must be >= 0");
    }
    cfg.validate();
    for (int k = 0; k < scenes; ++k) {
        train_step(state, cfg, generate_blob_scene(scene_seed(state.seed, state.step), cfg.scene));
    }
}

double window_mean(const std::vector<double>& losses, std::size_t begin, std::size_t count) {
    begin = std::min(begin, losses.size());
    const std::size_t end = std::min(losses.size(), begin + count);
    if (end == begin) {
        return 0.0;
    }
    return std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(begin),
                           losses.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
           static_cast<double>(end - begin);
}

void write_loss_csv(std::ostream& out, const std::vector<double>& losses, std::int64_t first_step) {
    out << "step,loss\n";
    for (std::size_t k = 0; k < losses.size(); ++k) {
        out << first_step + static_cast<std::int64_t>(k) << ',' << shortest(losses[k]) << '\n';
    }
}

void save_train_state(const std::filesystem::path& dir, const TrainState& state) {
    std::filesystem::create_directories(dir);
    save_weights(dir / "weights.mfpw", state.weights);
    std::ofstream out(dir / "state.txt", std::ios::binary);
    out << "step: " << state.step << '\n'
        << "lr: " << shortest(state.lr) << '\n'
        << "seed: " << state.seed << '\n'
        << "running_loss: " << shortest(state.running_loss) << '\n'
        << "losses: ";
    for (std::size_t k = 0; k < state.losses.size(); ++k) {
        out << (k ? "," : "") << shortest(state.losses[k]);
    }
    out << '\n';
    if (!out) {
        throw std::runtime_error("cannot write " + (dir / "state.txt").string());
    }
}

TrainState load_train_state(const std::filesystem::path& dir) {
    TrainState state;
    state.weights = load_weights(dir / "weights.mfpw");
    std::ifstream in(dir / "state.txt");
    if (!in) {
        throw std::runtime_error("cannot read " + (dir / "state.txt").string());
    }
    std::string line;
    int seen = 0;
    while (std::getline(in, line)) {
        const auto colon = line.find(": ");
        if (colon == std::string::npos) {
            continue;
        }
        const std::string key = line.substr(0, colon);
        const std::string_view value = std::string_view(line).substr(colon + 2);
        if (key == "step") {
            state.step = parse_number<std::int64_t>(value, key);
        } else if (key == "lr") {
            state.lr = parse_number<double>(value, key);
        } else if (key == "seed") {
            state.seed = parse_number<std::uint64_t>(value, key);
        } else if (key == "running_loss") {
            state.running_loss = parse_number<double>(value, key);
        } else if (key == "losses") {
            std::size_t pos = 0;
            while (pos < value.size()) {
                const std::size_t comma = std::min(value.find(',', pos), value.size());
                state.losses.push_back(parse_number<double>(value.substr(pos, comma - pos), key));
                pos = comma + 1;
            }
        } else {
            throw std::runtime_error("train state: unknown key '" + key + "'");
        }
        ++seen;
    }
    if (seen != 5) {
        throw std::runtime_error("train state: expected 5 entries, found " + std::to_string(seen));
    }
    return state;
}

double ClassScore::precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
double ClassScore::recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }

double ClassScore::f1() const {
    if (tp == 0) {
        return 0.0;
    }
    const double p = precision();
    const double r = recall();
    return 2.0 * p * r / (p + r);
}

std::string SizeScores::to_csv() const {
    std::ostringstream os;
    os << "class,precision,recall,f1\n";
    for (SizeClass c : kAllSizeClasses) {
        const ClassScore& s = (*this)[c];
        os << to_string(c) << ',' << shortest(s.precision()) << ',' << shortest(s.recall()) << ','
           << shortest(s.f1()) << '\n';
    }
    return os.str();
}

std::vector<Peak> find_peaks(const Tensor& map) {
    const int h = static_cast<int>(map.shape().h);
    const int w = static_cast<int>(map.shape().w);
    std::vector<Peak> peaks;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = map.at(0, 0, y, x);
            if (!(v > kPeakThreshold)) {
                continue;
            }
            bool keep = true;
            for (int dy = -1; dy <= 1 && keep; ++dy) {
                for (int dx = -1; dx <= 1 && keep; ++dx) {
                    const int ny = y + dy;
                    const int nx = x + dx;
                    if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= h || nx >= w) {
                        continue;
                    }
                    const double n = map.at(0, 0, ny, nx);
                    const bool earlier = dy < 0 || (dy == 0 && dx < 0);
                    keep = earlier ? v > n : v >= n;
                }
            }
            if (keep) {
                peaks.push_back(Peak{y, x, v});
            }
        }
    }
    return peaks;
}

void score_predictions(const LevelMap& pred, const std::vector<Blob>& blobs, SizeScores& scores) {
    for (const auto& [level, map] : pred) {
        const std::vector<Peak> peaks = find_peaks(map);
        std::vector<const Blob*> here;
        for (const Blob& b : blobs) {
            if (b.level == level) {
                here.push_back(&b);
            }
        }
        struct Candidate {
            double dist;
            std::size_t peak;
            std::size_t blob;
        };
        std::vector<Candidate> cands;
        const double stride = std::ldexp(1.0, level);
        for (std::size_t pi = 0; pi < peaks.size(); ++pi) {
            for (std::size_t bi = 0; bi < here.size(); ++bi) {
                const double d = std::hypot(peaks[pi].x + 0.5 - here[bi]->cx / stride,
                                            peaks[pi].y + 0.5 - here[bi]->cy / stride);
                if (d <= kMatchRadius) {
                    cands.push_back({d, pi, bi});
                }
            }
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) { return a.dist < b.dist; });
        std::vector<bool> peak_used(peaks.size(), false);
        std::vector<bool> blob_used(here.size(), false);
        for (const Candidate& c : cands) {
            if (peak_used[c.peak] || blob_used[c.blob]) {
                continue;
            }
            peak_used[c.peak] = true;
            blob_used[c.blob] = true;
            ++scores[here[c.blob]->size_class].tp;
        }
        for (std::size_t bi = 0; bi < here.size(); ++bi) {
            if (!blob_used[bi]) {
                ++scores[here[bi]->size_class].fn;
            }
        }
        const auto unmatched = std::count(peak_used.begin(), peak_used.end(), false);
        scores[level_class(level)].fp += unmatched;
    }
}

SizeScores evaluate_by_size(const WeightStore& weights, const ModelConfig& cfg, int scenes, std::uint64_t seed) {
    cfg.validate();
    SizeScores scores;
    for (int k = 0; k < scenes; ++k) {
        const BlobScene scene = generate_blob_scene(scene_seed(seed, k), cfg.scene);
        Graph g;
        score_predictions(model_forward(g, cfg, weights, scene.image), scene.blobs, scores);
    }
    return scores;
}

}  // namespace mfpn
