// SPDX-License-Identifier: Apache-2.0

#include "mfpn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mfpn {

namespace {

constexpr double kProbClamp = 1e-12;

std::size_t idx(std::int64_t i) { return static_cast<std::size_t>(i); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
    }
}

Tensor scalar_output(Graph& g, const char* op, std::vector<Tensor> inputs, double value,
                     Graph::BackwardFn fn) {
    return g.emit(op, std::move(inputs), Shape{1, 1, 1, 1}, {value}, std::move(fn));
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const std::int64_t k = ws.h;
    if (ws.h != ws.w || (k != 1 && k != 3)) {
        throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3, got " + ws.str());
    }
    if (ws.c != xs.c) {
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(ws.c) +
                                    " input channels, input has " + std::to_string(xs.c));
    }
    const std::int64_t c_out = ws.n;
    if (bias.defined() && bias.shape() != Shape{1, c_out, 1, 1}) {
        throw std::invalid_argument("conv2d: bias shape " + bias.shape().str() + " does not match " +
                                    std::to_string(c_out) + " output channels");
    }

    const std::int64_t H = xs.h;
    const std::int64_t W = xs.w;
    const std::int64_t pad = k / 2;
    const Shape os{xs.n, c_out, H, W};
    std::vector<double> out(idx(os.numel()), 0.0);
    const auto xv = x.values();
    const auto wv = weight.values();

    // Row-major sweep: each output row meets its (up to) three input rows
    // while they are still in cache.
    for (std::int64_t n = 0; n < xs.n; ++n) {
        for (std::int64_t co = 0; co < c_out; ++co) {
            double* op = out.data() + idx((n * c_out + co) * H * W);
            if (bias.defined()) {
                std::fill(op, op + H * W, bias.values()[idx(co)]);
            }
            for (std::int64_t ci = 0; ci < xs.c; ++ci) {
                const double* ip = xv.data() + idx((n * xs.c + ci) * H * W);
                const double* wp = wv.data() + idx((co * xs.c + ci) * k * k);
                for (std::int64_t y = 0; y < H; ++y) {
                    double* orow = op + y * W;
                    for (std::int64_t kh = 0; kh < k; ++kh) {
                        const std::int64_t sy = y + kh - pad;
                        if (sy < 0 || sy >= H) {
                            continue;
                        }
                        for (std::int64_t kw = 0; kw < k; ++kw) {
                            const std::int64_t dx = kw - pad;
                            const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                            const std::int64_t x1 = std::min(W, W - dx);
                            const double wt = wp[kh * k + kw];
                            const double* irow = ip + sy * W + dx;
                            for (std::int64_t xx = x0; xx < x1; ++xx) {
                                orow[xx] += wt * irow[xx];
                            }
                        }
                    }
                }
            }
        }
    }

    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return g.emit(
        "conv2d", std::move(inputs), os, std::move(out),
        [x, weight, bias, xs, c_out, k, pad](std::span<const double> go) mutable {
            const std::int64_t H = xs.h;
            const std::int64_t W = xs.w;
            const auto xv = x.values();
            const auto wv = weight.values();
            std::span<double> gx = x.requires_grad() ? x.grad_accumulator() : std::span<double>{};
            std::span<double> gw =
                weight.requires_grad() ? weight.grad_accumulator() : std::span<double>{};
            if (bias.defined() && bias.requires_grad()) {
                auto gb = bias.grad_accumulator();
                for (std::int64_t n = 0; n < xs.n; ++n) {
                    for (std::int64_t co = 0; co < c_out; ++co) {
                        const double* gp = go.data() + idx((n * c_out + co) * H * W);
                        double s = 0.0;
                        for (std::int64_t i = 0; i < H * W; ++i) {
                            s += gp[i];
                        }
                        gb[idx(co)] += s;
                    }
                }
            }
            if (gx.empty() && gw.empty()) {
                return;
            }
            for (std::int64_t n = 0; n < xs.n; ++n) {
                for (std::int64_t co = 0; co < c_out; ++co) {
                    const double* gp = go.data() + idx((n * c_out + co) * H * W);
                    for (std::int64_t ci = 0; ci < xs.c; ++ci) {
                        const std::int64_t in_off = (n * xs.c + ci) * H * W;
                        const std::size_t w_off = idx((co * xs.c + ci) * k * k);
                        // four partial sums per tap let the reduction vectorise
                        double acc[9][4] = {};
                        for (std::int64_t y = 0; y < H; ++y) {
                            const double* grow = gp + y * W;
                            for (std::int64_t kh = 0; kh < k; ++kh) {
                                const std::int64_t sy = y + kh - pad;
                                if (sy < 0 || sy >= H) {
                                    continue;
                                }
                                for (std::int64_t kw = 0; kw < k; ++kw) {
                                    const std::int64_t dx = kw - pad;
                                    const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                                    const std::int64_t x1 = std::min(W, W - dx);
                                    const std::int64_t irow = in_off + sy * W + dx;
                                    if (!gw.empty()) {
                                        double* a = acc[kh * k + kw];
                                        const double* xrow = xv.data() + irow;
                                        std::int64_t xx = x0;
                                        for (; xx + 4 <= x1; xx += 4) {
                                            a[0] += grow[xx] * xrow[xx];
                                            a[1] += grow[xx + 1] * xrow[xx + 1];
                                            a[2] += grow[xx + 2] * xrow[xx + 2];
                                            a[3] += grow[xx + 3] * xrow[xx + 3];
                                        }
                                        for (; xx < x1; ++xx) {
                                            a[0] += grow[xx] * xrow[xx];
                                        }
                                    }
                                    if (!gx.empty()) {
                                        const double wt = wv[w_off + idx(kh * k + kw)];
                                        double* gxrow = gx.data() + irow;
                                        for (std::int64_t xx = x0; xx < x1; ++xx) {
                                            gxrow[xx] += wt * grow[xx];
                                        }
                                    }
                                }
                            }
                        }
                        if (!gw.empty()) {
                            for (std::int64_t t = 0; t < k * k; ++t) {
                                const double* a = acc[t];
                                gw[w_off + idx(t)] += (a[0] + a[1]) + (a[2] + a[3]);
                            }
                        }
                    }
                }
            }
        });
}

Tensor upsample_nearest_x2(Graph& g, const Tensor& x) {
    const Shape s = x.shape();
    const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
    std::vector<double> out(idx(os.numel()));
    const auto xv = x.values();
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        for (std::int64_t y = 0; y < os.h; ++y) {
            for (std::int64_t xx = 0; xx < os.w; ++xx) {
                out[idx((p * os.h + y) * os.w + xx)] = xv[idx((p * s.h + y / 2) * s.w + xx / 2)];
            }
        }
    }
    return g.emit("upsample_nearest_x2", {x}, os, std::move(out),
                  [x, s, os](std::span<const double> go) mutable {
                      if (!x.requires_grad()) {
                          return;
                      }
                      auto gx = x.grad_accumulator();
                      for (std::int64_t p = 0; p < s.n * s.c; ++p) {
                          for (std::int64_t y = 0; y < os.h; ++y) {
                              for (std::int64_t xx = 0; xx < os.w; ++xx) {
                                  gx[idx((p * s.h + y / 2) * s.w + xx / 2)] +=
                                      go[idx((p * os.h + y) * os.w + xx)];
                              }
                          }
                      }
                  });
}

Tensor maxpool_2x2(Graph& g, const Tensor& x) {
    const Shape s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw std::invalid_argument("maxpool_2x2: spatial dims must be even, got " + s.str());
    }
    const Shape os{s.n, s.c, s.h / 2, s.w / 2};
    std::vector<double> out(idx(os.numel()));
    std::vector<std::int64_t> argmax(idx(os.numel()));
    const auto xv = x.values();
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        for (std::int64_t y = 0; y < os.h; ++y) {
            for (std::int64_t xx = 0; xx < os.w; ++xx) {
                std::int64_t best = (p * s.h + 2 * y) * s.w + 2 * xx;
                for (std::int64_t dy = 0; dy < 2; ++dy) {
                    for (std::int64_t dx = 0; dx < 2; ++dx) {
                        const std::int64_t cand = (p * s.h + 2 * y + dy) * s.w + 2 * xx + dx;
                        if (xv[idx(cand)] > xv[idx(best)]) {
                            best = cand;
                        }
                    }
                }
                const std::size_t o = idx((p * os.h + y) * os.w + xx);
                out[o] = xv[idx(best)];
                argmax[o] = best;
            }
        }
    }
    return g.emit("maxpool_2x2", {x}, os, std::move(out),
                  [x, argmax = std::move(argmax)](std::span<const double> go) mutable {
                      if (!x.requires_grad()) {
                          return;
                      }
                      auto gx = x.grad_accumulator();
                      for (std::size_t o = 0; o < argmax.size(); ++o) {
                          gx[idx(argmax[o])] += go[o];
                      }
                  });
}

Tensor global_avg_pool(Graph& g, const Tensor& x) {
    const Shape s = x.shape();
    const Shape os{s.n, s.c, 1, 1};
    const std::int64_t hw = s.plane();
    std::vector<double> out(idx(os.numel()));
    const auto xv = x.values();
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) {
            acc += xv[idx(p * hw + i)];
        }
        out[idx(p)] = acc / static_cast<double>(hw);
    }
    return g.emit("global_avg_pool", {x}, os, std::move(out),
                  [x, s, hw](std::span<const double> go) mutable {
                      if (!x.requires_grad()) {
                          return;
                      }
                      auto gx = x.grad_accumulator();
                      const double inv = 1.0 / static_cast<double>(hw);
                      for (std::int64_t p = 0; p < s.n * s.c; ++p) {
                          for (std::int64_t i = 0; i < hw; ++i) {
                              gx[idx(p * hw + i)] += go[idx(p)] * inv;
                          }
                      }
                  });
}

Tensor add(Graph& g, std::span<const Tensor> xs) {
    if (xs.empty()) {
        throw std::invalid_argument("add: no operands");
    }
    Shape os = xs.front().shape();
    for (const Tensor& t : xs) {
        if (t.shape().plane() > os.plane()) {
            os = t.shape();
        }
    }
    std::vector<bool> broadcast(xs.size(), false);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Shape& s = xs[i].shape();
        if (s == os) {
            continue;
        }
        if (s.n == os.n && s.c == os.c && s.h == 1 && s.w == 1) {
            broadcast[i] = true;
            continue;
        }
        throw std::invalid_argument("add: incompatible shapes " + s.str() + " and " + os.str());
    }
    const std::int64_t hw = os.plane();
    std::vector<double> out(idx(os.numel()), 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto v = xs[i].values();
        if (broadcast[i]) {
            for (std::int64_t j = 0; j < os.numel(); ++j) {
                out[idx(j)] += v[idx(j / hw)];
            }
        } else {
            for (std::int64_t j = 0; j < os.numel(); ++j) {
                out[idx(j)] += v[idx(j)];
            }
        }
    }
    std::vector<Tensor> inputs(xs.begin(), xs.end());
    return g.emit("add", inputs, os, std::move(out),
                  [inputs, broadcast, hw](std::span<const double> go) mutable {
                      for (std::size_t i = 0; i < inputs.size(); ++i) {
                          if (!inputs[i].requires_grad()) {
                              continue;
                          }
                          auto gi = inputs[i].grad_accumulator();
                          if (broadcast[i]) {
                              for (std::size_t j = 0; j < go.size(); ++j) {
                                  gi[j / idx(hw)] += go[j];
                              }
                          } else {
                              for (std::size_t j = 0; j < go.size(); ++j) {
                                  gi[j] += go[j];
                              }
                          }
                      }
                  });
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    const Tensor operands[] = {a, b};
    return add(g, operands);
}

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw std::invalid_argument("concat_channels: batch/spatial mismatch " + sa.str() + " vs " +
                                    sb.str());
    }
    const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
    const std::int64_t na = sa.c * sa.plane();
    const std::int64_t nb = sb.c * sb.plane();
    std::vector<double> out;
    out.reserve(idx(os.numel()));
    const auto av = a.values();
    const auto bv = b.values();
    for (std::int64_t n = 0; n < sa.n; ++n) {
        out.insert(out.end(), av.begin() + n * na, av.begin() + (n + 1) * na);
        out.insert(out.end(), bv.begin() + n * nb, bv.begin() + (n + 1) * nb);
    }
    return g.emit("concat_channels", {a, b}, os, std::move(out),
                  [a, b, na, nb, batch = sa.n](std::span<const double> go) mutable {
                      for (std::int64_t n = 0; n < batch; ++n) {
                          const double* src = go.data() + n * (na + nb);
                          if (a.requires_grad()) {
                              auto ga = a.grad_accumulator();
                              for (std::int64_t i = 0; i < na; ++i) {
                                  ga[idx(n * na + i)] += src[i];
                              }
                          }
                          if (b.requires_grad()) {
                              auto gb = b.grad_accumulator();
                              for (std::int64_t i = 0; i < nb; ++i) {
                                  gb[idx(n * nb + i)] += src[na + i];
                              }
                          }
                      }
                  });
}

Tensor relu(Graph& g, const Tensor& x) {
    const auto xv = x.values();
    std::vector<double> out(xv.begin(), xv.end());
    for (double& v : out) {
        v = v > 0.0 ? v : 0.0;
    }
    return g.emit("relu", {x}, x.shape(), std::move(out), [x](std::span<const double> go) mutable {
        if (!x.requires_grad()) {
            return;
        }
        auto gx = x.grad_accumulator();
        const auto xv = x.values();
        for (std::size_t i = 0; i < go.size(); ++i) {
            if (xv[i] > 0.0) {
                gx[i] += go[i];
            }
        }
    });
}

Tensor sigmoid(Graph& g, const Tensor& x) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    }
    std::vector<double> saved = out;
    return g.emit("sigmoid", {x}, x.shape(), std::move(out),
                  [x, saved = std::move(saved)](std::span<const double> go) mutable {
                      if (!x.requires_grad()) {
                          return;
                      }
                      auto gx = x.grad_accumulator();
                      for (std::size_t i = 0; i < go.size(); ++i) {
                          gx[i] += go[i] * saved[i] * (1.0 - saved[i]);
                      }
                  });
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] * factor;
    }
    return g.emit("scale", {x}, x.shape(), std::move(out),
                  [x, factor](std::span<const double> go) mutable {
                      if (!x.requires_grad()) {
                          return;
                      }
                      auto gx = x.grad_accumulator();
                      for (std::size_t i = 0; i < go.size(); ++i) {
                          gx[i] += go[i] * factor;
                      }
                  });
}

Tensor sum(Graph& g, const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) {
        acc += v;
    }
    return scalar_output(g, "sum", {x}, acc, [x](std::span<const double> go) mutable {
        if (!x.requires_grad()) {
            return;
        }
        for (double& v : x.grad_accumulator()) {
            v += go[0];
        }
    });
}

Tensor sum_squares(Graph& g, const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) {
        acc += v * v;
    }
    return scalar_output(g, "sum_squares", {x}, acc, [x](std::span<const double> go) mutable {
        if (!x.requires_grad()) {
            return;
        }
        auto gx = x.grad_accumulator();
        const auto xv = x.values();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += 2.0 * xv[i] * go[0];
        }
    });
}

Tensor weighted_sum(Graph& g, const Tensor& x, const Tensor& coeffs) {
    require_same_shape("weighted_sum", x, coeffs);
    const auto xv = x.values();
    const auto cv = coeffs.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        acc += xv[i] * cv[i];
    }
    return scalar_output(g, "weighted_sum", {x}, acc, [x, coeffs](std::span<const double> go) mutable {
        if (!x.requires_grad()) {
            return;
        }
        auto gx = x.grad_accumulator();
        const auto cv = coeffs.values();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += cv[i] * go[0];
        }
    });
}

Tensor weighted_bce_sum(Graph& g, const Tensor& pred, const Tensor& target, const Tensor& weights) {
    require_same_shape("weighted_bce_sum", pred, target);
    require_same_shape("weighted_bce_sum", pred, weights);
    const auto pv = pred.values();
    const auto tv = target.values();
    const auto wv = weights.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (!(tv[i] >= 0.0 && tv[i] <= 1.0)) {
            throw std::invalid_argument("weighted_bce_sum: target outside [0,1]");
        }
        const double p = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
        acc -= wv[i] * (tv[i] * std::log(p) + (1.0 - tv[i]) * std::log(1.0 - p));
    }
    return scalar_output(
        g, "weighted_bce_sum", {pred}, acc, [pred, target, weights](std::span<const double> go) mutable {
            if (!pred.requires_grad()) {
                return;
            }
            auto gp = pred.grad_accumulator();
            const auto pv = pred.values();
            const auto tv = target.values();
            const auto wv = weights.values();
            for (std::size_t i = 0; i < gp.size(); ++i) {
                const double p = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
                gp[i] += go[0] * wv[i] * (p - tv[i]) / (p * (1.0 - p));
            }
        });
}

}  // namespace mfpn
