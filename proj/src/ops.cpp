#include "tunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tunet {

namespace {

template <typename Scalar>
using NodePtr = std::shared_ptr<detail::TensorNode<Scalar>>;

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
    if (shape.size() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + to_string(shape));
    }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                             to_string(b));
    }
}

// Zero-padded shift of a [C x (H*W)] map: out[c, y, x] = in[c, y+dy, x+dx].
template <typename Scalar>
void shift_into(const Scalar* in, Scalar* out, Index channels, Index h, Index w, int dy, int dx) {
    for (Index c = 0; c < channels; ++c) {
        const Scalar* src = in + c * h * w;
        Scalar* dst = out + c * h * w;
        for (Index y = 0; y < h; ++y) {
            const Index sy = y + dy;
            Scalar* row = dst + y * w;
            if (sy < 0 || sy >= h) {
                std::fill(row, row + w, Scalar(0));
                continue;
            }
            for (Index x = 0; x < w; ++x) {
                const Index sx = x + dx;
                row[x] = (sx < 0 || sx >= w) ? Scalar(0) : src[sy * w + sx];
            }
        }
    }
}

// Adjoint of shift_into: grad_in[c, y+dy, x+dx] += grad_out[c, y, x].
template <typename Scalar>
void unshift_add(const Scalar* grad_out, Scalar* grad_in, Index channels, Index h, Index w, int dy,
                 int dx) {
    for (Index c = 0; c < channels; ++c) {
        const Scalar* src = grad_out + c * h * w;
        Scalar* dst = grad_in + c * h * w;
        for (Index y = 0; y < h; ++y) {
            const Index sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            for (Index x = 0; x < w; ++x) {
                const Index sx = x + dx;
                if (sx < 0 || sx >= w) continue;
                dst[sy * w + sx] += src[y * w + x];
            }
        }
    }
}

// Weight slice for one kernel tap as a [C_out x C_in] matrix.
template <typename Scalar>
RowMatrix<Scalar> tap_matrix(const Vector<Scalar>& w, Index cout, Index cin, Index k, Index ky,
                             Index kx) {
    RowMatrix<Scalar> m(cout, cin);
    for (Index o = 0; o < cout; ++o) {
        for (Index c = 0; c < cin; ++c) {
            m(o, c) = w[((o * cin + c) * k + ky) * k + kx];
        }
    }
    return m;
}

struct AxisWeights {
    std::vector<Index> lo, hi;
    std::vector<double> frac;
};

AxisWeights upsample_axis(Index in) {
    const Index out = 2 * in;
    AxisWeights a;
    a.lo.resize(out);
    a.hi.resize(out);
    a.frac.resize(out);
    for (Index d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) / 2.0 - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<Index>(std::floor(src));
        a.lo[d] = lo;
        a.hi[d] = std::min(lo + 1, in - 1);
        a.frac[d] = src - static_cast<double>(lo);
    }
    return a;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                             to_string(b.shape()));
    }
    const Index m = a.dim(0), k = a.dim(1), p = b.dim(1);
    Vector<Scalar> out(m * p);
    MatrixMap<Scalar>(out.data(), m, p).noalias() =
        ConstMatrixMap<Scalar>(a.value().data(), m, k) * ConstMatrixMap<Scalar>(b.value().data(), k, p);

    NodePtr<Scalar> an = a.node(), bn = b.node();
    return detail::record<Scalar>(
        OpKind::MatMul, {a, b}, Tensor<Scalar>({m, p}, std::move(out)),
        [an, bn, m, k, p](const Vector<Scalar>& g) {
            ConstMatrixMap<Scalar> G(g.data(), m, p);
            if (an->requires_grad) {
                Vector<Scalar> ga(m * k);
                MatrixMap<Scalar>(ga.data(), m, k).noalias() =
                    G * ConstMatrixMap<Scalar>(bn->value.data(), k, p).transpose();
                an->accumulate_grad(ga);
            }
            if (bn->requires_grad) {
                Vector<Scalar> gb(k * p);
                MatrixMap<Scalar>(gb.data(), k, p).noalias() =
                    ConstMatrixMap<Scalar>(an->value.data(), m, k).transpose() * G;
                bn->accumulate_grad(gb);
            }
        });
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
    require_rank(x.shape(), 3, "conv2d input");
    require_rank(w.shape(), 4, "conv2d weight");
    const Index cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const Index cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin) {
        throw DimensionError("conv2d: input " + to_string(x.shape()) + " has " + std::to_string(cin) +
                             " channels but weight " + to_string(w.shape()) + " expects " +
                             std::to_string(w.dim(1)));
    }
    if (w.dim(3) != k || (k != 1 && k != 3)) {
        throw DimensionError("conv2d: kernel must be 1x1 or 3x3, got " + to_string(w.shape()));
    }
    if (b.rank() != 1 || b.dim(0) != cout) {
        throw DimensionError("conv2d: bias " + to_string(b.shape()) + " does not match " +
                             std::to_string(cout) + " output channels");
    }
    const Index hw = h * wd;
    const int half = static_cast<int>(k / 2);

    Vector<Scalar> out(cout * hw);
    MatrixMap<Scalar> Out(out.data(), cout, hw);
    Out.colwise() = b.value();
    RowMatrix<Scalar> shifted(cin, hw);
    for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
            const int dy = static_cast<int>(ky) - half, dx = static_cast<int>(kx) - half;
            shift_into(x.value().data(), shifted.data(), cin, h, wd, dy, dx);
            Out.noalias() += tap_matrix(w.value(), cout, cin, k, ky, kx) * shifted;
        }
    }

    NodePtr<Scalar> xn = x.node(), wn = w.node(), bn = b.node();
    return detail::record<Scalar>(
        OpKind::Conv2d, {x, w, b}, Tensor<Scalar>({cout, h, wd}, std::move(out)),
        [=](const Vector<Scalar>& g) {
            ConstMatrixMap<Scalar> G(g.data(), cout, hw);
            if (bn->requires_grad) {
                bn->accumulate_grad(G.rowwise().sum());
            }
            Vector<Scalar> gw;
            Vector<Scalar> gx;
            if (wn->requires_grad) gw.setZero(wn->value.size());
            if (xn->requires_grad) gx.setZero(xn->value.size());
            RowMatrix<Scalar> buf(cin, hw);
            for (Index ky = 0; ky < k; ++ky) {
                for (Index kx = 0; kx < k; ++kx) {
                    const int dy = static_cast<int>(ky) - half, dx = static_cast<int>(kx) - half;
                    if (wn->requires_grad) {
                        shift_into(xn->value.data(), buf.data(), cin, h, wd, dy, dx);
                        RowMatrix<Scalar> gtap = G * buf.transpose();
                        for (Index o = 0; o < cout; ++o) {
                            for (Index c = 0; c < cin; ++c) {
                                gw[((o * cin + c) * k + ky) * k + kx] += gtap(o, c);
                            }
                        }
                    }
                    if (xn->requires_grad) {
                        buf.noalias() =
                            tap_matrix(wn->value, cout, cin, k, ky, kx).transpose() * G;
                        unshift_add(buf.data(), gx.data(), cin, h, wd, dy, dx);
                    }
                }
            }
            if (wn->requires_grad) wn->accumulate_grad(gw);
            if (xn->requires_grad) xn->accumulate_grad(gx);
        });
}

template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x) {
    require_rank(x.shape(), 3, "maxpool2d");
    const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("maxpool2d: spatial size must be even, got " + to_string(x.shape()));
    }
    const Index oh = h / 2, ow = w / 2;
    Vector<Scalar> out(c * oh * ow);
    std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
    const Scalar* in = x.value().data();
    for (Index ch = 0; ch < c; ++ch) {
        for (Index y = 0; y < oh; ++y) {
            for (Index xx = 0; xx < ow; ++xx) {
                Index best = (ch * h + 2 * y) * w + 2 * xx;
                for (Index dy = 0; dy < 2; ++dy) {
                    for (Index dx = 0; dx < 2; ++dx) {
                        const Index idx = (ch * h + 2 * y + dy) * w + 2 * xx + dx;
                        if (in[idx] > in[best]) best = idx;
                    }
                }
                const Index o = (ch * oh + y) * ow + xx;
                out[o] = in[best];
                argmax[static_cast<std::size_t>(o)] = best;
            }
        }
    }
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::MaxPool2d, {x}, Tensor<Scalar>({c, oh, ow}, std::move(out)),
        [xn, argmax = std::move(argmax)](const Vector<Scalar>& g) {
            Vector<Scalar> gx = Vector<Scalar>::Zero(xn->value.size());
            for (std::size_t i = 0; i < argmax.size(); ++i) {
                gx[argmax[i]] += g[static_cast<Index>(i)];
            }
            detail::accumulate(xn, gx);
        });
}

template <typename Scalar>
Tensor<Scalar> bilinear_upsample2x(const Tensor<Scalar>& x) {
    require_rank(x.shape(), 3, "bilinear_upsample2x");
    const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const Index oh = 2 * h, ow = 2 * w;
    auto ay = std::make_shared<AxisWeights>(upsample_axis(h));
    auto ax = std::make_shared<AxisWeights>(upsample_axis(w));
    Vector<Scalar> out(c * oh * ow);
    const Scalar* in = x.value().data();
    for (Index ch = 0; ch < c; ++ch) {
        const Scalar* plane = in + ch * h * w;
        for (Index y = 0; y < oh; ++y) {
            const Scalar fy = static_cast<Scalar>(ay->frac[y]);
            const Scalar* r0 = plane + ay->lo[y] * w;
            const Scalar* r1 = plane + ay->hi[y] * w;
            for (Index xx = 0; xx < ow; ++xx) {
                const Scalar fx = static_cast<Scalar>(ax->frac[xx]);
                const Index x0 = ax->lo[xx], x1 = ax->hi[xx];
                const Scalar top = r0[x0] * (1 - fx) + r0[x1] * fx;
                const Scalar bot = r1[x0] * (1 - fx) + r1[x1] * fx;
                out[(ch * oh + y) * ow + xx] = top * (1 - fy) + bot * fy;
            }
        }
    }
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::Upsample2x, {x}, Tensor<Scalar>({c, oh, ow}, std::move(out)),
        [=](const Vector<Scalar>& g) {
            Vector<Scalar> gx = Vector<Scalar>::Zero(c * h * w);
            for (Index ch = 0; ch < c; ++ch) {
                Scalar* plane = gx.data() + ch * h * w;
                for (Index y = 0; y < oh; ++y) {
                    const Scalar fy = static_cast<Scalar>(ay->frac[y]);
                    Scalar* r0 = plane + ay->lo[y] * w;
                    Scalar* r1 = plane + ay->hi[y] * w;
                    for (Index xx = 0; xx < ow; ++xx) {
                        const Scalar fx = static_cast<Scalar>(ax->frac[xx]);
                        const Index x0 = ax->lo[xx], x1 = ax->hi[xx];
                        const Scalar gv = g[(ch * oh + y) * ow + xx];
                        r0[x0] += gv * (1 - fy) * (1 - fx);
                        r0[x1] += gv * (1 - fy) * fx;
                        r1[x0] += gv * fy * (1 - fx);
                        r1[x1] += gv * fy * fx;
                    }
                }
            }
            detail::accumulate(xn, gx);
        });
}

template <typename Scalar>
Tensor<Scalar> layernorm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                         const Tensor<Scalar>& beta, Scalar eps) {
    require_rank(x.shape(), 2, "layernorm");
    const Index rows = x.dim(0), d = x.dim(1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw DimensionError("layernorm: gamma/beta " + to_string(gamma.shape()) + "/" +
                             to_string(beta.shape()) + " do not match feature size " +
                             std::to_string(d));
    }
    if (!(eps > 0)) {
        throw ContractError("layernorm: eps must be positive");
    }
    ConstMatrixMap<Scalar> X(x.value().data(), rows, d);
    auto xhat = std::make_shared<RowMatrix<Scalar>>(rows, d);
    auto inv_std = std::make_shared<Vector<Scalar>>(rows);
    for (Index r = 0; r < rows; ++r) {
        const Scalar mean = X.row(r).mean();
        const Scalar var = (X.row(r).array() - mean).square().mean();
        (*inv_std)[r] = Scalar(1) / std::sqrt(var + eps);
        xhat->row(r) = (X.row(r).array() - mean) * (*inv_std)[r];
    }
    Vector<Scalar> out(rows * d);
    MatrixMap<Scalar> Y(out.data(), rows, d);
    Y = (xhat->array().rowwise() * gamma.value().transpose().array()).rowwise() +
        beta.value().transpose().array();

    NodePtr<Scalar> xn = x.node(), gn = gamma.node(), bn = beta.node();
    return detail::record<Scalar>(
        OpKind::LayerNorm, {x, gamma, beta}, Tensor<Scalar>({rows, d}, std::move(out)),
        [=](const Vector<Scalar>& g) {
            ConstMatrixMap<Scalar> G(g.data(), rows, d);
            if (gn->requires_grad) {
                gn->accumulate_grad((G.array() * xhat->array()).colwise().sum().transpose().matrix());
            }
            if (bn->requires_grad) {
                bn->accumulate_grad(G.colwise().sum().transpose());
            }
            if (xn->requires_grad) {
                Vector<Scalar> gx(rows * d);
                MatrixMap<Scalar> GX(gx.data(), rows, d);
                for (Index r = 0; r < rows; ++r) {
                    const auto dxhat = (G.row(r).array() * gn->value.transpose().array()).eval();
                    const Scalar m1 = dxhat.mean();
                    const Scalar m2 = (dxhat * xhat->row(r).array()).mean();
                    GX.row(r) = ((dxhat - m1 - xhat->row(r).array() * m2) * (*inv_std)[r]).matrix();
                }
                xn->accumulate_grad(gx);
            }
        });
}

template <typename Scalar>
Tensor<Scalar> softmax_lastdim(const Tensor<Scalar>& x) {
    const Index cols = x.shape().back();
    const Index rows = x.numel() / cols;
    ConstMatrixMap<Scalar> X(x.value().data(), rows, cols);
    Vector<Scalar> out(rows * cols);
    MatrixMap<Scalar> Y(out.data(), rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const Scalar mx = X.row(r).maxCoeff();
        Y.row(r) = (X.row(r).array() - mx).exp().matrix();
        Y.row(r) /= Y.row(r).sum();
    }
    auto saved = std::make_shared<Vector<Scalar>>(out);
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::Softmax, {x}, Tensor<Scalar>(x.shape(), std::move(out)),
        [=](const Vector<Scalar>& g) {
            ConstMatrixMap<Scalar> G(g.data(), rows, cols);
            ConstMatrixMap<Scalar> P(saved->data(), rows, cols);
            Vector<Scalar> gx(rows * cols);
            MatrixMap<Scalar> GX(gx.data(), rows, cols);
            for (Index r = 0; r < rows; ++r) {
                const Scalar dot = G.row(r).dot(P.row(r));
                GX.row(r) = (P.row(r).array() * (G.row(r).array() - dot)).matrix();
            }
            detail::accumulate(xn, gx);
        });
}

template <typename Scalar>
Tensor<Scalar> elu(const Tensor<Scalar>& x, Scalar alpha) {
    const auto& v = x.value();
    Vector<Scalar> out(v.size());
    for (Index i = 0; i < v.size(); ++i) {
        out[i] = v[i] >= 0 ? v[i] : alpha * std::expm1(v[i]);
    }
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::Elu, {x}, Tensor<Scalar>(x.shape(), std::move(out)),
        [xn, alpha](const Vector<Scalar>& g) {
            const auto& in = xn->value;
            const Scalar neg_gain = corrupt_backward() ? Scalar(2) : Scalar(1);
            Vector<Scalar> gx(in.size());
            for (Index i = 0; i < in.size(); ++i) {
                gx[i] = in[i] >= 0 ? g[i] : g[i] * alpha * std::exp(in[i]) * neg_gain;
            }
            detail::accumulate(xn, gx);
        });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
    const auto& v = x.value();
    Vector<Scalar> out(v.size());
    for (Index i = 0; i < v.size(); ++i) {
        if (v[i] >= 0) {
            out[i] = Scalar(1) / (Scalar(1) + std::exp(-v[i]));
        } else {
            const Scalar e = std::exp(v[i]);
            out[i] = e / (Scalar(1) + e);
        }
    }
    auto saved = std::make_shared<Vector<Scalar>>(out);
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::Sigmoid, {x}, Tensor<Scalar>(x.shape(), std::move(out)),
        [xn, saved](const Vector<Scalar>& g) {
            detail::accumulate(
                xn, (g.array() * saved->array() * (Scalar(1) - saved->array())).matrix().eval());
        });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    require_same(a.shape(), b.shape(), "add");
    NodePtr<Scalar> an = a.node(), bn = b.node();
    return detail::record<Scalar>(OpKind::Add, {a, b},
                                  Tensor<Scalar>(a.shape(), a.value() + b.value()),
                                  [an, bn](const Vector<Scalar>& g) {
                                      detail::accumulate(an, g);
                                      detail::accumulate(bn, g);
                                  });
}

template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
    require_rank(x.shape(), 2, "add_bias");
    const Index rows = x.dim(0), d = x.dim(1);
    if (bias.shape() != Shape{d}) {
        throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                             to_string(x.shape()));
    }
    Vector<Scalar> out(rows * d);
    MatrixMap<Scalar>(out.data(), rows, d) =
        ConstMatrixMap<Scalar>(x.value().data(), rows, d).rowwise() + bias.value().transpose();
    NodePtr<Scalar> xn = x.node(), bn = bias.node();
    return detail::record<Scalar>(
        OpKind::AddBias, {x, bias}, Tensor<Scalar>(x.shape(), std::move(out)),
        [xn, bn, rows, d](const Vector<Scalar>& g) {
            detail::accumulate(xn, g);
            if (bn->requires_grad) {
                bn->accumulate_grad(ConstMatrixMap<Scalar>(g.data(), rows, d).colwise().sum().transpose());
            }
        });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    require_same(a.shape(), b.shape(), "mul");
    NodePtr<Scalar> an = a.node(), bn = b.node();
    return detail::record<Scalar>(
        OpKind::Mul, {a, b},
        Tensor<Scalar>(a.shape(), a.value().cwiseProduct(b.value())),
        [an, bn](const Vector<Scalar>& g) {
            if (an->requires_grad) an->accumulate_grad(g.cwiseProduct(bn->value));
            if (bn->requires_grad) bn->accumulate_grad(g.cwiseProduct(an->value));
        });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(OpKind::Scale, {x}, Tensor<Scalar>(x.shape(), x.value() * factor),
                                  [xn, factor](const Vector<Scalar>& g) {
                                      detail::accumulate(xn, (g * factor).eval());
                                  });
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    require_rank(a.shape(), 3, "concat_channels");
    require_rank(b.shape(), 3, "concat_channels");
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
        throw DimensionError("concat_channels: spatial mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
    const Index na = a.numel(), nb = b.numel();
    Vector<Scalar> out(na + nb);
    out << a.value(), b.value();
    NodePtr<Scalar> an = a.node(), bn = b.node();
    return detail::record<Scalar>(
        OpKind::ConcatChannels, {a, b},
        Tensor<Scalar>({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out)),
        [an, bn, na, nb](const Vector<Scalar>& g) {
            detail::accumulate(an, g.head(na));
            detail::accumulate(bn, g.tail(nb));
        });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: nothing to concatenate");
    }
    const Index rows = parts.front().dim(0);
    Index total = 0;
    std::vector<Index> widths;
    for (const auto& p : parts) {
        require_rank(p.shape(), 2, "concat_cols");
        if (p.dim(0) != rows) {
            throw DimensionError("concat_cols: row mismatch " + to_string(parts.front().shape()) +
                                 " vs " + to_string(p.shape()));
        }
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    Vector<Scalar> out(rows * total);
    MatrixMap<Scalar> Y(out.data(), rows, total);
    Index col = 0;
    for (const auto& p : parts) {
        Y.middleCols(col, p.dim(1)) = ConstMatrixMap<Scalar>(p.value().data(), rows, p.dim(1));
        col += p.dim(1);
    }
    Tensor<Scalar> result({rows, total}, std::move(out));
    auto* tape = GradTape<Scalar>::active();
    const bool any = std::any_of(parts.begin(), parts.end(),
                                 [](const Tensor<Scalar>& p) { return p.requires_grad(); });
    if (tape == nullptr || !any) {
        return result;
    }
    result.set_requires_grad(true);
    std::vector<NodePtr<Scalar>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    TapeRecord<Scalar> rec{OpKind::ConcatCols, nodes, result.node(),
                           [nodes, widths, rows, total](const Vector<Scalar>& g) {
                               ConstMatrixMap<Scalar> G(g.data(), rows, total);
                               Index c = 0;
                               for (std::size_t i = 0; i < nodes.size(); ++i) {
                                   if (nodes[i]->requires_grad) {
                                       RowMatrix<Scalar> part = G.middleCols(c, widths[i]);
                                       nodes[i]->accumulate_grad(
                                           Eigen::Map<const Vector<Scalar>>(part.data(), part.size()));
                                   }
                                   c += widths[i];
                               }
                           }};
    tape->push(std::move(rec));
    return result;
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count) {
    require_rank(x.shape(), 2, "slice_cols");
    const Index rows = x.dim(0), cols = x.dim(1);
    if (start < 0 || count <= 0 || start + count > cols) {
        throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") out of range for " +
                             to_string(x.shape()));
    }
    RowMatrix<Scalar> part = ConstMatrixMap<Scalar>(x.value().data(), rows, cols).middleCols(start, count);
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::SliceCols, {x},
        Tensor<Scalar>({rows, count}, Eigen::Map<const Vector<Scalar>>(part.data(), part.size())),
        [xn, rows, cols, start, count](const Vector<Scalar>& g) {
            if (!xn->requires_grad) return;
            Vector<Scalar> gx = Vector<Scalar>::Zero(rows * cols);
            MatrixMap<Scalar>(gx.data(), rows, cols).middleCols(start, count) =
                ConstMatrixMap<Scalar>(g.data(), rows, count);
            xn->accumulate_grad(gx);
        });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, const Shape& shape) {
    if (numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                             to_string(shape));
    }
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(OpKind::Reshape, {x}, Tensor<Scalar>(shape, x.value()),
                                  [xn](const Vector<Scalar>& g) { detail::accumulate(xn, g); });
}

template <typename Scalar>
Tensor<Scalar> transpose_last2(const Tensor<Scalar>& x) {
    if (x.rank() < 2) {
        throw DimensionError("transpose_last2: need rank >= 2, got " + to_string(x.shape()));
    }
    const Index r = x.shape()[x.rank() - 2], c = x.shape().back();
    const Index batch = x.numel() / (r * c);
    Vector<Scalar> out(x.numel());
    for (Index bi = 0; bi < batch; ++bi) {
        MatrixMap<Scalar>(out.data() + bi * r * c, c, r) =
            ConstMatrixMap<Scalar>(x.value().data() + bi * r * c, r, c).transpose();
    }
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::TransposeLast2, {x}, Tensor<Scalar>(shape, std::move(out)),
        [xn, r, c, batch](const Vector<Scalar>& g) {
            if (!xn->requires_grad) return;
            Vector<Scalar> gx(g.size());
            for (Index bi = 0; bi < batch; ++bi) {
                MatrixMap<Scalar>(gx.data() + bi * r * c, r, c) =
                    ConstMatrixMap<Scalar>(g.data() + bi * r * c, c, r).transpose();
            }
            xn->accumulate_grad(gx);
        });
}

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, const Shape& shape, std::vector<Index> index) {
    if (static_cast<Index>(index.size()) != numel(shape)) {
        throw DimensionError("gather: " + std::to_string(index.size()) +
                             " indices for output shape " + to_string(shape));
    }
    Vector<Scalar> out(static_cast<Index>(index.size()));
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= x.numel()) {
            throw DimensionError("gather: index out of range for " + to_string(x.shape()));
        }
        out[static_cast<Index>(i)] = x.value()[index[i]];
    }
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::Gather, {x}, Tensor<Scalar>(shape, std::move(out)),
        [xn, index = std::move(index)](const Vector<Scalar>& g) {
            if (!xn->requires_grad) return;
            Vector<Scalar> gx = Vector<Scalar>::Zero(xn->value.size());
            for (std::size_t i = 0; i < index.size(); ++i) {
                gx[index[i]] += g[static_cast<Index>(i)];
            }
            xn->accumulate_grad(gx);
        });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
    NodePtr<Scalar> xn = x.node();
    return detail::record<Scalar>(
        OpKind::Sum, {x}, Tensor<Scalar>::scalar(x.value().sum()),
        [xn](const Vector<Scalar>& g) {
            detail::accumulate(xn, Vector<Scalar>::Constant(xn->value.size(), g[0]));
        });
}

#define TUNET_INSTANTIATE_OPS(S)                                                              \
    template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                            \
    template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);          \
    template Tensor<S> maxpool2d(const Tensor<S>&);                                           \
    template Tensor<S> bilinear_upsample2x(const Tensor<S>&);                                 \
    template Tensor<S> layernorm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);    \
    template Tensor<S> softmax_lastdim(const Tensor<S>&);                                     \
    template Tensor<S> elu(const Tensor<S>&, S);                                              \
    template Tensor<S> sigmoid(const Tensor<S>&);                                             \
    template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> add_bias(const Tensor<S>&, const Tensor<S>&);                          \
    template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> scale(const Tensor<S>&, S);                                            \
    template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                   \
    template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);                            \
    template Tensor<S> slice_cols(const Tensor<S>&, Index, Index);                            \
    template Tensor<S> reshape(const Tensor<S>&, const Shape&);                               \
    template Tensor<S> transpose_last2(const Tensor<S>&);                                     \
    template Tensor<S> gather(const Tensor<S>&, const Shape&, std::vector<Index>);            \
    template Tensor<S> sum(const Tensor<S>&);

TUNET_INSTANTIATE_OPS(float)
TUNET_INSTANTIATE_OPS(double)

#undef TUNET_INSTANTIATE_OPS

}  // namespace tunet
