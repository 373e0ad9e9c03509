#include "pcrec/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace pcrec {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape");
        n *= e;
    }
    return n;
}

void require_2d(const Tensor& t, const char* op, const char* name) {
    if (t.ndim() != 2)
        throw std::invalid_argument(std::string(op) + ": " + name + " must be 2-D");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) {
    impl_ = std::make_shared<detail::TensorImpl>();
    std::size_t n = shape_product(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(n, 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values) {
    impl_ = std::make_shared<detail::TensorImpl>();
    if (shape_product(shape) != values.size())
        throw std::invalid_argument("Tensor: shape does not match value count");
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar");
    return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
    if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
    if (!impl_) return Tensor();
    Tensor out;
    out.impl_ = std::make_shared<detail::TensorImpl>();
    out.impl_->shape = impl_->shape;
    out.impl_->data = impl_->data;
    return out;
}

void Tape::enroll(const Tensor& t) {
    if (!t.defined()) throw std::invalid_argument("Tape: undefined tensor used as op input");
    Impl* impl = t.impl_.get();
    if (impl->tape == this) return;
    // New to this tape: register as a leaf (constants and parameters alike;
    // outputs of other tapes enter as constants).
    impl->tape = this;
    impl->node_id = next_id_++;
    impl->tape_output = false;
    nodes_.push_back(t.impl_);
}

Tensor Tape::make_output(std::vector<std::size_t> shape) {
    Tensor out(std::move(shape));
    out.impl_->tape = this;
    out.impl_->node_id = next_id_++;
    out.impl_->tape_output = true;
    nodes_.push_back(out.impl_);
    return out;
}

Tensor Tape::affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_2d(x, "affine", "x");
    require_2d(w, "affine", "w");
    if (b.ndim() != 1)
        throw std::invalid_argument("affine: b must be 1-D");
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    if (w.rows() != k)
        throw std::invalid_argument("affine: x has " + std::to_string(k) +
                                    " columns but w has " + std::to_string(w.rows()) + " rows");
    if (b.size() != n)
        throw std::invalid_argument("affine: b has " + std::to_string(b.size()) +
                                    " entries but w has " + std::to_string(n) + " columns");
    enroll(x);
    enroll(w);
    enroll(b);
    Tensor out = make_output({m, n});

    const double* xd = x.data();
    const double* wd = w.data();
    const double* bd = b.data();
    double* od = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = od + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = bd[j];
        const double* xrow = xd + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = xrow[p];
            const double* wrow = wd + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += xv * wrow[j];
        }
    }

    push([xi = x.impl_, wi = w.impl_, bi = b.impl_, oi = out.impl_, m, k, n] {
        const double* g = oi->grad.data();
        const double* xd = xi->data.data();
        const double* wd = wi->data.data();
        double* gx = xi->grad.data();
        double* gw = wi->grad.data();
        double* gb = bi->grad.data();
        for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g + i * n;
            const double* xrow = xd + i * k;
            double* gxrow = gx + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double* wrow = wd + p * n;
                double* gwrow = gw + p * n;
                double acc = 0.0;
                const double xv = xrow[p];
                for (std::size_t j = 0; j < n; ++j) {
                    acc += grow[j] * wrow[j];
                    gwrow[j] += xv * grow[j];
                }
                gxrow[p] += acc;
            }
            for (std::size_t j = 0; j < n; ++j) gb[j] += grow[j];
        }
    });
    return out;
}

Tensor Tape::relu(const Tensor& x) {
    enroll(x);
    Tensor out = make_output(x.shape());
    const std::size_t n = x.size();
    const double* xd = x.data();
    double* od = out.data();
    for (std::size_t i = 0; i < n; ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;

    push([xi = x.impl_, oi = out.impl_, n] {
        const double* g = oi->grad.data();
        const double* xd = xi->data.data();
        double* gx = xi->grad.data();
        for (std::size_t i = 0; i < n; ++i)
            if (xd[i] > 0.0) gx[i] += g[i];
    });
    return out;
}

MaxRows Tape::max_over_rows(const Tensor& x) {
    require_2d(x, "max_over_rows", "x");
    const std::size_t n = x.rows(), d = x.cols();
    if (n == 0) throw std::invalid_argument("max_over_rows: empty row dimension");
    enroll(x);
    Tensor out = make_output({d});
    std::vector<std::size_t> argmax(d, 0);
    const double* xd = x.data();
    double* od = out.data();
    for (std::size_t j = 0; j < d; ++j) od[j] = xd[j];
    for (std::size_t i = 1; i < n; ++i) {
        const double* xrow = xd + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            if (xrow[j] > od[j]) {
                od[j] = xrow[j];
                argmax[j] = i;
            }
        }
    }
    push([xi = x.impl_, oi = out.impl_, argmax, d] {
        const double* g = oi->grad.data();
        double* gx = xi->grad.data();
        for (std::size_t j = 0; j < d; ++j) gx[argmax[j] * d + j] += g[j];
    });
    return {out, std::move(argmax)};
}

Tensor Tape::segment_max_rows(const Tensor& x, const std::vector<std::size_t>& offsets) {
    require_2d(x, "segment_max_rows", "x");
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.rows())
        throw std::invalid_argument("segment_max_rows: offsets must start at 0 and end at row count");
    const std::size_t s = offsets.size() - 1, d = x.cols();
    enroll(x);
    Tensor out = make_output({s, d});
    std::vector<std::size_t> argmax(s * d);
    const double* xd = x.data();
    double* od = out.data();
    for (std::size_t seg = 0; seg < s; ++seg) {
        const std::size_t lo = offsets[seg], hi = offsets[seg + 1];
        if (hi <= lo) throw std::invalid_argument("segment_max_rows: empty segment");
        double* orow = od + seg * d;
        std::size_t* arow = argmax.data() + seg * d;
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] = xd[lo * d + j];
            arow[j] = lo;
        }
        for (std::size_t i = lo + 1; i < hi; ++i) {
            const double* xrow = xd + i * d;
            for (std::size_t j = 0; j < d; ++j) {
                if (xrow[j] > orow[j]) {
                    orow[j] = xrow[j];
                    arow[j] = i;
                }
            }
        }
    }
    push([xi = x.impl_, oi = out.impl_, argmax = std::move(argmax), s, d] {
        const double* g = oi->grad.data();
        double* gx = xi->grad.data();
        for (std::size_t q = 0; q < s * d; ++q) gx[argmax[q] * d + (q % d)] += g[q];
    });
    return out;
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t n = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols", "part");
        if (p.rows() != n)
            throw std::invalid_argument("concat_cols: row-count mismatch (" + std::to_string(n) +
                                        " vs " + std::to_string(p.rows()) + ")");
        total += p.cols();
    }
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        enroll(p);
        impls.push_back(p.impl_);
        widths.push_back(p.cols());
    }
    Tensor out = make_output({n, total});
    double* od = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = od + i * total;
        for (std::size_t p = 0; p < impls.size(); ++p) {
            const double* src = impls[p]->data.data() + i * widths[p];
            orow = std::copy(src, src + widths[p], orow);
        }
    }
    push([impls = std::move(impls), widths = std::move(widths), oi = out.impl_, n, total] {
        const double* g = oi->grad.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double* grow = g + i * total;
            for (std::size_t p = 0; p < impls.size(); ++p) {
                double* dst = impls[p]->grad.data() + i * widths[p];
                for (std::size_t j = 0; j < widths[p]; ++j) dst[j] += grow[j];
                grow += widths[p];
            }
        }
    });
    return out;
}

Tensor Tape::concat_cols(std::initializer_list<Tensor> parts) {
    std::vector<Tensor> v(parts);
    return concat_cols(std::span<const Tensor>(v));
}

Tensor Tape::tile_rows(const Tensor& x, std::size_t k) {
    require_2d(x, "tile_rows", "x");
    if (k == 0) throw std::invalid_argument("tile_rows: k must be >= 1");
    const std::size_t n = x.rows(), d = x.cols();
    enroll(x);
    Tensor out = make_output({n * k, d});
    const double* xd = x.data();
    double* od = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c)
            std::copy(xd + i * d, xd + (i + 1) * d, od + (i * k + c) * d);

    push([xi = x.impl_, oi = out.impl_, n, d, k] {
        const double* g = oi->grad.data();
        double* gx = xi->grad.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < k; ++c) {
                const double* grow = g + (i * k + c) * d;
                double* gxrow = gx + i * d;
                for (std::size_t j = 0; j < d; ++j) gxrow[j] += grow[j];
            }
    });
    return out;
}

Tensor Tape::conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
                    std::size_t stride, std::size_t padding) {
    if (x.ndim() != 3) throw std::invalid_argument("conv2d: x must be [c_in, h, w]");
    if (kernels.ndim() != 4) throw std::invalid_argument("conv2d: kernels must be [c_out, c_in, k, k]");
    const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const std::size_t cout = kernels.shape()[0], ksz = kernels.shape()[2];
    if (kernels.shape()[1] != cin)
        throw std::invalid_argument("conv2d: kernels expect " + std::to_string(kernels.shape()[1]) +
                                    " input channels, x has " + std::to_string(cin));
    if (kernels.shape()[3] != ksz || ksz % 2 == 0)
        throw std::invalid_argument("conv2d: kernel must be square with odd size");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
    const std::ptrdiff_t ho_s = (std::ptrdiff_t(h) + 2 * std::ptrdiff_t(padding) - std::ptrdiff_t(ksz)) / std::ptrdiff_t(stride) + 1;
    const std::ptrdiff_t wo_s = (std::ptrdiff_t(w) + 2 * std::ptrdiff_t(padding) - std::ptrdiff_t(ksz)) / std::ptrdiff_t(stride) + 1;
    if (ho_s <= 0 || wo_s <= 0) throw std::invalid_argument("conv2d: non-positive output extent");
    const std::size_t ho = std::size_t(ho_s), wo = std::size_t(wo_s);
    const bool has_bias = bias.defined();
    if (has_bias && (bias.ndim() != 1 || bias.size() != cout))
        throw std::invalid_argument("conv2d: bias must be [c_out]");

    enroll(x);
    enroll(kernels);
    if (has_bias) enroll(bias);
    Tensor out = make_output({cout, ho, wo});

    const double* xd = x.data();
    const double* kd = kernels.data();
    double* od = out.data();
    for (std::size_t co = 0; co < cout; ++co) {
        const double base = has_bias ? bias[co] : 0.0;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = base;
                const std::ptrdiff_t iy0 = std::ptrdiff_t(oy * stride) - std::ptrdiff_t(padding);
                const std::ptrdiff_t ix0 = std::ptrdiff_t(ox * stride) - std::ptrdiff_t(padding);
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* xch = xd + ci * h * w;
                    const double* kch = kd + (co * cin + ci) * ksz * ksz;
                    for (std::size_t ky = 0; ky < ksz; ++ky) {
                        const std::ptrdiff_t iy = iy0 + std::ptrdiff_t(ky);
                        if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
                        for (std::size_t kx = 0; kx < ksz; ++kx) {
                            const std::ptrdiff_t ix = ix0 + std::ptrdiff_t(kx);
                            if (ix < 0 || ix >= std::ptrdiff_t(w)) continue;
                            acc += xch[iy * std::ptrdiff_t(w) + ix] * kch[ky * ksz + kx];
                        }
                    }
                }
                od[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }

    auto bias_impl = has_bias ? bias.impl_ : nullptr;
    push([xi = x.impl_, ki = kernels.impl_, bi = bias_impl, oi = out.impl_, cin, h, w, cout, ksz,
          ho, wo, stride, padding] {
        const double* g = oi->grad.data();
        const double* xd = xi->data.data();
        const double* kd = ki->data.data();
        double* gx = xi->grad.data();
        double* gk = ki->grad.data();
        double* gb = bi ? bi->grad.data() : nullptr;
        for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const double go = g[(co * ho + oy) * wo + ox];
                    if (go == 0.0) continue;
                    if (gb) gb[co] += go;
                    const std::ptrdiff_t iy0 = std::ptrdiff_t(oy * stride) - std::ptrdiff_t(padding);
                    const std::ptrdiff_t ix0 = std::ptrdiff_t(ox * stride) - std::ptrdiff_t(padding);
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double* xch = xd + ci * h * w;
                        double* gxch = gx + ci * h * w;
                        const double* kch = kd + (co * cin + ci) * ksz * ksz;
                        double* gkch = gk + (co * cin + ci) * ksz * ksz;
                        for (std::size_t ky = 0; ky < ksz; ++ky) {
                            const std::ptrdiff_t iy = iy0 + std::ptrdiff_t(ky);
                            if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
                            for (std::size_t kx = 0; kx < ksz; ++kx) {
                                const std::ptrdiff_t ix = ix0 + std::ptrdiff_t(kx);
                                if (ix < 0 || ix >= std::ptrdiff_t(w)) continue;
                                gxch[iy * std::ptrdiff_t(w) + ix] += go * kch[ky * ksz + kx];
                                gkch[ky * ksz + kx] += go * xch[iy * std::ptrdiff_t(w) + ix];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor Tape::reshape(const Tensor& x, std::vector<std::size_t> shape) {
    if (shape_product(shape) != x.size())
        throw std::invalid_argument("reshape: element count mismatch");
    enroll(x);
    Tensor out = make_output(std::move(shape));
    out.impl_->data = x.impl_->data;
    push([xi = x.impl_, oi = out.impl_] {
        const double* g = oi->grad.data();
        double* gx = xi->grad.data();
        for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[i];
    });
    return out;
}

Tensor Tape::gather_rows(const Tensor& x, std::vector<std::size_t> indices) {
    require_2d(x, "gather_rows", "x");
    const std::size_t n = x.rows(), d = x.cols();
    for (std::size_t idx : indices)
        if (idx >= n) throw std::invalid_argument("gather_rows: index out of range");
    enroll(x);
    Tensor out = make_output({indices.size(), d});
    const double* xd = x.data();
    double* od = out.data();
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy(xd + indices[i] * d, xd + (indices[i] + 1) * d, od + i * d);

    push([xi = x.impl_, oi = out.impl_, indices = std::move(indices), d] {
        const double* g = oi->grad.data();
        double* gx = xi->grad.data();
        for (std::size_t i = 0; i < indices.size(); ++i) {
            double* dst = gx + indices[i] * d;
            const double* src = g + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    enroll(a);
    enroll(b);
    Tensor out = make_output(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    push([ai = a.impl_, bi = b.impl_, oi = out.impl_, n] {
        const double* g = oi->grad.data();
        double* ga = ai->grad.data();
        double* gb = bi->grad.data();
        for (std::size_t i = 0; i < n; ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
    enroll(a);
    enroll(b);
    Tensor out = make_output(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
    push([ai = a.impl_, bi = b.impl_, oi = out.impl_, n] {
        const double* g = oi->grad.data();
        double* ga = ai->grad.data();
        double* gb = bi->grad.data();
        for (std::size_t i = 0; i < n; ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
    return out;
}

Tensor Tape::scale(const Tensor& x, double factor) {
    enroll(x);
    Tensor out = make_output(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * factor;
    push([xi = x.impl_, oi = out.impl_, factor, n] {
        const double* g = oi->grad.data();
        double* gx = xi->grad.data();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * factor;
    });
    return out;
}

Tensor Tape::sum(const Tensor& x) {
    enroll(x);
    Tensor out = make_output({1});
    double acc = 0.0;
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    out[0] = acc;
    push([xi = x.impl_, oi = out.impl_, n] {
        const double g = oi->grad[0];
        double* gx = xi->grad.data();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
    return out;
}

Tensor Tape::custom(std::span<const Tensor> inputs, std::vector<std::size_t> out_shape,
                    std::vector<double> out_values,
                    std::function<void(const double*, const std::vector<double*>&)> backward) {
    std::vector<ImplPtr> impls;
    impls.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        enroll(t);
        impls.push_back(t.impl_);
    }
    if (shape_product(out_shape) != out_values.size())
        throw std::invalid_argument("custom: output shape does not match value count");
    Tensor out = make_output(std::move(out_shape));
    out.impl_->data = std::move(out_values);
    push([impls = std::move(impls), oi = out.impl_, backward = std::move(backward)] {
        std::vector<double*> grads;
        grads.reserve(impls.size());
        for (const ImplPtr& p : impls) grads.push_back(p->grad.data());
        backward(oi->grad.data(), grads);
    });
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.impl_->tape != this || !loss.impl_->tape_output)
        throw std::invalid_argument("backward: loss was not produced by this tape");
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, has " +
                                    std::to_string(loss.size()) + " elements");
    for (const ImplPtr& node : nodes_) {
        if (node->tape_output || node->grad.size() != node->data.size())
            node->grad.assign(node->data.size(), 0.0);
        // leaves with an existing grad buffer keep it: accumulation across
        // backward passes is how batch shards combine
    }
    loss.impl_->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->back();
}

}  // namespace pcrec
