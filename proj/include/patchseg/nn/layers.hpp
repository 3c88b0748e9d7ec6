#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "patchseg/errors.hpp"
#include "patchseg/kernels.hpp"
#include "patchseg/nn/tensor.hpp"
#include "patchseg/parallel.hpp"
#include "patchseg/rng.hpp"

namespace patchseg::nn {

enum class Mode { train, eval };

struct LayerCtx {
    Mode mode = Mode::eval;
    std::uint64_t seed = 0; // dropout mask stream for this forward pass
};

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
    std::size_t fan_in; // init scale; 0 for biases
    bool is_bias;
};

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// All layers use stride 1 and valid (no) padding; a node's backward
// accumulates into its inputs' gradient buffers so shared activations sum
// contributions from every consumer.
template <typename T>
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;
    virtual const char* kind() const = 0;
    const std::string& name() const { return name_; }

    virtual Shape out_shape(const std::vector<Shape>& in) const = 0;
    virtual void forward(const LayerCtx& ctx, const std::vector<const Tensor<T>*>& in,
                         Tensor<T>& out) = 0;
    virtual void backward(const LayerCtx& ctx, const std::vector<const Tensor<T>*>& in,
                          const Tensor<T>& out, const std::vector<Tensor<T>*>& in_grads) = 0;
    virtual std::vector<ParamRef<T>> params() { return {}; }

protected:
    [[noreturn]] void shape_error(const std::vector<Shape>& in, const char* expect) const {
        std::string msg = std::string(kind()) + " '" + name_ + "': " + expect + "; got";
        for (const auto& s : in) msg += " " + shape_str(s);
        throw ValidationError(msg);
    }
    std::string name_;
};

// ------------------------------------------------------------------ dense --

template <typename T>
class Dense : public Layer<T> {
public:
    Dense(std::string name, std::size_t in, std::size_t out, bool bias = true)
        : Layer<T>(std::move(name)), in_(in), out_(out), bias_(bias) {
        w_.resize({in_, out_});
        if (bias_) b_.resize({out_});
    }
    const char* kind() const override { return "dense"; }

    Shape out_shape(const std::vector<Shape>& in) const override {
        if (in.size() != 1 || in[0].size() != 1 || in[0][0] != in_)
            this->shape_error(in, "expected one rank-1 input of matching width");
        return {out_};
    }

    void forward(const LayerCtx&, const std::vector<const Tensor<T>*>& in,
                 Tensor<T>& out) override {
        const auto& x = *in[0];
        const std::size_t nb = x.batch();
        kern::gemm_nn(nb, out_, in_, x.v.data(), w_.v.data(), out.v.data(), false);
        if (bias_) {
            const auto& k = kern::table_for(T{});
            for (std::size_t n = 0; n < nb; ++n)
                k.add(out.v.data() + n * out_, b_.v.data(), out.v.data() + n * out_, out_);
        }
    }

    void backward(const LayerCtx&, const std::vector<const Tensor<T>*>& in, const Tensor<T>& out,
                  const std::vector<Tensor<T>*>& in_grads) override {
        const auto& x = *in[0];
        const std::size_t nb = x.batch();
        kern::gemm_tn(in_, out_, nb, x.v.data(), out.g.data(), w_.g.data(), true);
        if (bias_) {
            const auto& k = kern::table_for(T{});
            for (std::size_t n = 0; n < nb; ++n)
                k.axpy(out_, T(1), out.g.data() + n * out_, b_.g.data());
        }
        kern::gemm_nt(nb, in_, out_, out.g.data(), w_.v.data(), in_grads[0]->g.data(), true);
    }

    std::vector<ParamRef<T>> params() override {
        std::vector<ParamRef<T>> p{{this->name_ + ".w", &w_, in_, false}};
        if (bias_) p.push_back({this->name_ + ".b", &b_, 0, true});
        return p;
    }

    Tensor<T>& weights() { return w_; }
    Tensor<T>& bias() { return b_; }

private:
    std::size_t in_, out_;
    bool bias_;
    Tensor<T> w_, b_;
};

// ------------------------------------------------------------- conv2d/3d --

// Shared im2col-based implementation; Spatial = 2 or 3 trailing axes.
template <typename T, int Spatial>
class ConvNd : public Layer<T> {
public:
    ConvNd(std::string name, std::size_t cin, std::size_t cout, std::size_t ksize,
           bool bias = true)
        : Layer<T>(std::move(name)), cin_(cin), cout_(cout), ksize_(ksize), bias_(bias) {
        kvol_ = 1;
        for (int a = 0; a < Spatial; ++a) kvol_ *= ksize_;
        w_.resize({cout_, cin_ * kvol_});
        if (bias_) b_.resize({cout_});
    }
    const char* kind() const override { return Spatial == 2 ? "conv2d" : "conv3d"; }

    Shape out_shape(const std::vector<Shape>& in) const override {
        if (in.size() != 1 || in[0].size() != static_cast<std::size_t>(Spatial) + 1 ||
            in[0][0] != cin_)
            this->shape_error(in, "expected one input with matching channel count");
        Shape out{cout_};
        for (int a = 0; a < Spatial; ++a) {
            const std::size_t extent = in[0][1 + a];
            if (extent < ksize_) this->shape_error(in, "spatial extent smaller than kernel");
            out.push_back(extent - ksize_ + 1);
        }
        return out;
    }

    void forward(const LayerCtx&, const std::vector<const Tensor<T>*>& in,
                 Tensor<T>& out) override {
        const auto& x = *in[0];
        const std::size_t nb = x.batch();
        const Geometry g = geometry(x.shape, out.shape);
        parallel_for(nb, [&](std::size_t lo, std::size_t hi) {
            std::vector<T> col(g.kdim * g.pdim);
            for (std::size_t n = lo; n < hi; ++n) {
                im2col(x.v.data() + n * g.in_size, g, col.data());
                T* y = out.v.data() + n * g.out_size;
                kern::gemm_nn(cout_, g.pdim, g.kdim, w_.v.data(), col.data(), y, false);
                if (bias_)
                    for (std::size_t c = 0; c < cout_; ++c) {
                        const T bc = b_.v[c];
                        T* row = y + c * g.pdim;
                        for (std::size_t p = 0; p < g.pdim; ++p) row[p] += bc;
                    }
            }
        });
    }

    void backward(const LayerCtx&, const std::vector<const Tensor<T>*>& in, const Tensor<T>& out,
                  const std::vector<Tensor<T>*>& in_grads) override {
        const auto& x = *in[0];
        const std::size_t nb = x.batch();
        const Geometry g = geometry(x.shape, out.shape);

        // Weight gradients are reduced per fixed-size sample chunk and summed
        // in chunk order, so the result does not depend on the worker count.
        const std::size_t nchunks = (nb + kChunk - 1) / kChunk;
        std::vector<std::vector<T>> dw_chunk(nchunks), db_chunk(nchunks);
        parallel_for(nchunks, [&](std::size_t clo, std::size_t chi) {
            std::vector<T> col(g.kdim * g.pdim), dcol(g.kdim * g.pdim);
            for (std::size_t ci = clo; ci < chi; ++ci) {
                auto& dw = dw_chunk[ci];
                auto& db = db_chunk[ci];
                dw.assign(w_.v.size(), T(0));
                if (bias_) db.assign(cout_, T(0));
                const std::size_t n0 = ci * kChunk, n1 = std::min(nb, n0 + kChunk);
                for (std::size_t n = n0; n < n1; ++n) {
                    const T* dy = out.g.data() + n * g.out_size;
                    im2col(x.v.data() + n * g.in_size, g, col.data());
                    kern::gemm_nt(cout_, g.kdim, g.pdim, dy, col.data(), dw.data(), true);
                    if (bias_)
                        for (std::size_t c = 0; c < cout_; ++c) {
                            T s = T(0);
                            const T* row = dy + c * g.pdim;
                            for (std::size_t p = 0; p < g.pdim; ++p) s += row[p];
                            db[c] += s;
                        }
                    kern::gemm_tn(g.kdim, g.pdim, cout_, w_.v.data(), dy, dcol.data(), false);
                    col2im_add(dcol.data(), g, in_grads[0]->g.data() + n * g.in_size);
                }
            }
        });
        const auto& k = kern::table_for(T{});
        for (std::size_t ci = 0; ci < nchunks; ++ci) {
            k.axpy(w_.g.size(), T(1), dw_chunk[ci].data(), w_.g.data());
            if (bias_) k.axpy(cout_, T(1), db_chunk[ci].data(), b_.g.data());
        }
    }

    std::vector<ParamRef<T>> params() override {
        std::vector<ParamRef<T>> p{{this->name_ + ".w", &w_, cin_ * kvol_, false}};
        if (bias_) p.push_back({this->name_ + ".b", &b_, 0, true});
        return p;
    }

    Tensor<T>& weights() { return w_; }

private:
    static constexpr std::size_t kChunk = 32;

    struct Geometry {
        std::size_t in_extent[3], out_extent[3];
        std::size_t in_size, out_size; // per sample
        std::size_t kdim, pdim;        // im2col rows, output positions
    };

    Geometry geometry(const Shape& in_shape, const Shape& out_shape) const {
        Geometry g{};
        g.in_size = g.out_size = 1;
        g.pdim = 1;
        for (int a = 0; a < Spatial; ++a) {
            g.in_extent[a] = in_shape[2 + a];
            g.out_extent[a] = out_shape[2 + a];
            g.pdim *= g.out_extent[a];
        }
        g.in_size = cin_;
        g.out_size = cout_;
        for (int a = 0; a < Spatial; ++a) {
            g.in_size *= g.in_extent[a];
            g.out_size *= g.out_extent[a];
        }
        g.kdim = cin_ * kvol_;
        return g;
    }

    // col[(c*kvol + kidx) * pdim + p] = x(c, out_pos(p) + offset(kidx))
    void im2col(const T* x, const Geometry& g, T* col) const {
        if constexpr (Spatial == 2) {
            const std::size_t ih = g.in_extent[0], iw = g.in_extent[1];
            const std::size_t oh = g.out_extent[0], ow = g.out_extent[1];
            std::size_t row = 0;
            for (std::size_t c = 0; c < cin_; ++c) {
                const T* xc = x + c * ih * iw;
                for (std::size_t dy = 0; dy < ksize_; ++dy)
                    for (std::size_t dx = 0; dx < ksize_; ++dx, ++row) {
                        T* dst = col + row * g.pdim;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const T* src = xc + (oy + dy) * iw + dx;
                            for (std::size_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = src[ox];
                        }
                    }
            }
        } else {
            const std::size_t id = g.in_extent[0], ih = g.in_extent[1], iw = g.in_extent[2];
            const std::size_t od = g.out_extent[0], oh = g.out_extent[1], ow = g.out_extent[2];
            std::size_t row = 0;
            for (std::size_t c = 0; c < cin_; ++c) {
                const T* xc = x + c * id * ih * iw;
                for (std::size_t dz = 0; dz < ksize_; ++dz)
                    for (std::size_t dy = 0; dy < ksize_; ++dy)
                        for (std::size_t dx = 0; dx < ksize_; ++dx, ++row) {
                            T* dst = col + row * g.pdim;
                            std::size_t p = 0;
                            for (std::size_t oz = 0; oz < od; ++oz)
                                for (std::size_t oy = 0; oy < oh; ++oy) {
                                    const T* src = xc + ((oz + dz) * ih + oy + dy) * iw + dx;
                                    for (std::size_t ox = 0; ox < ow; ++ox, ++p) dst[p] = src[ox];
                                }
                        }
            }
        }
    }

    void col2im_add(const T* col, const Geometry& g, T* dx) const {
        if constexpr (Spatial == 2) {
            const std::size_t ih = g.in_extent[0], iw = g.in_extent[1];
            const std::size_t oh = g.out_extent[0], ow = g.out_extent[1];
            std::size_t row = 0;
            for (std::size_t c = 0; c < cin_; ++c) {
                T* xc = dx + c * ih * iw;
                for (std::size_t dy = 0; dy < ksize_; ++dy)
                    for (std::size_t dx2 = 0; dx2 < ksize_; ++dx2, ++row) {
                        const T* src = col + row * g.pdim;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            T* dst = xc + (oy + dy) * iw + dx2;
                            for (std::size_t ox = 0; ox < ow; ++ox) dst[ox] += src[oy * ow + ox];
                        }
                    }
            }
        } else {
            const std::size_t id = g.in_extent[0], ih = g.in_extent[1], iw = g.in_extent[2];
            const std::size_t od = g.out_extent[0], oh = g.out_extent[1], ow = g.out_extent[2];
            std::size_t row = 0;
            for (std::size_t c = 0; c < cin_; ++c) {
                T* xc = dx + c * id * ih * iw;
                for (std::size_t dz = 0; dz < ksize_; ++dz)
                    for (std::size_t dy = 0; dy < ksize_; ++dy)
                        for (std::size_t dx2 = 0; dx2 < ksize_; ++dx2, ++row) {
                            const T* src = col + row * g.pdim;
                            std::size_t p = 0;
                            for (std::size_t oz = 0; oz < od; ++oz)
                                for (std::size_t oy = 0; oy < oh; ++oy) {
                                    T* dst = xc + ((oz + dz) * ih + oy + dy) * iw + dx2;
                                    for (std::size_t ox = 0; ox < ow; ++ox, ++p) dst[ox] += src[p];
                                }
                        }
            }
        }
    }

    std::size_t cin_, cout_, ksize_, kvol_;
    bool bias_;
    Tensor<T> w_, b_;
};

template <typename T>
using Conv2d = ConvNd<T, 2>;
template <typename T>
using Conv3d = ConvNd<T, 3>;

// ------------------------------------------------------------------- relu --

template <typename T>
class Relu : public Layer<T> {
public:
    using Layer<T>::Layer;
    const char* kind() const override { return "relu"; }

    Shape out_shape(const std::vector<Shape>& in) const override {
        if (in.size() != 1) this->shape_error(in, "expected one input");
        return in[0];
    }

    void forward(const LayerCtx&, const std::vector<const Tensor<T>*>& in,
                 Tensor<T>& out) override {
        kern::table_for(T{}).relu_fwd(in[0]->v.data(), out.v.data(), out.size());
    }

    void backward(const LayerCtx&, const std::vector<const Tensor<T>*>& in, const Tensor<T>& out,
                  const std::vector<Tensor<T>*>& in_grads) override {
        scratch_.assign(out.size(), T(0));
        const auto& k = kern::table_for(T{});
        k.relu_bwd(in[0]->v.data(), out.g.data(), scratch_.data(), out.size());
        k.axpy(out.size(), T(1), scratch_.data(), in_grads[0]->g.data());
    }

private:
    std::vector<T> scratch_;
};

// ---------------------------------------------------------------- dropout --

// Inverted dropout: at train time units are zeroed with probability p and
// survivors scaled by 1/(1-p); evaluation is the identity.
template <typename T>
class Dropout : public Layer<T> {
public:
    Dropout(std::string name, double p) : Layer<T>(std::move(name)), p_(p) {
        if (p_ < 0.0 || p_ >= 1.0)
            throw ValidationError("dropout '" + this->name_ + "': p must be in [0, 1)");
        stream_ = fnv1a(this->name_);
    }
    const char* kind() const override { return "dropout"; }

    Shape out_shape(const std::vector<Shape>& in) const override {
        if (in.size() != 1) this->shape_error(in, "expected one input");
        return in[0];
    }

    void forward(const LayerCtx& ctx, const std::vector<const Tensor<T>*>& in,
                 Tensor<T>& out) override {
        const auto& x = *in[0];
        train_pass_ = ctx.mode == Mode::train && p_ > 0.0;
        if (!train_pass_) {
            out.v = x.v;
            return;
        }
        mask_.resize(x.size());
        Prng rng(ctx.seed, stream_);
        const T keep_scale = static_cast<T>(1.0 / (1.0 - p_));
        for (std::size_t i = 0; i < x.size(); ++i) {
            mask_[i] = rng.next_double() >= p_ ? keep_scale : T(0);
            out.v[i] = x.v[i] * mask_[i];
        }
    }

    void backward(const LayerCtx&, const std::vector<const Tensor<T>*>&, const Tensor<T>& out,
                  const std::vector<Tensor<T>*>& in_grads) override {
        T* dx = in_grads[0]->g.data();
        if (!train_pass_) {
            kern::table_for(T{}).axpy(out.size(), T(1), out.g.data(), dx);
            return;
        }
        for (std::size_t i = 0; i < out.size(); ++i) dx[i] += out.g[i] * mask_[i];
    }

private:
    double p_;
    std::uint64_t stream_ = 0;
    bool train_pass_ = false;
    std::vector<T> mask_;
};

// ---------------------------------------------------------------- softmax --

template <typename T>
class Softmax : public Layer<T> {
public:
    using Layer<T>::Layer;
    const char* kind() const override { return "softmax"; }

    Shape out_shape(const std::vector<Shape>& in) const override {
        if (in.size() != 1 || in[0].size() != 1)
            this->shape_error(in, "expected one rank-1 input");
        return in[0];
    }

    void forward(const LayerCtx&, const std::vector<const Tensor<T>*>& in,
                 Tensor<T>& out) override {
        const auto& x = *in[0];
        const std::size_t nb = x.batch(), c = x.sample_size();
        for (std::size_t n = 0; n < nb; ++n) {
            const T* row = x.v.data() + n * c;
            T* y = out.v.data() + n * c;
            T m = row[0];
            for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double e = std::exp(static_cast<double>(row[j] - m));
                y[j] = static_cast<T>(e);
                s += e;
            }
            const T inv = static_cast<T>(1.0 / s);
            for (std::size_t j = 0; j < c; ++j) y[j] *= inv;
        }
    }

    void backward(const LayerCtx&, const std::vector<const Tensor<T>*>&, const Tensor<T>& out,
                  const std::vector<Tensor<T>*>& in_grads) override {
        const std::size_t nb = out.batch(), c = out.sample_size();
        for (std::size_t n = 0; n < nb; ++n) {
            const T* y = out.v.data() + n * c;
            const T* dy = out.g.data() + n * c;
            T* dx = in_grads[0]->g.data() + n * c;
            T dot = T(0);
            for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    }
};

// ----------------------------------------------------------------- concat --

// Concatenation along axis 1. Per-sample layouts are channel-major, so each
// input contributes one contiguous block per sample.
template <typename T>
class Concat : public Layer<T> {
public:
    using Layer<T>::Layer;
    const char* kind() const override { return "concat"; }

    Shape out_shape(const std::vector<Shape>& in) const override {
        if (in.empty()) this->shape_error(in, "expected at least one input");
        Shape out = in[0];
        for (std::size_t i = 1; i < in.size(); ++i) {
            if (in[i].size() != out.size()) this->shape_error(in, "rank mismatch");
            for (std::size_t a = 1; a < out.size(); ++a)
                if (in[i][a] != out[a]) this->shape_error(in, "trailing extent mismatch");
            out[0] += in[i][0];
        }
        return out;
    }

    void forward(const LayerCtx&, const std::vector<const Tensor<T>*>& in,
                 Tensor<T>& out) override {
        const std::size_t nb = out.batch(), stride = out.sample_size();
        for (std::size_t n = 0; n < nb; ++n) {
            T* dst = out.v.data() + n * stride;
            for (const auto* x : in) {
                const std::size_t len = x->sample_size();
                const T* src = x->v.data() + n * len;
                for (std::size_t i = 0; i < len; ++i) dst[i] = src[i];
                dst += len;
            }
        }
    }

    void backward(const LayerCtx&, const std::vector<const Tensor<T>*>& in, const Tensor<T>& out,
                  const std::vector<Tensor<T>*>& in_grads) override {
        const std::size_t nb = out.batch(), stride = out.sample_size();
        for (std::size_t n = 0; n < nb; ++n) {
            const T* src = out.g.data() + n * stride;
            for (std::size_t i = 0; i < in.size(); ++i) {
                const std::size_t len = in[i]->sample_size();
                T* dst = in_grads[i]->g.data() + n * len;
                for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
                src += len;
            }
        }
    }
};

// -------------------------------------------------------------------- add --

template <typename T>
class Add : public Layer<T> {
public:
    using Layer<T>::Layer;
    const char* kind() const override { return "add"; }

    Shape out_shape(const std::vector<Shape>& in) const override {
        if (in.size() != 2 || in[0] != in[1]) this->shape_error(in, "expected two equal shapes");
        return in[0];
    }

    void forward(const LayerCtx&, const std::vector<const Tensor<T>*>& in,
                 Tensor<T>& out) override {
        kern::table_for(T{}).add(in[0]->v.data(), in[1]->v.data(), out.v.data(), out.size());
    }

    void backward(const LayerCtx&, const std::vector<const Tensor<T>*>&, const Tensor<T>& out,
                  const std::vector<Tensor<T>*>& in_grads) override {
        const auto& k = kern::table_for(T{});
        k.axpy(out.size(), T(1), out.g.data(), in_grads[0]->g.data());
        k.axpy(out.size(), T(1), out.g.data(), in_grads[1]->g.data());
    }
};

// ---------------------------------------------------------------- flatten --

template <typename T>
class Flatten : public Layer<T> {
public:
    using Layer<T>::Layer;
    const char* kind() const override { return "flatten"; }

    Shape out_shape(const std::vector<Shape>& in) const override {
        if (in.size() != 1) this->shape_error(in, "expected one input");
        return {shape_size(in[0])};
    }

    void forward(const LayerCtx&, const std::vector<const Tensor<T>*>& in,
                 Tensor<T>& out) override {
        out.v = in[0]->v;
    }

    void backward(const LayerCtx&, const std::vector<const Tensor<T>*>&, const Tensor<T>& out,
                  const std::vector<Tensor<T>*>& in_grads) override {
        kern::table_for(T{}).axpy(out.size(), T(1), out.g.data(), in_grads[0]->g.data());
    }
};

} // namespace patchseg::nn
