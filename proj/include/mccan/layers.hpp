#pragma once

// CPU layer zoo with explicit backward passes. Activations are cached per
// forward call on an external tape, so one set of weights can appear in
// several paths of the same training step before any backward runs.
// Convolutions go through im2col + Eigen GEMM.

#include <Eigen/Dense>

#include <any>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mccan/tensor.hpp"

namespace mccan {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

struct Tape {
    std::vector<std::any> caches;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, std::any& cache) const = 0;
    // Returns grad w.r.t. input. Accumulates parameter grads unless the
    // layer is being used frozen (generator update through a fixed D).
    virtual Tensor backward(const Tensor& gy, const std::any& cache, bool accum_param_grads) = 0;
    virtual void collect_params(std::vector<Tensor*>& ps) { (void)ps; }
    virtual void collect_grads(std::vector<Tensor*>& gs) { (void)gs; }
    // Per-sample multiply-accumulates at the current spatial size; updates
    // (h, w) to this layer's output size.
    virtual std::uint64_t macs(int& h, int& w) const { (void)h; (void)w; return 0; }
    virtual std::string kind() const = 0;
};

// ---------------------------------------------------------------------------
// im2col / col2im

inline int conv_out_size(int in, int k, int stride, int pad) {
    const int out = (in + 2 * pad - k) / stride + 1;
    if (out <= 0) throw std::invalid_argument("conv: input too small for kernel");
    return out;
}

// cols: (c*k*k) x (oh*ow), one sample.
inline void im2col(const double* x, int c, int h, int w, int k, int stride, int pad,
                   int oh, int ow, double* cols) {
    for (int ic = 0; ic < c; ++ic)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* dst = cols + ((static_cast<std::size_t>(ic) * k + ky) * k + kx) *
                                         (static_cast<std::size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        *dst++ = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                     ? x[(static_cast<std::size_t>(ic) * h + iy) * w + ix]
                                     : 0.0;
                    }
                }
            }
}

inline void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad,
                   int oh, int ow, double* x /* accumulated into */) {
    for (int ic = 0; ic < c; ++ic)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* src = cols + ((static_cast<std::size_t>(ic) * k + ky) * k + kx) *
                                               (static_cast<std::size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            x[(static_cast<std::size_t>(ic) * h + iy) * w + ix] += src[oy * ow + ox];
                    }
                }
            }
}

// ---------------------------------------------------------------------------

class Conv2d : public Layer {
public:
    Conv2d(int cin, int cout, int k, int stride, int pad, std::mt19937_64& rng)
        : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad),
          weight_(1, 1, cout, cin * k * k), bias_(1, 1, 1, cout),
          gw_(1, 1, cout, cin * k * k), gb_(1, 1, 1, cout) {
        if (cin < 1 || cout < 1 || k < 1 || stride < 1 || pad < 0)
            throw std::invalid_argument("conv: invalid spec");
        std::normal_distribution<double> init(0.0, 0.02);
        for (auto& p : weight_.v) p = init(rng);
    }

    Tensor forward(const Tensor& x, std::any& cache) const override {
        if (x.c != cin_) throw std::invalid_argument("conv: channel mismatch");
        const int oh = conv_out_size(x.h, k_, stride_, pad_);
        const int ow = conv_out_size(x.w, k_, stride_, pad_);
        Tensor y(x.n, cout_, oh, ow);
        const int ckk = cin_ * k_ * k_;
        std::vector<double> cols(static_cast<std::size_t>(ckk) * oh * ow);
        CMapM W(weight_.v.data(), cout_, ckk);
        for (int in = 0; in < x.n; ++in) {
            im2col(&x.v[static_cast<std::size_t>(in) * cin_ * x.h * x.w], cin_, x.h, x.w,
                   k_, stride_, pad_, oh, ow, cols.data());
            CMapM C(cols.data(), ckk, static_cast<std::size_t>(oh) * ow);
            MapM Y(&y.v[static_cast<std::size_t>(in) * cout_ * oh * ow], cout_,
                   static_cast<std::size_t>(oh) * ow);
            Y.noalias() = W * C;
            for (int oc = 0; oc < cout_; ++oc) Y.row(oc).array() += bias_.v[oc];
        }
        cache = x; // keep input for dW
        return y;
    }

    Tensor backward(const Tensor& gy, const std::any& cache, bool accum) override {
        const Tensor& x = std::any_cast<const Tensor&>(cache);
        const int oh = gy.h, ow = gy.w;
        const int ckk = cin_ * k_ * k_;
        Tensor gx(x.n, cin_, x.h, x.w);
        std::vector<double> cols(static_cast<std::size_t>(ckk) * oh * ow);
        std::vector<double> dcols(cols.size());
        CMapM W(weight_.v.data(), cout_, ckk);
        MapM GW(gw_.v.data(), cout_, ckk);
        for (int in = 0; in < x.n; ++in) {
            CMapM GY(&gy.v[static_cast<std::size_t>(in) * cout_ * oh * ow], cout_,
                     static_cast<std::size_t>(oh) * ow);
            if (accum) {
                im2col(&x.v[static_cast<std::size_t>(in) * cin_ * x.h * x.w], cin_, x.h, x.w,
                       k_, stride_, pad_, oh, ow, cols.data());
                CMapM C(cols.data(), ckk, static_cast<std::size_t>(oh) * ow);
                GW.noalias() += GY * C.transpose();
                for (int oc = 0; oc < cout_; ++oc) gb_.v[oc] += GY.row(oc).sum();
            }
            MapM DC(dcols.data(), ckk, static_cast<std::size_t>(oh) * ow);
            DC.noalias() = W.transpose() * GY;
            col2im(dcols.data(), cin_, x.h, x.w, k_, stride_, pad_, oh, ow,
                   &gx.v[static_cast<std::size_t>(in) * cin_ * x.h * x.w]);
        }
        return gx;
    }

    void collect_params(std::vector<Tensor*>& ps) override { ps.push_back(&weight_); ps.push_back(&bias_); }
    void collect_grads(std::vector<Tensor*>& gs) override { gs.push_back(&gw_); gs.push_back(&gb_); }

    std::uint64_t macs(int& h, int& w) const override {
        const int oh = conv_out_size(h, k_, stride_, pad_);
        const int ow = conv_out_size(w, k_, stride_, pad_);
        const std::uint64_t m = static_cast<std::uint64_t>(oh) * ow * k_ * k_ * cin_ * cout_;
        h = oh; w = ow;
        return m;
    }
    std::string kind() const override { return "conv"; }

private:
    int cin_, cout_, k_, stride_, pad_;
    Tensor weight_, bias_, gw_, gb_;
};

// Transposed convolution (stride-2 upsampling in the generator decoder).
// Weight layout (cin x cout*k*k); forward is the data-gradient of the
// mirrored strided convolution.
class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(int cin, int cout, int k, int stride, int pad, int out_pad,
                    std::mt19937_64& rng)
        : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad), out_pad_(out_pad),
          weight_(1, 1, cin, cout * k * k), bias_(1, 1, 1, cout),
          gw_(1, 1, cin, cout * k * k), gb_(1, 1, 1, cout) {
        if (cin < 1 || cout < 1 || k < 1 || stride < 1 || pad < 0 || out_pad < 0 ||
            out_pad >= stride)
            throw std::invalid_argument("deconv: invalid spec");
        std::normal_distribution<double> init(0.0, 0.02);
        for (auto& p : weight_.v) p = init(rng);
    }

    int out_size(int in) const { return (in - 1) * stride_ - 2 * pad_ + k_ + out_pad_; }

    Tensor forward(const Tensor& x, std::any& cache) const override {
        if (x.c != cin_) throw std::invalid_argument("deconv: channel mismatch");
        const int oh = out_size(x.h), ow = out_size(x.w);
        Tensor y(x.n, cout_, oh, ow);
        const int ckk = cout_ * k_ * k_;
        std::vector<double> cols(static_cast<std::size_t>(ckk) * x.h * x.w);
        CMapM W(weight_.v.data(), cin_, ckk);
        for (int in = 0; in < x.n; ++in) {
            CMapM X(&x.v[static_cast<std::size_t>(in) * cin_ * x.h * x.w], cin_,
                    static_cast<std::size_t>(x.h) * x.w);
            MapM C(cols.data(), ckk, static_cast<std::size_t>(x.h) * x.w);
            C.noalias() = W.transpose() * X;
            // scatter columns onto the output canvas
            col2im(cols.data(), cout_, oh, ow, k_, stride_, pad_, x.h, x.w,
                   &y.v[static_cast<std::size_t>(in) * cout_ * oh * ow]);
        }
        for (int in = 0; in < y.n; ++in)
            for (int oc = 0; oc < cout_; ++oc) {
                double* p = &y.v[(static_cast<std::size_t>(in) * cout_ + oc) * oh * ow];
                for (int i = 0; i < oh * ow; ++i) p[i] += bias_.v[oc];
            }
        cache = x;
        return y;
    }

    Tensor backward(const Tensor& gy, const std::any& cache, bool accum) override {
        const Tensor& x = std::any_cast<const Tensor&>(cache);
        const int oh = gy.h, ow = gy.w;
        const int ckk = cout_ * k_ * k_;
        Tensor gx(x.n, cin_, x.h, x.w);
        std::vector<double> cols(static_cast<std::size_t>(ckk) * x.h * x.w);
        CMapM W(weight_.v.data(), cin_, ckk);
        MapM GW(gw_.v.data(), cin_, ckk);
        for (int in = 0; in < x.n; ++in) {
            // gather: im2col over the incoming gradient canvas
            im2col(&gy.v[static_cast<std::size_t>(in) * cout_ * oh * ow], cout_, oh, ow,
                   k_, stride_, pad_, x.h, x.w, cols.data());
            CMapM C(cols.data(), ckk, static_cast<std::size_t>(x.h) * x.w);
            MapM GX(&gx.v[static_cast<std::size_t>(in) * cin_ * x.h * x.w], cin_,
                    static_cast<std::size_t>(x.h) * x.w);
            GX.noalias() = W * C;
            if (accum) {
                CMapM X(&x.v[static_cast<std::size_t>(in) * cin_ * x.h * x.w], cin_,
                        static_cast<std::size_t>(x.h) * x.w);
                GW.noalias() += X * C.transpose();
                for (int oc = 0; oc < cout_; ++oc) {
                    const double* p = &gy.v[(static_cast<std::size_t>(in) * cout_ + oc) * oh * ow];
                    double s = 0.0;
                    for (int i = 0; i < oh * ow; ++i) s += p[i];
                    gb_.v[oc] += s;
                }
            }
        }
        return gx;
    }

    void collect_params(std::vector<Tensor*>& ps) override { ps.push_back(&weight_); ps.push_back(&bias_); }
    void collect_grads(std::vector<Tensor*>& gs) override { gs.push_back(&gw_); gs.push_back(&gb_); }

    std::uint64_t macs(int& h, int& w) const override {
        const std::uint64_t m = static_cast<std::uint64_t>(h) * w * k_ * k_ * cin_ * cout_;
        h = out_size(h); w = out_size(w);
        return m;
    }
    std::string kind() const override { return "deconv"; }

private:
    int cin_, cout_, k_, stride_, pad_, out_pad_;
    Tensor weight_, bias_, gw_, gb_;
};

class InstanceNorm : public Layer {
public:
    explicit InstanceNorm(int c, double eps = 1e-5)
        : c_(c), eps_(eps), gamma_(1, 1, 1, c, 1.0), beta_(1, 1, 1, c),
          ggamma_(1, 1, 1, c), gbeta_(1, 1, 1, c) {
        if (c < 1) throw std::invalid_argument("instancenorm: invalid channels");
    }

    struct CacheData {
        Tensor xhat;
        std::vector<double> inv_sigma; // per (n, c)
    };

    Tensor forward(const Tensor& x, std::any& cache) const override {
        if (x.c != c_) throw std::invalid_argument("instancenorm: channel mismatch");
        const int m = x.h * x.w;
        if (m < 1) throw std::invalid_argument("instancenorm: empty plane");
        CacheData cd;
        cd.xhat = Tensor(x.n, x.c, x.h, x.w);
        cd.inv_sigma.resize(static_cast<std::size_t>(x.n) * x.c);
        Tensor y(x.n, x.c, x.h, x.w);
        for (int in = 0; in < x.n; ++in)
            for (int ic = 0; ic < x.c; ++ic) {
                const double* p = &x.v[(static_cast<std::size_t>(in) * x.c + ic) * m];
                double mu = 0.0;
                for (int i = 0; i < m; ++i) mu += p[i];
                mu /= m;
                double var = 0.0;
                for (int i = 0; i < m; ++i) var += (p[i] - mu) * (p[i] - mu);
                var /= m;
                const double inv = 1.0 / std::sqrt(var + eps_);
                cd.inv_sigma[static_cast<std::size_t>(in) * x.c + ic] = inv;
                double* xh = &cd.xhat.v[(static_cast<std::size_t>(in) * x.c + ic) * m];
                double* py = &y.v[(static_cast<std::size_t>(in) * x.c + ic) * m];
                const double g = gamma_.v[ic], b = beta_.v[ic];
                for (int i = 0; i < m; ++i) {
                    xh[i] = (p[i] - mu) * inv;
                    py[i] = g * xh[i] + b;
                }
            }
        cache = std::move(cd);
        return y;
    }

    Tensor backward(const Tensor& gy, const std::any& cache, bool accum) override {
        const auto& cd = std::any_cast<const CacheData&>(cache);
        const int m = gy.h * gy.w;
        Tensor gx(gy.n, gy.c, gy.h, gy.w);
        for (int in = 0; in < gy.n; ++in)
            for (int ic = 0; ic < gy.c; ++ic) {
                const std::size_t off = (static_cast<std::size_t>(in) * gy.c + ic) * m;
                const double* dy = &gy.v[off];
                const double* xh = &cd.xhat.v[off];
                double* dx = &gx.v[off];
                const double inv = cd.inv_sigma[static_cast<std::size_t>(in) * gy.c + ic];
                const double g = gamma_.v[ic];
                double sum_dy = 0.0, sum_dyxh = 0.0;
                for (int i = 0; i < m; ++i) {
                    sum_dy += dy[i];
                    sum_dyxh += dy[i] * xh[i];
                }
                if (accum) {
                    gbeta_.v[ic] += sum_dy;
                    ggamma_.v[ic] += sum_dyxh;
                }
                const double a = g * inv / m;
                for (int i = 0; i < m; ++i)
                    dx[i] = a * (m * dy[i] - sum_dy - xh[i] * sum_dyxh);
            }
        return gx;
    }

    void collect_params(std::vector<Tensor*>& ps) override { ps.push_back(&gamma_); ps.push_back(&beta_); }
    void collect_grads(std::vector<Tensor*>& gs) override { gs.push_back(&ggamma_); gs.push_back(&gbeta_); }
    std::string kind() const override { return "inorm"; }

private:
    int c_;
    double eps_;
    Tensor gamma_, beta_, ggamma_, gbeta_;
};

class ReLU : public Layer {
public:
    Tensor forward(const Tensor& x, std::any& cache) const override {
        Tensor y = x;
        for (auto& v : y.v) v = v > 0 ? v : 0.0;
        cache = x;
        return y;
    }
    Tensor backward(const Tensor& gy, const std::any& cache, bool) override {
        const Tensor& x = std::any_cast<const Tensor&>(cache);
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (x.v[i] <= 0) gx.v[i] = 0.0;
        return gx;
    }
    std::string kind() const override { return "relu"; }
};

class LeakyReLU : public Layer {
public:
    explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
    Tensor forward(const Tensor& x, std::any& cache) const override {
        Tensor y = x;
        for (auto& v : y.v) v = v > 0 ? v : slope_ * v;
        cache = x;
        return y;
    }
    Tensor backward(const Tensor& gy, const std::any& cache, bool) override {
        const Tensor& x = std::any_cast<const Tensor&>(cache);
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (x.v[i] <= 0) gx.v[i] *= slope_;
        return gx;
    }
    std::string kind() const override { return "lrelu"; }

private:
    double slope_;
};

class Tanh : public Layer {
public:
    Tensor forward(const Tensor& x, std::any& cache) const override {
        Tensor y = x;
        for (auto& v : y.v) v = std::tanh(v);
        cache = y;
        return y;
    }
    Tensor backward(const Tensor& gy, const std::any& cache, bool) override {
        const Tensor& y = std::any_cast<const Tensor&>(cache);
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] *= 1.0 - y.v[i] * y.v[i];
        return gx;
    }
    std::string kind() const override { return "tanh"; }
};

class ReflectionPad : public Layer {
public:
    explicit ReflectionPad(int p) : p_(p) {
        if (p < 0) throw std::invalid_argument("reflectionpad: negative pad");
    }

    Tensor forward(const Tensor& x, std::any& cache) const override {
        if (x.h <= p_ || x.w <= p_)
            throw std::invalid_argument("reflectionpad: input smaller than pad");
        Tensor y(x.n, x.c, x.h + 2 * p_, x.w + 2 * p_);
        for (int in = 0; in < x.n; ++in)
            for (int ic = 0; ic < x.c; ++ic)
                for (int oy = 0; oy < y.h; ++oy)
                    for (int ox = 0; ox < y.w; ++ox)
                        y.at(in, ic, oy, ox) = x.at(in, ic, reflect(oy - p_, x.h),
                                                    reflect(ox - p_, x.w));
        cache = std::make_pair(x.h, x.w);
        return y;
    }

    Tensor backward(const Tensor& gy, const std::any& cache, bool) override {
        auto [h, w] = std::any_cast<std::pair<int, int>>(cache);
        Tensor gx(gy.n, gy.c, h, w);
        for (int in = 0; in < gy.n; ++in)
            for (int ic = 0; ic < gy.c; ++ic)
                for (int oy = 0; oy < gy.h; ++oy)
                    for (int ox = 0; ox < gy.w; ++ox)
                        gx.at(in, ic, reflect(oy - p_, h), reflect(ox - p_, w)) +=
                            gy.at(in, ic, oy, ox);
        return gx;
    }

    std::uint64_t macs(int& h, int& w) const override {
        h += 2 * p_; w += 2 * p_;
        return 0;
    }
    std::string kind() const override { return "rpad"; }

private:
    static int reflect(int i, int n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
        return i;
    }
    int p_;
};

class Sequential; // fwd

class Sequential {
public:
    Sequential() = default;
    Sequential(Sequential&&) = default;
    Sequential& operator=(Sequential&&) = default;

    void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }
    std::size_t n_layers() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

    Tensor forward(const Tensor& x, Tape* tape = nullptr) const {
        Tensor cur = x;
        std::any scratch;
        if (tape) tape->caches.resize(layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i)
            cur = layers_[i]->forward(cur, tape ? tape->caches[i] : scratch);
        return cur;
    }

    Tensor backward(const Tensor& gy, const Tape& tape, bool accum_param_grads = true) {
        if (tape.caches.size() != layers_.size())
            throw std::invalid_argument("sequential: tape does not match network");
        Tensor cur = gy;
        for (std::size_t i = layers_.size(); i-- > 0;)
            cur = layers_[i]->backward(cur, tape.caches[i], accum_param_grads);
        return cur;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> ps;
        for (auto& l : layers_) l->collect_params(ps);
        return ps;
    }
    std::vector<Tensor*> grads() {
        std::vector<Tensor*> gs;
        for (auto& l : layers_) l->collect_grads(gs);
        return gs;
    }
    void zero_grads() {
        for (auto* g : grads()) g->zero();
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto* p : params()) n += p->size();
        return n;
    }

    // 2 FLOPs per multiply-accumulate, traced at the given input side.
    std::uint64_t estimate_flops(int input_side) const {
        if (input_side <= 0) throw std::invalid_argument("estimate_flops: input side must be positive");
        int h = input_side, w = input_side;
        std::uint64_t total = 0;
        for (const auto& l : layers_) total += 2 * l->macs(h, w);
        return total;
    }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Residual block: x + f(x), f = conv-norm-relu-conv-norm.
class ResBlock : public Layer {
public:
    ResBlock(int c, std::mt19937_64& rng) {
        body_.add(std::make_unique<Conv2d>(c, c, 3, 1, 1, rng));
        body_.add(std::make_unique<InstanceNorm>(c));
        body_.add(std::make_unique<ReLU>());
        body_.add(std::make_unique<Conv2d>(c, c, 3, 1, 1, rng));
        body_.add(std::make_unique<InstanceNorm>(c));
    }

    Tensor forward(const Tensor& x, std::any& cache) const override {
        auto tape = std::make_shared<Tape>();
        Tensor y = body_.forward(x, tape.get());
        for (std::size_t i = 0; i < y.size(); ++i) y.v[i] += x.v[i];
        cache = tape;
        return y;
    }

    Tensor backward(const Tensor& gy, const std::any& cache, bool accum) override {
        const auto& tape = std::any_cast<const std::shared_ptr<Tape>&>(cache);
        Tensor gx = body_.backward(gy, *tape, accum);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += gy.v[i];
        return gx;
    }

    void collect_params(std::vector<Tensor*>& ps) override {
        auto sub = body_.params();
        ps.insert(ps.end(), sub.begin(), sub.end());
    }
    void collect_grads(std::vector<Tensor*>& gs) override {
        auto sub = body_.grads();
        gs.insert(gs.end(), sub.begin(), sub.end());
    }
    std::uint64_t macs(int& h, int& w) const override {
        std::uint64_t total = 0;
        for (std::size_t i = 0; i < body_.n_layers(); ++i) total += body_.layer(i).macs(h, w);
        return total;
    }
    std::string kind() const override { return "resblock"; }

private:
    mutable Sequential body_;
};

} // namespace mccan
