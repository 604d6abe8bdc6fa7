#include "derain/loss.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "derain/kernels.hpp"
#include "derain/util.hpp"

namespace derain {
namespace {

const kernels::Backend& K() { return kernels::active(); }

constexpr int kWin = 11;
constexpr double kWinSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01; // (K1 * range)^2
constexpr double kC2 = 0.03 * 0.03;
constexpr double kLumR = 0.299, kLumG = 0.587, kLumB = 0.114;

const double* gauss_window() {
    static const auto g = [] {
        std::array<double, kWin> w{};
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            w[i] = std::exp(-d * d / (2.0 * kWinSigma * kWinSigma));
            sum += w[i];
        }
        for (double& x : w) x /= sum;
        return w;
    }();
    return g.data();
}

// Valid-mode separable correlation of an h*w plane with the Gaussian window.
// out is (h-kWin+1) x (w-kWin+1).
void blur_valid(const double* im, int h, int w, double* out, double* tmp) {
    const double* g = gauss_window();
    const int tw = w - kWin + 1;
    for (int y = 0; y < h; ++y) {
        const double* row = im + static_cast<size_t>(y) * w;
        double* trow = tmp + static_cast<size_t>(y) * tw;
        for (int x = 0; x < tw; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += g[k] * row[x + k];
            trow[x] = acc;
        }
    }
    const int oh = h - kWin + 1;
    for (int y = 0; y < oh; ++y) {
        double* orow = out + static_cast<size_t>(y) * tw;
        for (int x = 0; x < tw; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += g[k] * tmp[static_cast<size_t>(y + k) * tw + x];
            orow[x] = acc;
        }
    }
}

// Adjoint of blur_valid: scatters a positions plane back onto pixel space.
void blur_valid_adjoint(const double* pos, int h, int w, double* out, double* tmp) {
    const double* g = gauss_window();
    const int tw = w - kWin + 1;
    const int oh = h - kWin + 1;
    std::fill(tmp, tmp + static_cast<size_t>(h) * tw, 0.0);
    for (int y = 0; y < oh; ++y) {
        const double* prow = pos + static_cast<size_t>(y) * tw;
        for (int k = 0; k < kWin; ++k) {
            double* trow = tmp + static_cast<size_t>(y + k) * tw;
            const double gk = g[k];
            K().axpy(gk, prow, trow, tw);
        }
    }
    std::fill(out, out + static_cast<size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y) {
        const double* trow = tmp + static_cast<size_t>(y) * tw;
        double* orow = out + static_cast<size_t>(y) * w;
        for (int x = 0; x < tw; ++x) {
            const double v = trow[x];
            for (int k = 0; k < kWin; ++k) orow[x + k] += g[k] * v;
        }
    }
}

void check_ssim_input(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "ssim");
    if (a.h < kWin || a.w < kWin)
        throw ValidationError("ssim: image " + a.shape_str() + " smaller than the " +
                              std::to_string(kWin) + "x" + std::to_string(kWin) + " window");
}

struct SsimPlanes {
    int oh, ow;
    std::vector<double> mu_x, mu_y, m_xx, m_yy, m_xy;
    std::vector<double> sq, tmp;
};

void ssim_moments(const double* x, const double* y, int h, int w, SsimPlanes& p) {
    p.oh = h - kWin + 1;
    p.ow = w - kWin + 1;
    const size_t pos = static_cast<size_t>(p.oh) * p.ow;
    const size_t n = static_cast<size_t>(h) * w;
    p.mu_x.resize(pos);
    p.mu_y.resize(pos);
    p.m_xx.resize(pos);
    p.m_yy.resize(pos);
    p.m_xy.resize(pos);
    p.sq.resize(n);
    p.tmp.resize(static_cast<size_t>(h) * (w - kWin + 1));

    blur_valid(x, h, w, p.mu_x.data(), p.tmp.data());
    blur_valid(y, h, w, p.mu_y.data(), p.tmp.data());
    K().mul(x, x, p.sq.data(), n);
    blur_valid(p.sq.data(), h, w, p.m_xx.data(), p.tmp.data());
    K().mul(y, y, p.sq.data(), n);
    blur_valid(p.sq.data(), h, w, p.m_yy.data(), p.tmp.data());
    K().mul(x, y, p.sq.data(), n);
    blur_valid(p.sq.data(), h, w, p.m_xy.data(), p.tmp.data());
}

} // namespace

void LossWeights::validate() const {
    for (double v : {sigma1, sigma2, lambda1, lambda2, lambda3, lambda4})
        if (v < 0.0 || !std::isfinite(v))
            throw ValidationError("loss weights must be finite and >= 0");
}

double l1_loss(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l1_loss");
    return K().sum_abs_diff(a.data(), b.data(), a.size()) / static_cast<double>(a.size());
}

ValueGrad l1_loss_grad(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "l1_loss");
    ValueGrad out;
    out.grad = Tensor(pred.c, pred.h, pred.w);
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.v[i] - target.v[i];
        acc += std::fabs(d);
        out.grad.v[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
    }
    out.value = acc * inv_n;
    return out;
}

double ssim(const Tensor& a, const Tensor& b) {
    check_ssim_input(a, b);
    SsimPlanes p;
    double total = 0.0;
    size_t count = 0;
    for (int c = 0; c < a.c; ++c) {
        ssim_moments(a.channel(c), b.channel(c), a.h, a.w, p);
        const size_t pos = static_cast<size_t>(p.oh) * p.ow;
        for (size_t i = 0; i < pos; ++i) {
            const double mx = p.mu_x[i], my = p.mu_y[i];
            const double sxx = p.m_xx[i] - mx * mx;
            const double syy = p.m_yy[i] - my * my;
            const double sxy = p.m_xy[i] - mx * my;
            const double a1 = 2.0 * mx * my + kC1;
            const double a2 = 2.0 * sxy + kC2;
            const double b1 = mx * mx + my * my + kC1;
            const double b2 = sxx + syy + kC2;
            total += (a1 * a2) / (b1 * b2);
        }
        count += pos;
    }
    return total / static_cast<double>(count);
}

ValueGrad ssim_grad(const Tensor& pred, const Tensor& target) {
    check_ssim_input(pred, target);
    ValueGrad out;
    out.grad = Tensor(pred.c, pred.h, pred.w);

    SsimPlanes p;
    const int h = pred.h, w = pred.w;
    double total = 0.0;
    size_t count = 0;

    std::vector<double> p_mu, p_mxx, p_mxy, adj;
    for (int c = 0; c < pred.c; ++c) {
        const double* x = pred.channel(c);
        const double* y = target.channel(c);
        ssim_moments(x, y, h, w, p);
        const size_t pos = static_cast<size_t>(p.oh) * p.ow;
        p_mu.resize(pos);
        p_mxx.resize(pos);
        p_mxy.resize(pos);
        adj.resize(static_cast<size_t>(h) * w);

        for (size_t i = 0; i < pos; ++i) {
            const double mx = p.mu_x[i], my = p.mu_y[i];
            const double sxx = p.m_xx[i] - mx * mx;
            const double syy = p.m_yy[i] - my * my;
            const double sxy = p.m_xy[i] - mx * my;
            const double a1 = 2.0 * mx * my + kC1;
            const double a2 = 2.0 * sxy + kC2;
            const double b1 = mx * mx + my * my + kC1;
            const double b2 = sxx + syy + kC2;
            const double d = b1 * b2;
            const double s = (a1 * a2) / d;
            total += s;
            // Partials w.r.t. the windowed moments of pred.
            p_mxx[i] = -s / b2;
            p_mxy[i] = 2.0 * a1 / d;
            p_mu[i] = 2.0 * my * (a2 - a1) / d - 2.0 * mx * s * (1.0 / b1 - 1.0 / b2);
        }
        count += pos;

        double* g = out.grad.channel(c);
        blur_valid_adjoint(p_mu.data(), h, w, adj.data(), p.tmp.data());
        std::memcpy(g, adj.data(), adj.size() * sizeof(double));
        blur_valid_adjoint(p_mxx.data(), h, w, adj.data(), p.tmp.data());
        for (size_t i = 0; i < adj.size(); ++i) g[i] += 2.0 * x[i] * adj[i];
        blur_valid_adjoint(p_mxy.data(), h, w, adj.data(), p.tmp.data());
        for (size_t i = 0; i < adj.size(); ++i) g[i] += y[i] * adj[i];
    }
    const double inv_n = 1.0 / static_cast<double>(count);
    out.value = total * inv_n;
    K().scale(inv_n, out.grad.data(), out.grad.size());
    return out;
}

double combined_loss(const Tensor& pred, const Tensor& target, const LossWeights& w) {
    return w.sigma1 * -ssim(pred, target) + w.sigma2 * l1_loss(pred, target);
}

ValueGrad combined_loss_grad(const Tensor& pred, const Tensor& target, const LossWeights& w) {
    ValueGrad s = ssim_grad(pred, target);
    ValueGrad l = l1_loss_grad(pred, target);
    ValueGrad out;
    out.value = w.sigma1 * -s.value + w.sigma2 * l.value;
    out.grad = Tensor(pred.c, pred.h, pred.w);
    K().axpy(-w.sigma1, s.grad.data(), out.grad.data(), out.grad.size());
    K().axpy(w.sigma2, l.grad.data(), out.grad.data(), out.grad.size());
    return out;
}

double response_kd_loss(const Tensor& student_out, const Tensor& teacher_out,
                        const LossWeights& w) {
    return combined_loss(student_out, teacher_out, w);
}

double feature_kd_loss(const Tensor& student_f, const Tensor& teacher_f) {
    require_same_shape(student_f, teacher_f, "feature_kd_loss");
    return K().sum_abs_diff(student_f.data(), teacher_f.data(), student_f.size()) /
           static_cast<double>(student_f.size());
}

ValueGrad feature_kd_loss_grad(const Tensor& student_f, const Tensor& teacher_f) {
    require_same_shape(student_f, teacher_f, "feature_kd_loss");
    return l1_loss_grad(student_f, teacher_f);
}

Tensor grayscale(const Tensor& img) {
    if (img.c != 3) throw ValidationError("grayscale: expected 3 channels, got " +
                                          std::to_string(img.c));
    Tensor out(1, img.h, img.w);
    const size_t plane = static_cast<size_t>(img.h) * img.w;
    const double* r = img.channel(0);
    const double* g = img.channel(1);
    const double* b = img.channel(2);
    for (size_t i = 0; i < plane; ++i) out.v[i] = kLumR * r[i] + kLumG * g[i] + kLumB * b[i];
    return out;
}

Tensor gray_residual(const Tensor& residual) {
    if (residual.c != 3)
        throw ValidationError("gray_residual: expected 3 channels, got " +
                              std::to_string(residual.c));
    Tensor out(1, residual.h, residual.w);
    const size_t plane = static_cast<size_t>(residual.h) * residual.w;
    const double* r = residual.channel(0);
    const double* g = residual.channel(1);
    const double* b = residual.channel(2);
    for (size_t i = 0; i < plane; ++i) {
        const double v = kLumR * std::fabs(r[i]) + kLumG * std::fabs(g[i]) + kLumB * std::fabs(b[i]);
        out.v[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

void AffineParams::validate() const {
    if (!(scale > 0.0)) throw ValidationError("affine: scale must be > 0");
    if (scale < 0.5 || scale > 2.0) throw ValidationError("affine: scale outside [0.5, 2]");
    if (std::fabs(translate_frac.first) > 0.25 || std::fabs(translate_frac.second) > 0.25)
        throw ValidationError("affine: |translation| must be <= 0.25 of the image size");
}

bool AffineParams::is_identity() const {
    return rotation_deg == 0.0 && scale == 1.0 && translate_frac.first == 0.0 &&
           translate_frac.second == 0.0 && !hflip;
}

AffineParams sample_affine(Rng& rng) {
    AffineParams p;
    p.rotation_deg = rng.uniform(-10.0, 10.0);
    p.scale = rng.uniform(0.9, 1.1);
    p.translate_frac = {rng.uniform(-0.10, 0.10), rng.uniform(-0.10, 0.10)};
    p.hflip = rng.bernoulli(0.5);
    return p;
}

Tensor affine_apply(const Tensor& rain_map, const AffineParams& p) {
    p.validate();
    if (p.is_identity()) {
        Tensor out = rain_map;
        for (double& v : out.v) v = std::clamp(v, 0.0, 1.0);
        return out;
    }

    const int h = rain_map.h, w = rain_map.w;
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double rad = p.rotation_deg * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double tx = p.translate_frac.first * w;
    const double ty = p.translate_frac.second * h;

    Tensor out(rain_map.c, h, w);
    for (int c = 0; c < rain_map.c; ++c) {
        const double* src = rain_map.channel(c);
        double* dst = out.channel(c);
        for (int yo = 0; yo < h; ++yo) {
            for (int xo = 0; xo < w; ++xo) {
                // Invert hflip -> translate -> scale -> rotate around the center.
                double qx = xo - cx, qy = yo - cy;
                if (p.hflip) qx = -qx;
                qx = (qx - tx) / p.scale;
                qy = (qy - ty) / p.scale;
                const double sx = cs * qx + sn * qy + cx;
                const double sy = -sn * qx + cs * qy + cy;

                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0, fy = sy - y0;
                auto sample = [&](int yy, int xx) -> double {
                    if (xx < 0 || xx >= w || yy < 0 || yy >= h) return 0.0;
                    return src[static_cast<size_t>(yy) * w + xx];
                };
                const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                                 fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
                dst[static_cast<size_t>(yo) * w + xo] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

Tensor broadcast3(const Tensor& one_channel) {
    if (one_channel.c != 1)
        throw ValidationError("broadcast3: expected 1 channel, got " +
                              std::to_string(one_channel.c));
    Tensor out(3, one_channel.h, one_channel.w);
    const size_t plane = static_cast<size_t>(one_channel.h) * one_channel.w;
    for (int c = 0; c < 3; ++c)
        std::memcpy(out.channel(c), one_channel.data(), plane * sizeof(double));
    return out;
}

Tensor compose_replay_frame(const Tensor& warped_rain_map, const Tensor& background) {
    if (background.c != 3)
        throw ValidationError("compose_replay_frame: background must have 3 channels");
    if (warped_rain_map.c != 1 || warped_rain_map.h != background.h ||
        warped_rain_map.w != background.w)
        throw ValidationError("compose_replay_frame: rain map must be 1x" +
                              std::to_string(background.h) + "x" + std::to_string(background.w));
    Tensor out(3, background.h, background.w);
    const size_t plane = static_cast<size_t>(background.h) * background.w;
    for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < plane; ++i)
            out.channel(c)[i] =
                std::clamp(background.channel(c)[i] + warped_rain_map.v[i], 0.0, 1.0);
    return out;
}

namespace {

FrameWindow replay_window(const FrameWindow& window, const Tensor& rain_map,
                          const Tensor& teacher_background, const AffineParams& p) {
    const Tensor warped = affine_apply(rain_map, p);
    FrameWindow out = window;
    out.frames[2] = compose_replay_frame(warped, teacher_background);
    return out;
}

} // namespace

double review_replay_loss(const DerainNet& student, const FrameWindow& window,
                          const Tensor& rain_map, const Tensor& teacher_background,
                          const LossWeights& w, const AffineParams& p) {
    const FrameWindow rw = replay_window(window, rain_map, teacher_background, p);
    const DerainTrace tr = student.forward(rw);
    return combined_loss(tr.background(), window.target, w);
}

double review_replay_loss_backward(DerainNet& student, const FrameWindow& window,
                                   const Tensor& rain_map, const Tensor& teacher_background,
                                   const LossWeights& w, const AffineParams& p,
                                   double grad_scale) {
    const FrameWindow rw = replay_window(window, rain_map, teacher_background, p);
    const DerainTrace tr = student.forward(rw);
    ValueGrad vg = combined_loss_grad(tr.background(), window.target, w);
    K().scale(grad_scale, vg.grad.data(), vg.grad.size());
    student.backward(tr, vg.grad, nullptr);
    return vg.value;
}

namespace {

void check_review_stage(int stage_j, const Tensor* student_f, const Tensor* teacher_f,
                        const Tensor* rain_map_jm1) {
    if (stage_j < 1) throw ValidationError("review_net_loss: stage must be >= 1");
    if (stage_j > 1 && (!student_f || !teacher_f || !rain_map_jm1))
        throw ValidationError("review_net_loss: teacher terms required at stage > 1");
}

} // namespace

double review_net_loss(int stage_j, const Tensor* student_review_f,
                       const Tensor* teacher_review_f, const Tensor& rain_map_j,
                       const Tensor* rain_map_jm1, const Tensor& supervised_target,
                       const LossWeights& w) {
    check_review_stage(stage_j, student_review_f, teacher_review_f, rain_map_jm1);
    double total = w.lambda3 * combined_loss(rain_map_j, supervised_target, w);
    if (stage_j > 1) {
        total += w.lambda1 * feature_kd_loss(*student_review_f, *teacher_review_f);
        total += w.lambda2 * combined_loss(rain_map_j, *rain_map_jm1, w);
    }
    return total;
}

ReviewNetLossGrads review_net_loss_grad(int stage_j, const Tensor* student_review_f,
                                        const Tensor* teacher_review_f,
                                        const Tensor& rain_map_j, const Tensor* rain_map_jm1,
                                        const Tensor& supervised_target, const LossWeights& w) {
    check_review_stage(stage_j, student_review_f, teacher_review_f, rain_map_jm1);
    ReviewNetLossGrads out;
    ValueGrad sup = combined_loss_grad(rain_map_j, supervised_target, w);
    out.value = w.lambda3 * sup.value;
    out.grad_rain_map = Tensor(rain_map_j.c, rain_map_j.h, rain_map_j.w);
    K().axpy(w.lambda3, sup.grad.data(), out.grad_rain_map.data(), out.grad_rain_map.size());
    if (stage_j > 1) {
        ValueGrad fkd = feature_kd_loss_grad(*student_review_f, *teacher_review_f);
        out.value += w.lambda1 * fkd.value;
        out.grad_features = Tensor(student_review_f->c, student_review_f->h, student_review_f->w);
        K().axpy(w.lambda1, fkd.grad.data(), out.grad_features.data(), out.grad_features.size());

        ValueGrad resp = combined_loss_grad(rain_map_j, *rain_map_jm1, w);
        out.value += w.lambda2 * resp.value;
        K().axpy(w.lambda2, resp.grad.data(), out.grad_rain_map.data(), out.grad_rain_map.size());
    }
    return out;
}

double total_derain_loss(const DerainLossTerms& terms, const LossWeights& w) {
    double total = w.lambda1 * terms.l_c;
    if (terms.l_rkd) total += w.lambda2 * *terms.l_rkd;
    if (terms.l_fkd) total += w.lambda3 * *terms.l_fkd;
    if (terms.l_r) total += w.lambda4 * *terms.l_r;
    return total;
}

} // namespace derain
