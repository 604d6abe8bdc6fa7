#pragma once

#include <optional>

#include "derain/data.hpp"
#include "derain/net.hpp"
#include "derain/rng.hpp"
#include "derain/tensor.hpp"

namespace derain {

struct LossWeights {
    double sigma1 = 1.1;  // negative-SSIM weight
    double sigma2 = 0.75; // L1 weight
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    double lambda3 = 1.0;
    double lambda4 = 1.0;

    void validate() const;
};

// Mean absolute difference over all elements.
double l1_loss(const Tensor& a, const Tensor& b);

// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5, K1 0.01,
// K2 0.03, data range 1), computed per channel and averaged.
double ssim(const Tensor& a, const Tensor& b);

struct ValueGrad {
    double value = 0.0;
    Tensor grad; // d value / d pred
};

ValueGrad l1_loss_grad(const Tensor& pred, const Tensor& target);
ValueGrad ssim_grad(const Tensor& pred, const Tensor& target);

// sigma1 * (-ssim) + sigma2 * l1. Minimised at -sigma1 when pred == target.
double combined_loss(const Tensor& pred, const Tensor& target, const LossWeights& w);
ValueGrad combined_loss_grad(const Tensor& pred, const Tensor& target, const LossWeights& w);

// Pulls the student's output image toward the (detached) teacher output.
double response_kd_loss(const Tensor& student_out, const Tensor& teacher_out,
                        const LossWeights& w);

// L1-only distance between student and teacher feature maps.
double feature_kd_loss(const Tensor& student_f, const Tensor& teacher_f);
ValueGrad feature_kd_loss_grad(const Tensor& student_f, const Tensor& teacher_f);

// BT.601 luminance projection of a [0,1] RGB image.
Tensor grayscale(const Tensor& img);
// Residuals are absolute-valued before graying; output clamped to [0,1].
Tensor gray_residual(const Tensor& residual);

struct AffineParams {
    double rotation_deg = 0.0;
    double scale = 1.0;
    std::pair<double, double> translate_frac{0.0, 0.0};
    bool hflip = false;

    void validate() const;
    bool is_identity() const;
};

// Mild augmentation draw: rotation +-10 deg, scale [0.9,1.1], translation
// +-10%, hflip p=0.5.
AffineParams sample_affine(Rng& rng);

// rotate -> scale -> translate -> optional hflip about the image center;
// bilinear sampling, zero outside, output clamped to [0,1].
Tensor affine_apply(const Tensor& rain_map, const AffineParams& p);

Tensor broadcast3(const Tensor& one_channel);

// X~ = clamp(A(S) broadcast to RGB + background, 0, 1).
Tensor compose_replay_frame(const Tensor& warped_rain_map, const Tensor& background);

// Substitutes X~ for the window's center frame and scores the student's
// recovery of the clean target. S and teacher_background are detached
// teacher products; no gradient reaches them.
double review_replay_loss(const DerainNet& student, const FrameWindow& window,
                          const Tensor& rain_map, const Tensor& teacher_background,
                          const LossWeights& w, const AffineParams& p);

// Same computation, also accumulating grad_scale * dL/dtheta into the
// student's gradient buffers. Returns the loss value.
double review_replay_loss_backward(DerainNet& student, const FrameWindow& window,
                                   const Tensor& rain_map, const Tensor& teacher_background,
                                   const LossWeights& w, const AffineParams& p,
                                   double grad_scale);

// Review-network objective. Stage 1 uses only the supervised term; later
// stages add feature and response distillation against the previous-stage
// review net. Teacher inputs must be present when stage_j > 1.
double review_net_loss(int stage_j, const Tensor* student_review_f,
                       const Tensor* teacher_review_f, const Tensor& rain_map_j,
                       const Tensor* rain_map_jm1, const Tensor& supervised_target,
                       const LossWeights& w);

struct ReviewNetLossGrads {
    double value = 0.0;
    Tensor grad_rain_map;
    Tensor grad_features; // empty at stage 1
};

ReviewNetLossGrads review_net_loss_grad(int stage_j, const Tensor* student_review_f,
                                        const Tensor* teacher_review_f,
                                        const Tensor& rain_map_j, const Tensor* rain_map_jm1,
                                        const Tensor& supervised_target, const LossWeights& w);

struct DerainLossTerms {
    double l_c = 0.0;
    std::optional<double> l_rkd;
    std::optional<double> l_fkd;
    std::optional<double> l_r;
};

// lambda1*L_C + lambda2*L_RKD + lambda3*L_FKD + lambda4*L_R; absent terms
// contribute zero.
double total_derain_loss(const DerainLossTerms& terms, const LossWeights& w);

} // namespace derain
