#pragma once

#include <string>
#include <vector>

#include "derain/data.hpp"
#include "derain/net.hpp"
#include "derain/tensor.hpp"

namespace derain {

struct EvalRecord {
    int stage = 0;
    int epoch = 0;
    std::string task_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    int n_windows = 0;
};

// BT.601 on [0,1] floats, no range compression.
Tensor rgb_to_luminance(const Tensor& img);

// 10*log10(1/MSE) on the luminance channel, capped at 99 dB.
double psnr(const Tensor& pred, const Tensor& ref);

// Luminance-channel SSIM (same implementation as the loss).
double luminance_ssim(const Tensor& pred, const Tensor& ref);

// Mean PSNR/SSIM of derained centers vs targets over a held-out window set.
EvalRecord evaluate_task(const DerainNet& net, const std::vector<FrameWindow>& windows,
                         const std::string& task_id);

struct ForgettingPoint {
    int stage = 0;
    int epoch = 0;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct ForgettingCurve {
    std::string task_id;
    int own_stage = 0; // the stage that trained this task
    std::vector<ForgettingPoint> points;
    double best_psnr = 0.0;  // best during the task's own stage
    double final_psnr = 0.0; // after all stages
    double drop_psnr = 0.0;  // best - final
    double best_ssim = 0.0;
    double final_ssim = 0.0;
    double drop_ssim = 0.0;
};

// Builds the per-task metric-vs-epoch series from eval records. The task's
// own stage is the first stage in which it was evaluated.
ForgettingCurve forgetting_curve(const std::vector<EvalRecord>& records,
                                 const std::string& task_id);

} // namespace derain
