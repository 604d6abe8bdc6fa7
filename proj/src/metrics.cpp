#include "derain/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "derain/kernels.hpp"
#include "derain/loss.hpp"
#include "derain/util.hpp"

namespace derain {

constexpr double kPsnrCap = 99.0;

Tensor rgb_to_luminance(const Tensor& img) { return grayscale(img); }

double psnr(const Tensor& pred, const Tensor& ref) {
    require_same_shape(pred, ref, "psnr");
    const Tensor a = pred.c == 3 ? rgb_to_luminance(pred) : pred;
    const Tensor b = ref.c == 3 ? rgb_to_luminance(ref) : ref;
    const double mse =
        kernels::active().sum_sq_diff(a.data(), b.data(), a.size()) / static_cast<double>(a.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double luminance_ssim(const Tensor& pred, const Tensor& ref) {
    require_same_shape(pred, ref, "ssim");
    const Tensor a = pred.c == 3 ? rgb_to_luminance(pred) : pred;
    const Tensor b = ref.c == 3 ? rgb_to_luminance(ref) : ref;
    return ssim(a, b);
}

EvalRecord evaluate_task(const DerainNet& net, const std::vector<FrameWindow>& windows,
                         const std::string& task_id) {
    if (windows.empty()) throw ValidationError("evaluate_task: empty window set");
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const FrameWindow& win : windows) {
        const DerainTrace tr = net.forward(win);
        psnr_sum += psnr(tr.background(), win.target);
        ssim_sum += luminance_ssim(tr.background(), win.target);
    }
    EvalRecord rec;
    rec.task_id = task_id;
    rec.n_windows = static_cast<int>(windows.size());
    rec.psnr_db = psnr_sum / windows.size();
    rec.ssim = ssim_sum / windows.size();
    return rec;
}

ForgettingCurve forgetting_curve(const std::vector<EvalRecord>& records,
                                 const std::string& task_id) {
    ForgettingCurve curve;
    curve.task_id = task_id;
    for (const EvalRecord& r : records)
        if (r.task_id == task_id)
            curve.points.push_back({r.stage, r.epoch, r.psnr_db, r.ssim});
    if (curve.points.empty())
        throw ValidationError("forgetting_curve: no eval records for task '" + task_id + "'");

    std::stable_sort(curve.points.begin(), curve.points.end(),
                     [](const ForgettingPoint& a, const ForgettingPoint& b) {
                         return std::pair(a.stage, a.epoch) < std::pair(b.stage, b.epoch);
                     });

    curve.own_stage = curve.points.front().stage;
    curve.best_psnr = -1e300;
    curve.best_ssim = -1e300;
    for (const ForgettingPoint& p : curve.points) {
        if (p.stage == curve.own_stage) {
            curve.best_psnr = std::max(curve.best_psnr, p.psnr_db);
            curve.best_ssim = std::max(curve.best_ssim, p.ssim);
        }
    }
    curve.final_psnr = curve.points.back().psnr_db;
    curve.final_ssim = curve.points.back().ssim;
    curve.drop_psnr = curve.best_psnr - curve.final_psnr;
    curve.drop_ssim = curve.best_ssim - curve.final_ssim;
    return curve;
}

} // namespace derain
