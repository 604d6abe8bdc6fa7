#pragma once

#include <string>
#include <vector>

#include "derain/metrics.hpp"

namespace derain {

// Reads "stage,epoch,task_id,psnr,ssim" rows.
std::vector<EvalRecord> read_eval_csv(const std::string& path);

struct ArmSummary {
    std::string arm;
    std::vector<ForgettingCurve> curves; // one per task
};

// log_dir either contains eval.csv directly (arm name "run") or holds one
// subdirectory per experiment arm, each with its own eval.csv.
std::vector<ArmSummary> collect_arms(const std::string& log_dir);

// Emits forgetting-curve PNGs (per task, PSNR and SSIM) plus summary.csv and
// returns the rendered summary table text.
std::string write_report(const std::string& log_dir, const std::string& out_dir);

} // namespace derain
