#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "derain/checkpoint.hpp"
#include "derain/data.hpp"
#include "derain/loss.hpp"
#include "derain/metrics.hpp"
#include "derain/net.hpp"
#include "derain/optim.hpp"

namespace derain {

struct StageConfig {
    int stage_index = 1;
    std::string task_id;
    int epochs = 160;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int batch_size = 1; // windows per optimizer step
    int crop_size = 240;
    double grad_clip_norm = 1.0; // 0 disables
    LossWeights weights;
    uint64_t seed = 0;

    void validate() const;
    AdamConfig adam() const {
        return {learning_rate, adam_beta1, adam_beta2, adam_epsilon, grad_clip_norm};
    }
};

struct AblationFlags {
    bool use_rkd = true;
    bool use_fkd = true;
    bool use_rrm = true;

    bool any() const { return use_rkd || use_fkd || use_rrm; }
};

// "base" -> all off, "frd" -> distillation only, "full" -> everything.
AblationFlags parse_ablation(const std::string& name);

struct StepRecord {
    int stage = 0, epoch = 0, step = 0;
    double l_c = 0, l_rkd = 0, l_fkd = 0, l_r = 0, total = 0;
};

// Append-only training log; rows are flushed to CSV once per epoch.
struct TrainLog {
    std::string train_csv_path; // empty keeps the log in memory only
    std::string eval_csv_path;
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;

    void append_step(const StepRecord& r) { steps.push_back(r); }
    void append_eval(const EvalRecord& r) { evals.push_back(r); }
    void flush();

private:
    size_t flushed_steps_ = 0;
    size_t flushed_evals_ = 0;
};

// The trainer's only road to training data. Every clip load is recorded, so
// tests can prove that no old-task files are touched after their stage.
class TrainingDataLayer {
public:
    struct Access {
        int stage;
        std::string clip_dir;
    };

    std::vector<ClipPair> load_training_clips(int stage, const TaskManifest& manifest,
                                              int holdout_clips);
    const std::vector<Access>& access_log() const { return log_; }
    void dump_log(const std::string& csv_path) const;

private:
    std::vector<Access> log_;
};

// Held-out windows are materialized before any training starts.
std::vector<FrameWindow> build_eval_windows(const TaskManifest& manifest, int holdout_clips);

struct StageData {
    std::string task_id;
    std::vector<ClipPair> clips;

    int window_count() const {
        int n = 0;
        for (const auto& c : clips) n += c.length();
        return n;
    }
};

struct TrainState {
    DerainNet derain;
    ReviewNet review;
    AdamState adam_derain;
    AdamState adam_review;
};

struct TeacherNets {
    DerainNet derain;
    ReviewNet review;
};

// Called after each epoch; return false to stop the stage (用于 resumable
// interruption). epoch is 1-based.
using EpochHook = std::function<bool(int epoch)>;

// One training stage over the student nets. With a teacher, each step adds
// the response/feature distillation and rain-review terms selected by the
// flags; without one it is plain supervised training. The review net trains
// in the same loop. Returns the number of epochs completed.
int run_training_stage(TrainState& student, const TeacherNets* teacher, const StageConfig& cfg,
                       const StageData& data, const AblationFlags& flags, TrainLog& log,
                       const EpochHook& hook = {}, int start_epoch = 1);

// Stage-1 conventional training. cfg.stage_index must be 1.
StageCheckpoint train_stage_initial(TrainState& student, const StageConfig& cfg,
                                    const StageData& data, TrainLog& log,
                                    uint64_t config_fingerprint = 0);

// Stage j > 1: freezes a teacher copy of student_init, re-initializes the
// student from it, and trains with distillation/replay per the flags.
StageCheckpoint train_stage_continual(const StageCheckpoint& student_init, TrainState& student,
                                      const StageConfig& cfg, const StageData& data,
                                      const AblationFlags& flags, TrainLog& log,
                                      uint64_t config_fingerprint = 0);

struct ScheduleTask {
    std::string task_id;
    TaskManifest manifest;
};

struct ScheduleConfig {
    ArchConfig derain_arch{8, 2};
    ArchConfig review_arch{4, 2};
    StageConfig stage_template;
    AblationFlags flags;
    int holdout_clips = 1;
    std::string out_dir; // empty disables all persistence
    uint64_t config_fingerprint = 0;
};

// Returning true stops the schedule after that (stage, epoch).
using InterruptHook = std::function<bool(int stage, int epoch)>;

struct ScheduleResult {
    std::vector<StageCheckpoint> checkpoints; // one per completed stage
    TrainLog log;
    std::vector<TrainingDataLayer::Access> data_accesses;
    bool interrupted = false;
    int next_stage = 0; // stage to resume at when interrupted
};

ScheduleResult run_schedule(const ScheduleConfig& cfg, const std::vector<ScheduleTask>& tasks,
                            const InterruptHook& interrupt = {});

// Continues an interrupted run from out_dir/state.ckpt.
ScheduleResult resume_schedule(const ScheduleConfig& cfg, const std::vector<ScheduleTask>& tasks,
                               const InterruptHook& interrupt = {});

} // namespace derain
