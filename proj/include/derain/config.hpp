#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "derain/data.hpp"
#include "derain/loss.hpp"
#include "derain/net.hpp"
#include "derain/train.hpp"

namespace derain {

struct CleanClipConfig {
    int count = 2;
    int frames = 10;
    int height = 64;
    int width = 64;
    uint64_t seed = 100;
    std::vector<std::string> source_dirs; // overrides the procedural generator
};

// The single run-config file driving synth/train/eval/report. Parsed from
// JSON; unknown keys are rejected.
struct RunConfig {
    std::string preset = "tiny"; // tiny | paper
    uint64_t seed = 1;
    std::string out_dir = "runs/run";
    std::string data_dir; // defaults to <out_dir>/data
    std::string ablation = "full";
    ArchConfig derain_arch;
    ArchConfig review_arch;
    LossWeights weights;
    int epochs = 0;
    double learning_rate = 0.0;
    int batch_size = 1;
    int crop_size = 0;
    double grad_clip_norm = 1.0;
    int holdout_clips = 1;
    CleanClipConfig clean_clips;
    std::vector<RainTaskSpec> tasks;

    void validate() const;
    uint64_t fingerprint() const;   // hash of the canonical serialized form
    std::string canonical() const;  // stable JSON dump
    std::string task_data_dir(const std::string& task_id) const;
    StageConfig stage_template() const;
    ScheduleConfig schedule_config() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Clean source clips for one task (procedural unless source_dirs is set).
std::vector<std::vector<Tensor>> clean_clips_for_task(const RunConfig& cfg, size_t task_index);

} // namespace derain
