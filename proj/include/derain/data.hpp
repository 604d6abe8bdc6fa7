#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "derain/rng.hpp"
#include "derain/tensor.hpp"

namespace derain {

// Parameters of one synthetic rain-streak type. Two specs with equal fields
// produce bit-identical streak layers.
struct RainTaskSpec {
    std::string task_id;
    std::pair<double, double> angle_deg_range{0.0, 0.0}; // inclination from vertical
    std::pair<double, double> length_px_range{8.0, 8.0};
    std::pair<double, double> width_px_range{1.0, 1.0};
    double density = 0.0; // streaks per 10k pixels
    std::pair<double, double> intensity_range{0.5, 0.5};
    double drift_px_per_frame = 0.0;
    uint64_t seed = 0;

    void validate() const; // throws ValidationError naming the offending field
};

// A rainy clip with its clean ground truth; streak layers are known for
// synthetic data only.
struct ClipPair {
    std::vector<Tensor> rainy;   // 3xHxW each
    std::vector<Tensor> clean;   // 3xHxW each
    std::vector<Tensor> streaks; // 1xHxW each, may be empty
    std::string task_id;

    int length() const { return static_cast<int>(rainy.size()); }
    void validate() const;
};

// Five consecutive rainy frames centered at time t plus the clean target of
// the center frame.
struct FrameWindow {
    std::array<Tensor, 5> frames;
    int center_index = 0;
    Tensor target;

    const Tensor& center() const { return frames[2]; }
    int height() const { return target.h; }
    int width() const { return target.w; }
};

struct ClipRef {
    std::string name;
    int frames = 0;
};

struct TaskManifest {
    std::string task_id;
    std::string root_dir; // directory holding the clips and manifest.json
    std::vector<ClipRef> clips;

    std::string clip_dir(size_t i) const { return root_dir + "/" + clips[i].name; }
};

// Deterministic in (spec, height, width, frame_index). Streaks drift along
// their own direction frame to frame and wrap around the canvas.
Tensor synthesize_streak_layer(const RainTaskSpec& spec, int height, int width,
                               int frame_index);

// rainy = clamp(clean + streaks, 0, 1), streak value broadcast over RGB.
Tensor apply_rain(const Tensor& clean, const Tensor& streaks);

// Writes rainy/clean/streak PNGs plus manifest.json under out_dir. The clean
// frames are quantized to the 8-bit grid before rain is applied so the
// additive identity survives the PNG round trip.
TaskManifest generate_task_dataset(const RainTaskSpec& spec,
                                   const std::vector<std::vector<Tensor>>& clean_clips,
                                   const std::string& out_dir);

TaskManifest load_manifest(const std::string& dir);

// Strict loader: requires clean/ and rainy/ subdirectories with matching,
// monotonically numbered frames. streaks/ is picked up when present.
ClipPair load_clip(const std::string& dir);

// Loads a bare folder of numbered PNGs (used for deraining unpaired clips).
std::vector<Tensor> load_frames(const std::string& dir);

// Neighbor indices outside the clip are clamped to the boundary.
FrameWindow extract_window(const ClipPair& clip, int t);

// Crops all five frames and the target at one offset drawn from rng.
FrameWindow random_crop(const FrameWindow& window, int size, Rng& rng);

// Procedural clean clip: drifting sinusoid background plus a moving disc.
std::vector<Tensor> make_clean_clip(uint64_t seed, int frames, int height, int width);

} // namespace derain
