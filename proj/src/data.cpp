#include "derain/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "derain/image_io.hpp"
#include "derain/util.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace derain {
namespace {

void check_range(const std::pair<double, double>& r, const char* field) {
    if (!(r.first <= r.second))
        throw ValidationError(std::string("RainTaskSpec.") + field + ": range must be ordered low <= high");
}

std::string frame_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d.png", index);
    return buf;
}

// Sorted numeric listing of the PNGs in a directory. Throws if any stem is
// non-numeric or the sequence is not strictly increasing.
std::vector<fs::path> list_numbered_pngs(const fs::path& dir) {
    std::vector<std::pair<long, fs::path>> entries;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".png") continue;
        const std::string stem = e.path().stem().string();
        long num = 0;
        auto [p, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), num);
        if (ec != std::errc{} || p != stem.data() + stem.size())
            throw ValidationError("non-numeric frame name '" + stem + "' in " + dir.string());
        entries.emplace_back(num, e.path());
    }
    std::sort(entries.begin(), entries.end());
    for (size_t i = 1; i < entries.size(); ++i)
        if (entries[i].first == entries[i - 1].first)
            throw ValidationError("non-monotone frame numbering in " + dir.string());
    std::vector<fs::path> out;
    out.reserve(entries.size());
    for (auto& [num, p] : entries) out.push_back(std::move(p));
    return out;
}

} // namespace

void RainTaskSpec::validate() const {
    if (task_id.empty()) throw ValidationError("RainTaskSpec.task_id: must be non-empty");
    check_range(angle_deg_range, "angle_deg_range");
    check_range(length_px_range, "length_px_range");
    check_range(width_px_range, "width_px_range");
    check_range(intensity_range, "intensity_range");
    if (length_px_range.first < 0)
        throw ValidationError("RainTaskSpec.length_px_range: lengths must be >= 0");
    if (width_px_range.first < 0)
        throw ValidationError("RainTaskSpec.width_px_range: widths must be >= 0");
    if (intensity_range.first < 0.0 || intensity_range.second > 1.0)
        throw ValidationError("RainTaskSpec.intensity_range: must lie within [0,1]");
    if (density < 0.0) throw ValidationError("RainTaskSpec.density: must be >= 0");
}

void ClipPair::validate() const {
    if (rainy.size() != clean.size())
        throw ValidationError("ClipPair: rainy and clean frame counts differ");
    for (size_t i = 0; i < rainy.size(); ++i) {
        require_same_shape(rainy[i], clean[i], "ClipPair frame");
        if (rainy[i].c != 3) throw ValidationError("ClipPair: frames must have 3 channels");
    }
    if (!streaks.empty() && streaks.size() != rainy.size())
        throw ValidationError("ClipPair: streak layer count differs from frame count");
}

Tensor synthesize_streak_layer(const RainTaskSpec& spec, int height, int width,
                               int frame_index) {
    spec.validate();
    if (height < 16 || width < 16)
        throw ValidationError("synthesize_streak_layer: height and width must be >= 16");

    Tensor layer(1, height, width);
    const long n_streaks =
        std::lround(spec.density * static_cast<double>(height) * width / 10000.0);
    if (n_streaks == 0) return layer;

    Rng rng(derive_seed(spec.seed, fnv1a64("streaks")));
    for (long i = 0; i < n_streaks; ++i) {
        const double cx0 = rng.uniform(0.0, width);
        const double cy0 = rng.uniform(0.0, height);
        const double angle = rng.uniform(spec.angle_deg_range.first, spec.angle_deg_range.second);
        const double length = rng.uniform(spec.length_px_range.first, spec.length_px_range.second);
        const double swidth = rng.uniform(spec.width_px_range.first, spec.width_px_range.second);
        const double inten = rng.uniform(spec.intensity_range.first, spec.intensity_range.second);

        // Direction measured from vertical; y grows downward.
        const double rad = angle * M_PI / 180.0;
        const double dx = std::sin(rad), dy = std::cos(rad);

        // Streaks slide along their own direction and wrap around the canvas.
        const double off = spec.drift_px_per_frame * frame_index;
        double cx = std::fmod(cx0 + dx * off, static_cast<double>(width));
        double cy = std::fmod(cy0 + dy * off, static_cast<double>(height));
        if (cx < 0) cx += width;
        if (cy < 0) cy += height;

        const int len_steps = std::max<long>(1, std::lround(length));
        const int w_steps = std::max<long>(1, std::lround(swidth));
        const double sx = cx - dx * (len_steps - 1) / 2.0;
        const double sy = cy - dy * (len_steps - 1) / 2.0;

        // Integer walk along the streak; width painted perpendicular to the
        // dominant axis so counts stay exact for axis-aligned streaks.
        const bool y_major = std::fabs(dy) >= std::fabs(dx);
        for (int s = 0; s < len_steps; ++s) {
            const double px = sx + dx * s;
            const double py = sy + dy * s;
            const int bx = static_cast<int>(std::lround(px));
            const int by = static_cast<int>(std::lround(py));
            for (int k = 0; k < w_steps; ++k) {
                const int o = k - (w_steps - 1) / 2;
                const int x = y_major ? bx + o : bx;
                const int y = y_major ? by : by + o;
                if (x < 0 || x >= width || y < 0 || y >= height) continue;
                double& cell = layer.at(0, y, x);
                cell = std::max(cell, inten);
            }
        }
    }
    return layer;
}

Tensor apply_rain(const Tensor& clean, const Tensor& streaks) {
    if (clean.c != 3) throw ValidationError("apply_rain: clean image must have 3 channels");
    if (streaks.c != 1 || streaks.h != clean.h || streaks.w != clean.w)
        throw ValidationError("apply_rain: streak layer must be 1x" + std::to_string(clean.h) +
                              "x" + std::to_string(clean.w) + ", got " + streaks.shape_str());
    Tensor rainy(3, clean.h, clean.w);
    const size_t plane = static_cast<size_t>(clean.h) * clean.w;
    for (int ci = 0; ci < 3; ++ci)
        for (size_t i = 0; i < plane; ++i) {
            const double v = clean.channel(ci)[i] + streaks.channel(0)[i];
            rainy.channel(ci)[i] = std::clamp(v, 0.0, 1.0);
        }
    return rainy;
}

TaskManifest generate_task_dataset(const RainTaskSpec& spec,
                                   const std::vector<std::vector<Tensor>>& clean_clips,
                                   const std::string& out_dir) {
    spec.validate();
    if (clean_clips.empty())
        throw ValidationError("generate_task_dataset: need at least one clean clip");
    for (const auto& clip : clean_clips)
        if (clip.size() < 5)
            throw ValidationError("generate_task_dataset: clip too short (need >= 5 frames)");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create dataset directory '" + out_dir + "'");

    TaskManifest manifest;
    manifest.task_id = spec.task_id;
    manifest.root_dir = out_dir;

    for (size_t ci = 0; ci < clean_clips.size(); ++ci) {
        char name[16];
        std::snprintf(name, sizeof(name), "clip%02zu", ci);
        const fs::path clip_dir = fs::path(out_dir) / name;
        for (const char* sub : {"clean", "rainy", "streaks"}) {
            fs::create_directories(clip_dir / sub, ec);
            if (ec) throw IoError("cannot create '" + (clip_dir / sub).string() + "'");
        }
        const auto& frames = clean_clips[ci];
        for (size_t k = 0; k < frames.size(); ++k) {
            const Tensor clean_q = quantize8(frames[k]);
            const Tensor streak_q =
                quantize8(synthesize_streak_layer(spec, frames[k].h, frames[k].w,
                                                  static_cast<int>(k)));
            const Tensor rainy = apply_rain(clean_q, streak_q);
            const std::string fname = frame_name(static_cast<int>(k));
            write_png((clip_dir / "clean" / fname).string(), clean_q);
            write_png((clip_dir / "rainy" / fname).string(), rainy);
            write_png((clip_dir / "streaks" / fname).string(), streak_q);
        }
        manifest.clips.push_back({name, static_cast<int>(frames.size())});
    }

    ordered_json j;
    j["task_id"] = manifest.task_id;
    j["clips"] = ordered_json::array();
    for (const auto& c : manifest.clips)
        j["clips"].push_back({{"name", c.name}, {"frames", c.frames}});
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in '" + out_dir + "'");
    out << j.dump(2) << "\n";
    return manifest;
}

TaskManifest load_manifest(const std::string& dir) {
    const fs::path p = fs::path(dir) / "manifest.json";
    std::ifstream in(p);
    if (!in) throw IoError("cannot open manifest '" + p.string() + "'");
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("malformed manifest '" + p.string() + "': " + e.what());
    }
    TaskManifest m;
    m.task_id = j.at("task_id").get<std::string>();
    m.root_dir = dir;
    for (const auto& c : j.at("clips"))
        m.clips.push_back({c.at("name").get<std::string>(), c.at("frames").get<int>()});
    return m;
}

ClipPair load_clip(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::is_directory(root / "clean"))
        throw ValidationError("load_clip: missing clean/ subdirectory in '" + dir + "'");
    if (!fs::is_directory(root / "rainy"))
        throw ValidationError("load_clip: missing rainy/ subdirectory in '" + dir + "'");

    const auto clean_files = list_numbered_pngs(root / "clean");
    const auto rainy_files = list_numbered_pngs(root / "rainy");
    if (clean_files.empty()) throw ValidationError("load_clip: '" + dir + "' has no frames");
    if (clean_files.size() != rainy_files.size())
        throw ValidationError("load_clip: clean/rainy frame-count mismatch in '" + dir + "'");

    ClipPair clip;
    clip.task_id = root.filename().string();
    for (size_t i = 0; i < clean_files.size(); ++i) {
        clip.clean.push_back(read_png(clean_files[i].string(), 3));
        clip.rainy.push_back(read_png(rainy_files[i].string(), 3));
    }
    if (fs::is_directory(root / "streaks")) {
        const auto streak_files = list_numbered_pngs(root / "streaks");
        if (streak_files.size() != clean_files.size())
            throw ValidationError("load_clip: streaks frame-count mismatch in '" + dir + "'");
        for (const auto& f : streak_files) clip.streaks.push_back(read_png(f.string(), 1));
    }
    clip.validate();
    return clip;
}

std::vector<Tensor> load_frames(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<Tensor> frames;
    for (const auto& f : list_numbered_pngs(dir)) frames.push_back(read_png(f.string(), 3));
    if (frames.empty()) throw ValidationError("'" + dir + "' has no frames");
    return frames;
}

FrameWindow extract_window(const ClipPair& clip, int t) {
    const int n = clip.length();
    if (t < 0 || t >= n)
        throw ValidationError("extract_window: t=" + std::to_string(t) + " outside clip of length " +
                              std::to_string(n));
    if (clip.rainy[t].h < 16 || clip.rainy[t].w < 16)
        throw ValidationError("extract_window: frames must be at least 16x16");
    FrameWindow win;
    win.center_index = t;
    for (int o = -2; o <= 2; ++o) {
        const int idx = std::clamp(t + o, 0, n - 1);
        win.frames[o + 2] = clip.rainy[idx];
    }
    win.target = clip.clean[t];
    return win;
}

FrameWindow random_crop(const FrameWindow& window, int size, Rng& rng) {
    const int h = window.height(), w = window.width();
    if (size > h || size > w)
        throw ValidationError("random_crop: size " + std::to_string(size) + " exceeds frame " +
                              std::to_string(h) + "x" + std::to_string(w));
    const int oy = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(h - size + 1)));
    const int ox = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(w - size + 1)));

    auto crop = [&](const Tensor& t) {
        Tensor out(t.c, size, size);
        for (int ci = 0; ci < t.c; ++ci)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) out.at(ci, y, x) = t.at(ci, oy + y, ox + x);
        return out;
    };

    FrameWindow out;
    out.center_index = window.center_index;
    for (int i = 0; i < 5; ++i) out.frames[i] = crop(window.frames[i]);
    out.target = crop(window.target);
    return out;
}

std::vector<Tensor> make_clean_clip(uint64_t seed, int frames, int height, int width) {
    if (frames < 1) throw ValidationError("make_clean_clip: frames must be >= 1");
    Rng rng(derive_seed(seed, fnv1a64("clean_clip")));

    // Per-channel sinusoid fields.
    double fx[3], fy[3], ph[3], om[3];
    for (int c = 0; c < 3; ++c) {
        fx[c] = rng.uniform(0.5, 2.0) / width;
        fy[c] = rng.uniform(0.5, 2.0) / height;
        ph[c] = rng.uniform(0.0, 2.0 * M_PI);
        om[c] = rng.uniform(-0.3, 0.3);
    }
    // A soft disc moving across the canvas.
    const double disc_r = rng.uniform(0.15, 0.3) * std::min(height, width);
    double dcx = rng.uniform(0.2, 0.8) * width;
    double dcy = rng.uniform(0.2, 0.8) * height;
    const double dvx = rng.uniform(-0.05, 0.05) * width;
    const double dvy = rng.uniform(-0.05, 0.05) * height;
    double disc_col[3];
    for (int c = 0; c < 3; ++c) disc_col[c] = rng.uniform(0.2, 0.8);

    std::vector<Tensor> clip;
    clip.reserve(frames);
    for (int k = 0; k < frames; ++k) {
        Tensor img(3, height, width);
        const double cx = dcx + dvx * k, cy = dcy + dvy * k;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double d = std::hypot(x - cx, y - cy);
                // Smooth edge over ~3 pixels.
                const double m = std::clamp((disc_r - d) / 3.0, 0.0, 1.0);
                for (int c = 0; c < 3; ++c) {
                    double v = 0.5 + 0.25 * std::sin(2.0 * M_PI * (fx[c] * x + fy[c] * y) +
                                                     ph[c] + om[c] * k);
                    v = (1.0 - m) * v + m * disc_col[c];
                    img.at(c, y, x) = std::clamp(v, 0.05, 0.95);
                }
            }
        clip.push_back(std::move(img));
    }
    return clip;
}

} // namespace derain
