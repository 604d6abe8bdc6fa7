#include "derain/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "derain/util.hpp"

using ordered_json = nlohmann::ordered_json;

namespace derain {
namespace {

void reject_unknown(const ordered_json& obj, const std::set<std::string>& known,
                    const std::string& where) {
    for (const auto& [key, _] : obj.items())
        if (!known.count(key))
            throw ValidationError("config: unknown key '" + key + "' in " + where);
}

std::pair<double, double> parse_range(const ordered_json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2)
        throw ValidationError("config: " + where + " must be a [low, high] pair");
    return {j[0].get<double>(), j[1].get<double>()};
}

ArchConfig parse_arch(const ordered_json& j, const std::string& where, ArchConfig defaults) {
    reject_unknown(j, {"base_channels", "depth"}, where);
    ArchConfig a = defaults;
    if (j.contains("base_channels")) a.base_channels = j["base_channels"].get<int>();
    if (j.contains("depth")) a.depth = j["depth"].get<int>();
    return a;
}

void apply_preset(RunConfig& cfg) {
    if (cfg.preset == "tiny") {
        cfg.derain_arch = {8, 2};
        cfg.review_arch = {4, 2};
        cfg.epochs = 20;
        cfg.learning_rate = 1e-3;
        cfg.crop_size = 32;
        cfg.grad_clip_norm = 1.0;
        cfg.clean_clips = {2, 10, 64, 64, 100, {}};
    } else if (cfg.preset == "paper") {
        cfg.derain_arch = {32, 3};
        cfg.review_arch = {16, 3};
        cfg.epochs = 160;
        cfg.learning_rate = 1e-3;
        cfg.crop_size = 240;
        cfg.grad_clip_norm = 0.0; // full-scale runs train without clipping
        cfg.clean_clips = {4, 30, 256, 256, 100, {}};
    } else {
        throw ValidationError("config: unknown preset '" + cfg.preset + "' (tiny|paper)");
    }
}

RainTaskSpec parse_task(const ordered_json& j, size_t index) {
    const std::string where = "tasks[" + std::to_string(index) + "]";
    reject_unknown(j,
                   {"task_id", "angle_deg_range", "length_px_range", "width_px_range", "density",
                    "intensity_range", "drift_px_per_frame", "seed"},
                   where);
    RainTaskSpec s;
    s.task_id = j.at("task_id").get<std::string>();
    if (j.contains("angle_deg_range"))
        s.angle_deg_range = parse_range(j["angle_deg_range"], where + ".angle_deg_range");
    if (j.contains("length_px_range"))
        s.length_px_range = parse_range(j["length_px_range"], where + ".length_px_range");
    if (j.contains("width_px_range"))
        s.width_px_range = parse_range(j["width_px_range"], where + ".width_px_range");
    if (j.contains("density")) s.density = j["density"].get<double>();
    if (j.contains("intensity_range"))
        s.intensity_range = parse_range(j["intensity_range"], where + ".intensity_range");
    if (j.contains("drift_px_per_frame")) s.drift_px_per_frame = j["drift_px_per_frame"].get<double>();
    if (j.contains("seed")) s.seed = j["seed"].get<uint64_t>();
    s.validate();
    return s;
}

} // namespace

RunConfig parse_run_config(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw ValidationError(std::string("config: malformed JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"preset", "seed", "out_dir", "data_dir", "ablation", "arch", "loss_weights",
                    "train", "clean_clips", "tasks"},
                   "config root");

    RunConfig cfg;
    if (j.contains("preset")) cfg.preset = j["preset"].get<std::string>();
    apply_preset(cfg);

    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("data_dir")) cfg.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("ablation")) cfg.ablation = j["ablation"].get<std::string>();

    if (j.contains("arch")) {
        reject_unknown(j["arch"], {"derain", "review"}, "arch");
        if (j["arch"].contains("derain"))
            cfg.derain_arch = parse_arch(j["arch"]["derain"], "arch.derain", cfg.derain_arch);
        if (j["arch"].contains("review"))
            cfg.review_arch = parse_arch(j["arch"]["review"], "arch.review", cfg.review_arch);
    }
    if (j.contains("loss_weights")) {
        const auto& lw = j["loss_weights"];
        reject_unknown(lw, {"sigma1", "sigma2", "lambda1", "lambda2", "lambda3", "lambda4"},
                       "loss_weights");
        if (lw.contains("sigma1")) cfg.weights.sigma1 = lw["sigma1"].get<double>();
        if (lw.contains("sigma2")) cfg.weights.sigma2 = lw["sigma2"].get<double>();
        if (lw.contains("lambda1")) cfg.weights.lambda1 = lw["lambda1"].get<double>();
        if (lw.contains("lambda2")) cfg.weights.lambda2 = lw["lambda2"].get<double>();
        if (lw.contains("lambda3")) cfg.weights.lambda3 = lw["lambda3"].get<double>();
        if (lw.contains("lambda4")) cfg.weights.lambda4 = lw["lambda4"].get<double>();
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        reject_unknown(t,
                       {"epochs", "learning_rate", "batch_size", "crop_size", "grad_clip_norm",
                        "holdout_clips"},
                       "train");
        if (t.contains("epochs")) cfg.epochs = t["epochs"].get<int>();
        if (t.contains("learning_rate")) cfg.learning_rate = t["learning_rate"].get<double>();
        if (t.contains("batch_size")) cfg.batch_size = t["batch_size"].get<int>();
        if (t.contains("crop_size")) cfg.crop_size = t["crop_size"].get<int>();
        if (t.contains("grad_clip_norm")) cfg.grad_clip_norm = t["grad_clip_norm"].get<double>();
        if (t.contains("holdout_clips")) cfg.holdout_clips = t["holdout_clips"].get<int>();
    }
    if (j.contains("clean_clips")) {
        const auto& c = j["clean_clips"];
        reject_unknown(c, {"count", "frames", "height", "width", "seed", "source_dirs"},
                       "clean_clips");
        if (c.contains("count")) cfg.clean_clips.count = c["count"].get<int>();
        if (c.contains("frames")) cfg.clean_clips.frames = c["frames"].get<int>();
        if (c.contains("height")) cfg.clean_clips.height = c["height"].get<int>();
        if (c.contains("width")) cfg.clean_clips.width = c["width"].get<int>();
        if (c.contains("seed")) cfg.clean_clips.seed = c["seed"].get<uint64_t>();
        if (c.contains("source_dirs"))
            cfg.clean_clips.source_dirs = c["source_dirs"].get<std::vector<std::string>>();
    }
    if (j.contains("tasks")) {
        if (!j["tasks"].is_array()) throw ValidationError("config: tasks must be an array");
        for (size_t i = 0; i < j["tasks"].size(); ++i)
            cfg.tasks.push_back(parse_task(j["tasks"][i], i));
    }
    if (cfg.data_dir.empty()) cfg.data_dir = cfg.out_dir + "/data";
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

void RunConfig::validate() const {
    if (tasks.empty()) throw ValidationError("config: need at least one task");
    std::set<std::string> ids;
    for (const auto& t : tasks) {
        t.validate();
        if (!ids.insert(t.task_id).second)
            throw ValidationError("config: duplicate task_id '" + t.task_id + "'");
    }
    derain_arch.validate();
    review_arch.validate();
    weights.validate();
    parse_ablation(ablation);
    if (epochs < 1) throw ValidationError("config: train.epochs must be >= 1");
    if (!(learning_rate > 0)) throw ValidationError("config: train.learning_rate must be > 0");
    if (batch_size < 1) throw ValidationError("config: train.batch_size must be >= 1");
    if (crop_size < 16) throw ValidationError("config: train.crop_size must be >= 16");
    if (crop_size % derain_arch.downsample_factor())
        throw ValidationError("config: crop_size must be divisible by the downsample factor " +
                              std::to_string(derain_arch.downsample_factor()));
    if (crop_size % review_arch.downsample_factor())
        throw ValidationError("config: crop_size must be divisible by the review downsample factor");
    if (holdout_clips < 1) throw ValidationError("config: train.holdout_clips must be >= 1");
    if (clean_clips.source_dirs.empty()) {
        if (clean_clips.count < holdout_clips + 1)
            throw ValidationError("config: clean_clips.count must exceed holdout_clips");
        if (clean_clips.frames < 5)
            throw ValidationError("config: clean_clips.frames must be >= 5");
        if (clean_clips.height < crop_size || clean_clips.width < crop_size)
            throw ValidationError("config: clean clip size must be >= crop_size");
        if (clean_clips.height % derain_arch.downsample_factor() ||
            clean_clips.width % derain_arch.downsample_factor())
            throw ValidationError("config: clean clip size must be divisible by the downsample factor");
    }
}

std::string RunConfig::canonical() const {
    ordered_json j;
    j["preset"] = preset;
    j["seed"] = seed;
    j["ablation"] = ablation;
    j["arch"] = {{"derain", {{"base_channels", derain_arch.base_channels}, {"depth", derain_arch.depth}}},
                 {"review", {{"base_channels", review_arch.base_channels}, {"depth", review_arch.depth}}}};
    j["loss_weights"] = {{"sigma1", weights.sigma1},   {"sigma2", weights.sigma2},
                         {"lambda1", weights.lambda1}, {"lambda2", weights.lambda2},
                         {"lambda3", weights.lambda3}, {"lambda4", weights.lambda4}};
    j["train"] = {{"epochs", epochs},
                  {"learning_rate", learning_rate},
                  {"batch_size", batch_size},
                  {"crop_size", crop_size},
                  {"grad_clip_norm", grad_clip_norm},
                  {"holdout_clips", holdout_clips}};
    j["clean_clips"] = {{"count", clean_clips.count},
                        {"frames", clean_clips.frames},
                        {"height", clean_clips.height},
                        {"width", clean_clips.width},
                        {"seed", clean_clips.seed},
                        {"source_dirs", clean_clips.source_dirs}};
    j["tasks"] = ordered_json::array();
    for (const auto& t : tasks)
        j["tasks"].push_back({{"task_id", t.task_id},
                              {"angle_deg_range", {t.angle_deg_range.first, t.angle_deg_range.second}},
                              {"length_px_range", {t.length_px_range.first, t.length_px_range.second}},
                              {"width_px_range", {t.width_px_range.first, t.width_px_range.second}},
                              {"density", t.density},
                              {"intensity_range", {t.intensity_range.first, t.intensity_range.second}},
                              {"drift_px_per_frame", t.drift_px_per_frame},
                              {"seed", t.seed}});
    return j.dump();
}

uint64_t RunConfig::fingerprint() const { return fnv1a64(canonical()); }

std::string RunConfig::task_data_dir(const std::string& task_id) const {
    return data_dir + "/" + task_id;
}

StageConfig RunConfig::stage_template() const {
    StageConfig s;
    s.epochs = epochs;
    s.learning_rate = learning_rate;
    s.batch_size = batch_size;
    s.crop_size = crop_size;
    s.grad_clip_norm = grad_clip_norm;
    s.weights = weights;
    s.seed = seed;
    return s;
}

ScheduleConfig RunConfig::schedule_config() const {
    ScheduleConfig sc;
    sc.derain_arch = derain_arch;
    sc.review_arch = review_arch;
    sc.stage_template = stage_template();
    sc.flags = parse_ablation(ablation);
    sc.holdout_clips = holdout_clips;
    sc.out_dir = out_dir;
    sc.config_fingerprint = fingerprint();
    return sc;
}

std::vector<std::vector<Tensor>> clean_clips_for_task(const RunConfig& cfg, size_t task_index) {
    std::vector<std::vector<Tensor>> clips;
    if (!cfg.clean_clips.source_dirs.empty()) {
        for (const auto& dir : cfg.clean_clips.source_dirs) clips.push_back(load_frames(dir));
        return clips;
    }
    for (int i = 0; i < cfg.clean_clips.count; ++i) {
        const uint64_t seed =
            derive_seed(cfg.clean_clips.seed, task_index, static_cast<uint64_t>(i));
        clips.push_back(make_clean_clip(seed, cfg.clean_clips.frames, cfg.clean_clips.height,
                                        cfg.clean_clips.width));
    }
    return clips;
}

} // namespace derain
