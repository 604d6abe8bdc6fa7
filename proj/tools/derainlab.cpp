// derainlab: synthesize rain-task datasets, run staged continual training,
// evaluate checkpoints, derain clips and build forgetting reports.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "derain/checkpoint.hpp"
#include "derain/config.hpp"
#include "derain/data.hpp"
#include "derain/image_io.hpp"
#include "derain/kernels.hpp"
#include "derain/metrics.hpp"
#include "derain/report.hpp"
#include "derain/train.hpp"
#include "derain/util.hpp"

namespace fs = std::filesystem;
using namespace derain;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string preset;
    std::string ablation;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
};

// Applies CLI overrides on top of the config file, honoring the
// DERAINLAB_OUT root for relative output paths.
RunConfig load_config(const GlobalOpts& g) {
    if (g.config_path.empty()) throw ValidationError("--config is required");
    std::ifstream in(g.config_path);
    if (!in) throw IoError("cannot open config '" + g.config_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();

    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(ss.str());
    } catch (const std::exception& e) {
        throw ValidationError(std::string("config: malformed JSON: ") + e.what());
    }
    if (!g.preset.empty()) j["preset"] = g.preset;
    if (!g.ablation.empty()) j["ablation"] = g.ablation;
    if (g.seed_set) j["seed"] = g.seed;
    // An explicit data_dir in the config survives --out, so ablation arms can
    // share one dataset; otherwise data stays next to the output directory.
    if (!g.out_dir.empty()) j["out_dir"] = g.out_dir;
    RunConfig cfg = parse_run_config(j.dump());

    if (const char* root = std::getenv("DERAINLAB_OUT")) {
        if (root[0] != '\0' && !fs::path(cfg.out_dir).is_absolute()) {
            const bool data_inside = cfg.data_dir == cfg.out_dir + "/data";
            cfg.out_dir = (fs::path(root) / cfg.out_dir).string();
            if (data_inside)
                cfg.data_dir = cfg.out_dir + "/data";
            else if (!fs::path(cfg.data_dir).is_absolute())
                cfg.data_dir = (fs::path(root) / cfg.data_dir).string();
        }
    }
    return cfg;
}

int cmd_synth(const GlobalOpts& g) {
    RunConfig cfg = load_config(g);
    for (size_t i = 0; i < cfg.tasks.size(); ++i) {
        const auto clips = clean_clips_for_task(cfg, i);
        const std::string dir = cfg.task_data_dir(cfg.tasks[i].task_id);
        const TaskManifest m = generate_task_dataset(cfg.tasks[i], clips, dir);
        std::cout << "task " << m.task_id << ": " << m.clips.size() << " clips -> " << dir
                  << "/manifest.json\n";
    }
    return 0;
}

std::vector<ScheduleTask> schedule_tasks(const RunConfig& cfg) {
    std::vector<ScheduleTask> tasks;
    for (const auto& spec : cfg.tasks) {
        const std::string dir = cfg.task_data_dir(spec.task_id);
        if (!fs::exists(fs::path(dir) / "manifest.json"))
            throw ValidationError("no dataset for task '" + spec.task_id + "' under " + dir +
                                  " (run `derainlab synth` first)");
        tasks.push_back({spec.task_id, load_manifest(dir)});
    }
    return tasks;
}

int cmd_train(const GlobalOpts& g, bool dry_run, bool resume) {
    RunConfig cfg = load_config(g);
    const AblationFlags flags = parse_ablation(cfg.ablation);

    if (dry_run) {
        std::cout << "config ok (fingerprint " << std::hex << cfg.fingerprint() << std::dec
                  << ")\n";
        std::cout << "arch: derain base " << cfg.derain_arch.base_channels << " depth "
                  << cfg.derain_arch.depth << ", review base " << cfg.review_arch.base_channels
                  << " depth " << cfg.review_arch.depth << "\n";
        std::cout << "ablation " << cfg.ablation << " (rkd=" << flags.use_rkd
                  << " fkd=" << flags.use_fkd << " rrm=" << flags.use_rrm << "), seed "
                  << cfg.seed << "\n";
        for (size_t i = 0; i < cfg.tasks.size(); ++i)
            std::cout << "stage " << i + 1 << ": task " << cfg.tasks[i].task_id << ", "
                      << cfg.epochs << " epochs, crop " << cfg.crop_size << "\n";
        std::cout << "output: " << cfg.out_dir << "\n";
        return 0;
    }

    const auto tasks = schedule_tasks(cfg);
    const ScheduleConfig sc = cfg.schedule_config();
    const ScheduleResult res = resume ? resume_schedule(sc, tasks) : run_schedule(sc, tasks);

    std::cout << "kernels: " << kernels::active_name() << "\n";
    std::cout << "completed " << res.checkpoints.size() << "/" << tasks.size()
              << " stages; logs in " << cfg.out_dir << "\n";
    for (size_t i = 0; i < res.checkpoints.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "stage_%02zu.ckpt", i + 1);
        std::cout << "  " << cfg.out_dir << "/" << name << "\n";
    }
    return 0;
}

std::vector<FrameWindow> dataset_windows(const std::string& data_path) {
    std::vector<FrameWindow> windows;
    if (fs::exists(fs::path(data_path) / "manifest.json")) {
        const TaskManifest m = load_manifest(data_path);
        for (size_t i = 0; i < m.clips.size(); ++i) {
            const ClipPair clip = load_clip(m.clip_dir(i));
            for (int t = 0; t < clip.length(); ++t) windows.push_back(extract_window(clip, t));
        }
    } else {
        const ClipPair clip = load_clip(data_path);
        for (int t = 0; t < clip.length(); ++t) windows.push_back(extract_window(clip, t));
    }
    return windows;
}

int cmd_eval(const GlobalOpts& g, const std::string& ckpt_path, const std::string& data_path) {
    const StageCheckpoint ckpt = load_checkpoint(ckpt_path);
    if (!g.config_path.empty()) {
        const RunConfig cfg = load_config(g);
        if (!(cfg.derain_arch == ckpt.derain_arch))
            throw ValidationError("checkpoint arch does not match the config's arch preset");
    }
    DerainNet net;
    build_derain_from_checkpoint(ckpt, net);

    const auto windows = dataset_windows(data_path);
    const std::string task_id = fs::path(data_path).filename().string();
    EvalRecord rec = evaluate_task(net, windows, task_id);
    rec.stage = static_cast<int>(ckpt.stage_index);
    rec.epoch = static_cast<int>(ckpt.epochs_done);

    std::cout << "task " << rec.task_id << ": psnr " << format_double(rec.psnr_db, 6)
              << " dB, ssim " << format_double(rec.ssim, 6) << " over " << rec.n_windows
              << " windows\n";
    if (!g.out_dir.empty()) {
        fs::create_directories(g.out_dir);
        TrainLog log;
        log.eval_csv_path = g.out_dir + "/eval.csv";
        log.append_eval(rec);
        log.flush();
    }
    return 0;
}

int cmd_derain(const std::string& ckpt_path, const std::string& clip_dir,
               const std::string& out_dir) {
    const StageCheckpoint ckpt = load_checkpoint(ckpt_path);
    DerainNet net; // evaluation needs the derain net alone
    build_derain_from_checkpoint(ckpt, net);

    std::vector<Tensor> frames;
    if (fs::is_directory(fs::path(clip_dir) / "rainy"))
        frames = load_frames((fs::path(clip_dir) / "rainy").string());
    else
        frames = load_frames(clip_dir);

    fs::create_directories(out_dir);
    const int n = static_cast<int>(frames.size());
    for (int t = 0; t < n; ++t) {
        FrameWindow win;
        win.center_index = t;
        for (int o = -2; o <= 2; ++o)
            win.frames[o + 2] = frames[std::clamp(t + o, 0, n - 1)];
        win.target = frames[t]; // unused by the forward pass
        const DerainTrace tr = net.forward(win);
        char name[16];
        std::snprintf(name, sizeof(name), "%05d.png", t);
        write_png((fs::path(out_dir) / name).string(), tr.background());
    }
    std::cout << "derained " << n << " frames -> " << out_dir << "\n";
    return 0;
}

int cmd_report(const std::string& log_dir, const std::string& out_dir) {
    const std::string table = write_report(log_dir, out_dir);
    std::cout << table;
    std::cout << "plots written to " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual-learning video derain laboratory"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "run config file (JSON)");
    app.add_option("--preset", g.preset, "preset override: tiny|paper");
    app.add_option("--ablation", g.ablation, "ablation arm override: base|frd|full");
    auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
    app.add_option("--out", g.out_dir, "output directory override");

    auto* synth = app.add_subcommand("synth", "generate synthetic rain-task datasets");

    auto* train = app.add_subcommand("train", "run the staged training schedule");
    bool dry_run = false, resume = false;
    train->add_flag("--dry-run", dry_run, "validate config and print the stage plan");
    train->add_flag("--resume", resume, "continue from <out>/state.ckpt");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "task dataset dir (manifest.json) or clip dir")
        ->required();

    auto* derain_cmd = app.add_subcommand("derain", "derain a clip with a checkpoint");
    std::string dr_ckpt, dr_clip, dr_out;
    derain_cmd->add_option("--checkpoint", dr_ckpt, "checkpoint file")->required();
    derain_cmd->add_option("--clip", dr_clip, "clip directory (rainy/ subdir or bare frames)")
        ->required();
    derain_cmd->add_option("--out-frames", dr_out, "output frame directory")->required();

    auto* report = app.add_subcommand("report", "forgetting curves and drop summary");
    std::string rep_log, rep_out;
    report->add_option("--log", rep_log, "run dir with eval.csv, or dir of arm subdirs")
        ->required();
    report->add_option("--out-report", rep_out, "report output directory")->required();

    try {
        app.parse(argc, argv);
        g.seed_set = seed_opt->count() > 0;
        if (synth->parsed()) return cmd_synth(g);
        if (train->parsed()) return cmd_train(g, dry_run, resume);
        if (eval->parsed()) return cmd_eval(g, eval_ckpt, eval_data);
        if (derain_cmd->parsed()) return cmd_derain(dr_ckpt, dr_clip, dr_out);
        if (report->parsed()) return cmd_report(rep_log, rep_out);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
