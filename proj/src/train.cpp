#include "derain/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "derain/kernels.hpp"
#include "derain/util.hpp"

namespace fs = std::filesystem;

namespace derain {
namespace {

enum RngStream : uint64_t { kStreamOrder = 1, kStreamCrop = 2, kStreamAffine = 3 };

Rng epoch_rng(uint64_t seed, int stage, int epoch, RngStream stream) {
    return Rng(derive_seed(seed, static_cast<uint64_t>(stage),
                           static_cast<uint64_t>(epoch), stream));
}

std::string csv_num(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

struct WindowTerms {
    double l_c = 0, l_rkd = 0, l_fkd = 0, l_r = 0;
};

// Forward/backward for one window: accumulates gradients into both nets.
// Loss-term gradients are pre-scaled by their lambda weights.
WindowTerms accumulate_window(TrainState& st, const TeacherNets* teacher,
                              const AblationFlags& flags, const LossWeights& w,
                              const FrameWindow& win, Rng& affine_rng, int stage) {
    const auto& K = kernels::active();
    WindowTerms terms;

    DerainTrace tr = st.derain.forward(win);
    ValueGrad cg = combined_loss_grad(tr.background(), win.target, w);
    terms.l_c = cg.value;

    Tensor grad_b = zeros_like(cg.grad);
    K.axpy(w.lambda1, cg.grad.data(), grad_b.data(), grad_b.size());

    const bool teacher_used = teacher && (flags.use_rkd || flags.use_fkd || flags.use_rrm);
    std::optional<DerainTrace> ttr;
    if (teacher_used) ttr = teacher->derain.forward(win);

    if (teacher && flags.use_rkd) {
        ValueGrad rg = combined_loss_grad(tr.background(), ttr->background(), w);
        terms.l_rkd = rg.value;
        K.axpy(w.lambda2, rg.grad.data(), grad_b.data(), grad_b.size());
    }
    std::optional<Tensor> grad_f;
    if (teacher && flags.use_fkd) {
        ValueGrad fg = feature_kd_loss_grad(tr.features(), ttr->features());
        terms.l_fkd = fg.value;
        grad_f = zeros_like(fg.grad);
        K.axpy(w.lambda3, fg.grad.data(), grad_f->data(), grad_f->size());
    }
    st.derain.backward(tr, grad_b, grad_f ? &*grad_f : nullptr);

    if (teacher && flags.use_rrm) {
        // Teacher-side replay: its residual feeds its review net, and the
        // synthesized frame rehearses the old rain on the current window.
        const Tensor teacher_res = extract_residual(win, ttr->background());
        const ReviewTrace teacher_review = review_forward(teacher->review, teacher_res);
        const AffineParams p = sample_affine(affine_rng);
        terms.l_r = review_replay_loss_backward(st.derain, win, teacher_review.rain_map(),
                                                ttr->background(), w, p, w.lambda4);
    }

    // Review-net step on the student's own (detached) residual. The teacher
    // review net sees the same input so the distillation terms compare like
    // with like.
    const Tensor student_res = extract_residual(win, tr.background());
    const ReviewTrace rt = review_forward(st.review, student_res);
    Tensor true_res(3, win.target.h, win.target.w);
    K.sub(win.center().data(), win.target.data(), true_res.data(), true_res.size());
    const Tensor target_map = gray_residual(true_res);

    if (stage > 1 && teacher) {
        const ReviewTrace trt = review_forward(teacher->review, student_res);
        ReviewNetLossGrads g = review_net_loss_grad(stage, &rt.features(), &trt.features(),
                                                    rt.rain_map(), &trt.rain_map(), target_map, w);
        st.review.backward(rt, g.grad_rain_map, &g.grad_features);
    } else {
        ReviewNetLossGrads g = review_net_loss_grad(1, nullptr, nullptr, rt.rain_map(), nullptr,
                                                    target_map, w);
        st.review.backward(rt, g.grad_rain_map, nullptr);
    }
    return terms;
}

void scale_grads(std::vector<ParamRef> params, double s) {
    for (auto& p : params) kernels::active().scale(s, p.grad->data(), p.grad->size());
}

} // namespace

void StageConfig::validate() const {
    if (stage_index < 1) throw ValidationError("stage_index must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (crop_size < 16) throw ValidationError("crop_size must be >= 16");
    if (grad_clip_norm < 0.0) throw ValidationError("grad_clip_norm must be >= 0");
    weights.validate();
}

AblationFlags parse_ablation(const std::string& name) {
    if (name == "base") return {false, false, false};
    if (name == "frd") return {true, true, false};
    if (name == "full") return {true, true, true};
    throw ValidationError("unknown ablation '" + name + "' (expected base|frd|full)");
}

void TrainLog::flush() {
    if (!train_csv_path.empty()) {
        for (; flushed_steps_ < steps.size(); ++flushed_steps_) {
            const StepRecord& r = steps[flushed_steps_];
            append_line_locked(train_csv_path,
                               std::to_string(r.stage) + "," + std::to_string(r.epoch) + "," +
                                   std::to_string(r.step) + "," + csv_num(r.l_c) + "," +
                                   csv_num(r.l_rkd) + "," + csv_num(r.l_fkd) + "," +
                                   csv_num(r.l_r) + "," + csv_num(r.total),
                               "stage,epoch,step,L_C,L_RKD,L_FKD,L_R,total");
        }
    }
    if (!eval_csv_path.empty()) {
        for (; flushed_evals_ < evals.size(); ++flushed_evals_) {
            const EvalRecord& r = evals[flushed_evals_];
            append_line_locked(eval_csv_path,
                               std::to_string(r.stage) + "," + std::to_string(r.epoch) + "," +
                                   r.task_id + "," + csv_num(r.psnr_db) + "," + csv_num(r.ssim),
                               "stage,epoch,task_id,psnr,ssim");
        }
    }
}

std::vector<ClipPair> TrainingDataLayer::load_training_clips(int stage,
                                                             const TaskManifest& manifest,
                                                             int holdout_clips) {
    const int total = static_cast<int>(manifest.clips.size());
    const int train_count = total - holdout_clips;
    if (train_count < 1)
        throw ValidationError("task '" + manifest.task_id + "': " + std::to_string(total) +
                              " clips cannot supply " + std::to_string(holdout_clips) +
                              " holdout clips and still train");
    std::vector<ClipPair> clips;
    for (int i = 0; i < train_count; ++i) {
        const std::string dir = manifest.clip_dir(i);
        log_.push_back({stage, dir});
        clips.push_back(load_clip(dir));
    }
    return clips;
}

void TrainingDataLayer::dump_log(const std::string& csv_path) const {
    for (const Access& a : log_)
        append_line_locked(csv_path, std::to_string(a.stage) + "," + a.clip_dir,
                           "stage,clip_dir");
}

std::vector<FrameWindow> build_eval_windows(const TaskManifest& manifest, int holdout_clips) {
    const int total = static_cast<int>(manifest.clips.size());
    if (holdout_clips < 1 || holdout_clips >= total)
        throw ValidationError("task '" + manifest.task_id + "': invalid holdout clip count");
    std::vector<FrameWindow> windows;
    for (int i = total - holdout_clips; i < total; ++i) {
        const ClipPair clip = load_clip(manifest.clip_dir(i));
        for (int t = 0; t < clip.length(); ++t) windows.push_back(extract_window(clip, t));
    }
    return windows;
}

int run_training_stage(TrainState& student, const TeacherNets* teacher, const StageConfig& cfg,
                       const StageData& data, const AblationFlags& flags, TrainLog& log,
                       const EpochHook& hook, int start_epoch) {
    cfg.validate();
    if (data.clips.empty() || data.window_count() == 0)
        throw ValidationError("training stage " + std::to_string(cfg.stage_index) +
                              ": empty dataset");
    const int f = student.derain.arch.downsample_factor();
    if (cfg.crop_size % f)
        throw ValidationError("crop_size " + std::to_string(cfg.crop_size) +
                              " not divisible by downsample factor " + std::to_string(f));
    if (teacher && !(teacher->derain.arch == student.derain.arch))
        throw ValidationError("teacher/student derain arch mismatch");
    if (teacher && !(teacher->review.arch == student.review.arch))
        throw ValidationError("teacher/student review arch mismatch");

    auto derain_params = student.derain.params();
    auto review_params = student.review.params();
    if (!student.adam_derain.matches(derain_params)) student.adam_derain.reset(derain_params);
    if (!student.adam_review.matches(review_params)) student.adam_review.reset(review_params);

    std::vector<std::pair<int, int>> all_windows;
    for (size_t ci = 0; ci < data.clips.size(); ++ci)
        for (int t = 0; t < data.clips[ci].length(); ++t)
            all_windows.emplace_back(static_cast<int>(ci), t);

    const LossWeights& w = cfg.weights;
    int completed = start_epoch - 1;
    for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
        Rng order_rng = epoch_rng(cfg.seed, cfg.stage_index, epoch, kStreamOrder);
        Rng crop_rng = epoch_rng(cfg.seed, cfg.stage_index, epoch, kStreamCrop);
        Rng affine_rng = epoch_rng(cfg.seed, cfg.stage_index, epoch, kStreamAffine);

        std::vector<std::pair<int, int>> order = all_windows;
        for (size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[order_rng.uniform_index(i + 1)]);

        int step = 0;
        for (size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
            const size_t bn = std::min<size_t>(cfg.batch_size, order.size() - pos);
            student.derain.zero_grads();
            student.review.zero_grads();
            WindowTerms mean;
            for (size_t k = 0; k < bn; ++k) {
                const auto [ci, t] = order[pos + k];
                FrameWindow win = extract_window(data.clips[ci], t);
                if (cfg.crop_size > win.height() || cfg.crop_size > win.width())
                    throw ValidationError("crop_size exceeds training frame size");
                win = random_crop(win, cfg.crop_size, crop_rng);
                const WindowTerms t2 =
                    accumulate_window(student, teacher, flags, w, win, affine_rng,
                                      cfg.stage_index);
                mean.l_c += t2.l_c;
                mean.l_rkd += t2.l_rkd;
                mean.l_fkd += t2.l_fkd;
                mean.l_r += t2.l_r;
            }
            const double inv = 1.0 / static_cast<double>(bn);
            mean.l_c *= inv;
            mean.l_rkd *= inv;
            mean.l_fkd *= inv;
            mean.l_r *= inv;
            if (bn > 1) {
                scale_grads(derain_params, inv);
                scale_grads(review_params, inv);
            }
            adam_step(derain_params, student.adam_derain, cfg.adam());
            adam_step(review_params, student.adam_review, cfg.adam());

            StepRecord rec;
            rec.stage = cfg.stage_index;
            rec.epoch = epoch;
            rec.step = ++step;
            rec.l_c = mean.l_c;
            rec.l_rkd = mean.l_rkd;
            rec.l_fkd = mean.l_fkd;
            rec.l_r = mean.l_r;
            DerainLossTerms terms;
            terms.l_c = mean.l_c;
            if (teacher && flags.use_rkd) terms.l_rkd = mean.l_rkd;
            if (teacher && flags.use_fkd) terms.l_fkd = mean.l_fkd;
            if (teacher && flags.use_rrm) terms.l_r = mean.l_r;
            rec.total = total_derain_loss(terms, w);
            if (!std::isfinite(rec.total))
                throw std::runtime_error(
                    "non-finite loss at stage " + std::to_string(cfg.stage_index) + " epoch " +
                    std::to_string(epoch) + " step " + std::to_string(step) +
                    " (L_C=" + csv_num(rec.l_c) + ", L_RKD=" + csv_num(rec.l_rkd) +
                    ", L_FKD=" + csv_num(rec.l_fkd) + ", L_R=" + csv_num(rec.l_r) + ")");
            log.append_step(rec);
        }
        completed = epoch;
        if (hook && !hook(epoch)) break;
    }
    return completed;
}

StageCheckpoint train_stage_initial(TrainState& student, const StageConfig& cfg,
                                    const StageData& data, TrainLog& log,
                                    uint64_t config_fingerprint) {
    if (cfg.stage_index != 1)
        throw ValidationError("train_stage_initial requires stage_index == 1");
    run_training_stage(student, nullptr, cfg, data, {}, log);
    return make_checkpoint(student.derain, student.review, &student.adam_derain,
                           &student.adam_review, 1, static_cast<uint32_t>(cfg.epochs),
                           config_fingerprint);
}

StageCheckpoint train_stage_continual(const StageCheckpoint& student_init, TrainState& student,
                                      const StageConfig& cfg, const StageData& data,
                                      const AblationFlags& flags, TrainLog& log,
                                      uint64_t config_fingerprint) {
    if (cfg.stage_index != static_cast<int>(student_init.stage_index) + 1)
        throw ValidationError("train_stage_continual: stage_index must be previous stage + 1");

    TeacherNets teacher;
    build_from_checkpoint(student_init, teacher.derain, teacher.review);

    // The student inherits the teacher's parameters; optimizer state starts fresh.
    build_from_checkpoint(student_init, student.derain, student.review);
    student.adam_derain.reset(student.derain.params());
    student.adam_review.reset(student.review.params());

    run_training_stage(student, &teacher, cfg, data, flags, log);
    return make_checkpoint(student.derain, student.review, &student.adam_derain,
                           &student.adam_review, static_cast<uint32_t>(cfg.stage_index),
                           static_cast<uint32_t>(cfg.epochs), config_fingerprint);
}

namespace {

std::string stage_ckpt_path(const std::string& out_dir, int stage) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "stage_%02d.ckpt", stage);
    return out_dir + "/" + buf;
}

ScheduleResult run_stages(const ScheduleConfig& cfg, const std::vector<ScheduleTask>& tasks,
                          const InterruptHook& interrupt, TrainState& st, int start_stage,
                          int start_epoch, std::optional<TeacherNets> initial_teacher) {
    ScheduleResult res;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        res.log.train_csv_path = cfg.out_dir + "/train.csv";
        res.log.eval_csv_path = cfg.out_dir + "/eval.csv";
    }

    // Hold-out windows for every task are materialized up front; training
    // never re-opens a past task's files.
    std::vector<std::vector<FrameWindow>> eval_sets;
    for (const auto& t : tasks)
        eval_sets.push_back(build_eval_windows(t.manifest, cfg.holdout_clips));

    TrainingDataLayer data_layer;
    const int k_tasks = static_cast<int>(tasks.size());
    bool stopped = false;

    for (int j = start_stage; j <= k_tasks && !stopped; ++j) {
        StageData data;
        data.task_id = tasks[j - 1].task_id;
        data.clips = data_layer.load_training_clips(j, tasks[j - 1].manifest, cfg.holdout_clips);

        const bool fresh_stage = j != start_stage || start_epoch == 1;
        std::optional<TeacherNets> teacher;
        if (j > 1) {
            if (!fresh_stage && initial_teacher) {
                teacher = std::move(*initial_teacher);
                initial_teacher.reset();
            } else {
                teacher = TeacherNets{st.derain, st.review};
            }
        }
        if (fresh_stage && j > 1) {
            st.adam_derain.reset(st.derain.params());
            st.adam_review.reset(st.review.params());
        }

        StageConfig scfg = cfg.stage_template;
        scfg.stage_index = j;
        scfg.task_id = tasks[j - 1].task_id;

        EpochHook hook = [&](int epoch) -> bool {
            for (int k = 0; k < j; ++k) {
                EvalRecord rec = evaluate_task(st.derain, eval_sets[k], tasks[k].task_id);
                rec.stage = j;
                rec.epoch = epoch;
                res.log.append_eval(rec);
            }
            res.log.flush();
            if (!cfg.out_dir.empty()) {
                StageCheckpoint state = make_checkpoint(
                    st.derain, st.review, &st.adam_derain, &st.adam_review,
                    static_cast<uint32_t>(j), static_cast<uint32_t>(epoch),
                    cfg.config_fingerprint);
                save_checkpoint(cfg.out_dir + "/state.ckpt", state);
            }
            if (interrupt && interrupt(j, epoch)) {
                stopped = true;
                res.interrupted = true;
                res.next_stage = j;
                return false;
            }
            return true;
        };

        int done = 0;
        try {
            done = run_training_stage(st, teacher ? &*teacher : nullptr, scfg, data, cfg.flags,
                                      res.log, hook, j == start_stage ? start_epoch : 1);
        } catch (...) {
            res.log.flush();
            throw; // state.ckpt from the last completed epoch remains on disk
        }

        if (done >= scfg.epochs) {
            StageCheckpoint ckpt = make_checkpoint(
                st.derain, st.review, &st.adam_derain, &st.adam_review,
                static_cast<uint32_t>(j), static_cast<uint32_t>(scfg.epochs),
                cfg.config_fingerprint);
            if (!cfg.out_dir.empty()) save_checkpoint(stage_ckpt_path(cfg.out_dir, j), ckpt);
            res.checkpoints.push_back(std::move(ckpt));
        }
    }

    res.log.flush();
    res.data_accesses = data_layer.access_log();
    if (!cfg.out_dir.empty()) data_layer.dump_log(cfg.out_dir + "/data_access_log.csv");
    return res;
}

void validate_schedule(const ScheduleConfig& cfg, const std::vector<ScheduleTask>& tasks) {
    if (tasks.empty()) throw ValidationError("schedule: need at least one task");
    for (size_t i = 0; i < tasks.size(); ++i)
        for (size_t k = i + 1; k < tasks.size(); ++k)
            if (tasks[i].task_id == tasks[k].task_id)
                throw ValidationError("schedule: duplicate task_id '" + tasks[i].task_id + "'");
    cfg.stage_template.validate();
    cfg.derain_arch.validate();
    cfg.review_arch.validate();
}

} // namespace

ScheduleResult run_schedule(const ScheduleConfig& cfg, const std::vector<ScheduleTask>& tasks,
                            const InterruptHook& interrupt) {
    validate_schedule(cfg, tasks);
    TrainState st;
    Rng rng_d(derive_seed(cfg.stage_template.seed, fnv1a64("init_derain")));
    st.derain.init(cfg.derain_arch, rng_d);
    Rng rng_r(derive_seed(cfg.stage_template.seed, fnv1a64("init_review")));
    st.review.init(cfg.review_arch, rng_r);
    st.adam_derain.reset(st.derain.params());
    st.adam_review.reset(st.review.params());
    return run_stages(cfg, tasks, interrupt, st, 1, 1, std::nullopt);
}

ScheduleResult resume_schedule(const ScheduleConfig& cfg, const std::vector<ScheduleTask>& tasks,
                               const InterruptHook& interrupt) {
    validate_schedule(cfg, tasks);
    if (cfg.out_dir.empty()) throw ValidationError("resume requires an output directory");
    const StageCheckpoint state = load_checkpoint(cfg.out_dir + "/state.ckpt");
    if (state.config_fingerprint != cfg.config_fingerprint)
        throw ValidationError("resume: config fingerprint does not match the saved state");

    TrainState st;
    build_from_checkpoint(state, st.derain, st.review);
    st.adam_derain = state.adam_derain;
    st.adam_review = state.adam_review;

    int start_stage = static_cast<int>(state.stage_index);
    int start_epoch = static_cast<int>(state.epochs_done) + 1;
    if (start_epoch > cfg.stage_template.epochs) {
        start_stage += 1;
        start_epoch = 1;
    }

    std::optional<TeacherNets> teacher;
    if (start_epoch > 1 && start_stage > 1) {
        const StageCheckpoint prev = load_checkpoint(stage_ckpt_path(cfg.out_dir, start_stage - 1));
        TeacherNets t;
        build_from_checkpoint(prev, t.derain, t.review);
        teacher = std::move(t);
    }
    return run_stages(cfg, tasks, interrupt, st, start_stage, start_epoch, std::move(teacher));
}

} // namespace derain
