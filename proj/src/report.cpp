#include "derain/report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "derain/image_io.hpp"
#include "derain/plot.hpp"
#include "derain/util.hpp"

namespace fs = std::filesystem;

namespace derain {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

std::vector<std::string> task_order(const std::vector<EvalRecord>& records) {
    std::vector<std::string> tasks;
    for (const auto& r : records)
        if (std::find(tasks.begin(), tasks.end(), r.task_id) == tasks.end())
            tasks.push_back(r.task_id);
    return tasks;
}

} // namespace

std::vector<EvalRecord> read_eval_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<EvalRecord> records;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("stage,", 0) == 0) continue; // header
        }
        const auto cells = split_csv(line);
        if (cells.size() != 5) throw IoError("malformed eval row in '" + path + "': " + line);
        EvalRecord r;
        r.stage = std::stoi(cells[0]);
        r.epoch = std::stoi(cells[1]);
        r.task_id = cells[2];
        r.psnr_db = std::stod(cells[3]);
        r.ssim = std::stod(cells[4]);
        records.push_back(std::move(r));
    }
    if (records.empty()) throw ValidationError("'" + path + "' contains no eval records");
    return records;
}

std::vector<ArmSummary> collect_arms(const std::string& log_dir) {
    std::vector<std::pair<std::string, std::string>> sources; // (arm, csv path)
    if (fs::exists(fs::path(log_dir) / "eval.csv")) {
        sources.emplace_back("run", (fs::path(log_dir) / "eval.csv").string());
    } else if (fs::is_directory(log_dir)) {
        std::vector<std::string> subs;
        for (const auto& e : fs::directory_iterator(log_dir))
            if (e.is_directory() && fs::exists(e.path() / "eval.csv"))
                subs.push_back(e.path().filename().string());
        std::sort(subs.begin(), subs.end());
        for (const auto& s : subs)
            sources.emplace_back(s, (fs::path(log_dir) / s / "eval.csv").string());
    }
    if (sources.empty())
        throw ValidationError("no eval.csv found under '" + log_dir + "'");

    std::vector<ArmSummary> arms;
    for (const auto& [arm, path] : sources) {
        ArmSummary summary;
        summary.arm = arm;
        const auto records = read_eval_csv(path);
        for (const auto& task : task_order(records))
            summary.curves.push_back(forgetting_curve(records, task));
        arms.push_back(std::move(summary));
    }
    return arms;
}

std::string write_report(const std::string& log_dir, const std::string& out_dir) {
    const auto arms = collect_arms(log_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create report directory '" + out_dir + "'");

    // Union of task ids, keeping first-seen order.
    std::vector<std::string> tasks;
    for (const auto& arm : arms)
        for (const auto& c : arm.curves)
            if (std::find(tasks.begin(), tasks.end(), c.task_id) == tasks.end())
                tasks.push_back(c.task_id);

    for (const auto& task : tasks) {
        std::vector<PlotSeries> psnr_series, ssim_series;
        for (size_t ai = 0; ai < arms.size(); ++ai) {
            const auto it = std::find_if(arms[ai].curves.begin(), arms[ai].curves.end(),
                                         [&](const ForgettingCurve& c) { return c.task_id == task; });
            if (it == arms[ai].curves.end()) continue;
            PlotSeries ps{arms[ai].arm, series_color(ai), {}};
            PlotSeries ss{arms[ai].arm, series_color(ai), {}};
            for (size_t i = 0; i < it->points.size(); ++i) {
                ps.points.emplace_back(static_cast<double>(i + 1), it->points[i].psnr_db);
                ss.points.emplace_back(static_cast<double>(i + 1), it->points[i].ssim);
            }
            psnr_series.push_back(std::move(ps));
            ssim_series.push_back(std::move(ss));
        }
        write_png((fs::path(out_dir) / ("forgetting_" + task + "_psnr.png")).string(),
                  render_line_chart("task " + task + ": psnr vs eval point", "psnr (db)",
                                    psnr_series));
        write_png((fs::path(out_dir) / ("forgetting_" + task + "_ssim.png")).string(),
                  render_line_chart("task " + task + ": ssim vs eval point", "ssim",
                                    ssim_series));
    }

    std::ostringstream table;
    table << "arm,task_id,own_stage,best_psnr,final_psnr,drop_psnr,best_ssim,final_ssim,drop_ssim\n";
    for (const auto& arm : arms)
        for (const auto& c : arm.curves)
            table << arm.arm << "," << c.task_id << "," << c.own_stage << ","
                  << format_double(c.best_psnr, 6) << "," << format_double(c.final_psnr, 6) << ","
                  << format_double(c.drop_psnr, 6) << "," << format_double(c.best_ssim, 6) << ","
                  << format_double(c.final_ssim, 6) << "," << format_double(c.drop_ssim, 6) << "\n";

    std::ofstream out(fs::path(out_dir) / "summary.csv");
    if (!out) throw IoError("cannot write summary.csv in '" + out_dir + "'");
    out << table.str();
    return table.str();
}

} // namespace derain
