// Command-line front end: synthetic data generation, training, inference,
// evaluation, and the background-shift stress protocol.

#include "bgmatte/png_io.hpp"
#include "bgmatte/train.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace bgmatte;

namespace {

void write_run_config(const std::string& dir, const TrainConfig& cfg) {
    fs::create_directories(dir);
    std::ofstream f(dir + "/resolved_config.txt");
    f << config_to_text(cfg);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
}

int run_synth(const std::string& kind, int count, int res, std::uint64_t seed, const std::string& out, int frames) {
    fs::create_directories(out);
    TrainConfig cfg;
    cfg.resolution = res;
    cfg.seed = seed;
    write_run_config(out, cfg);
    int index = 0;
    if (kind == "sequence") {
        for (int i = 0; i < count; ++i) {
            auto seq = datagen::synth_sequence<float>(res, frames, 1.5, mix_seed(seed, std::uint64_t(i)));
            for (const auto& frame : seq)
                datagen::write_sample(out, index++, frame,
                                      {{"kind", kind},
                                       {"seed", mix_seed(seed, std::uint64_t(i))},
                                       {"sequence", i},
                                       {"resolution", res}});
        }
    } else if (kind == "training") {
        datagen::AugmentSpec spec;
        for (int i = 0; i < count; ++i) {
            auto s = datagen::synth_training_sample<float>(res, spec, mix_seed(seed, std::uint64_t(i)));
            datagen::write_sample(out, index++, s,
                                  {{"kind", kind}, {"seed", mix_seed(seed, std::uint64_t(i))}, {"resolution", res}});
        }
    } else {
        for (int i = 0; i < count; ++i) {
            auto s = datagen::synth_sample<float>(kind, res, mix_seed(seed, std::uint64_t(i)));
            datagen::write_sample(out, index++, s,
                                  {{"kind", kind}, {"seed", mix_seed(seed, std::uint64_t(i))}, {"resolution", res}});
        }
    }
    std::cout << "wrote " << index << " samples to " << out << "\n";
    return 0;
}

harness::DataSource make_source(const std::string& data, const TrainConfig& cfg) {
    // "synth:disk:count=N" generates on the fly; anything else is a sample directory
    if (data.rfind("synth:", 0) == 0) {
        std::string rest = data.substr(6);
        std::string kind = rest;
        int count = 8;
        auto colon = rest.find(':');
        if (colon != std::string::npos) {
            kind = rest.substr(0, colon);
            std::string opt = rest.substr(colon + 1);
            if (opt.rfind("count=", 0) == 0) count = std::stoi(opt.substr(6));
        }
        if (kind == "training") {
            datagen::AugmentSpec spec;
            return harness::synth_source(kind, count, cfg.resolution, cfg.seed, true, &spec);
        }
        return harness::synth_source(kind, count, cfg.resolution, cfg.seed);
    }
    return harness::directory_source(data, cfg.resolution);
}

int run_train(const std::string& config_path, const std::string& data, const std::string& out) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = config_from_key_values(read_key_values(config_path));
    cfg.validate();
    fs::create_directories(out);
    write_run_config(out, cfg);

    auto source = make_source(data, cfg);
    auto result = harness::train(cfg, source, out + "/loss_curve.jsonl");
    harness::save_checkpoint(out + "/checkpoint.bin", result.ckpt);
    if (result.aborted) {
        std::cerr << "non-finite loss at step " << result.abort_step << "; saved last good checkpoint\n";
        return 2;
    }
    std::cout << "trained " << cfg.steps << " steps";
    if (!result.curve.empty())
        std::cout << ", loss " << result.curve.front().loss << " -> " << result.curve.back().loss;
    std::cout << "; checkpoint at " << out << "/checkpoint.bin\n";
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& image_path, const std::string& bg_path,
              const std::string& out_path) {
    auto ckpt = harness::load_checkpoint(ckpt_path);
    auto image = png::read_image<float>(image_path);
    auto bg = png::read_image<float>(bg_path);
    auto alpha = model::infer(image, bg, ckpt.params);
    png::write_alpha(out_path, alpha);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int run_eval_model(const std::string& ckpt_path, const std::string& data, const std::string& report) {
    auto ckpt = harness::load_checkpoint(ckpt_path);
    std::vector<ImageSample<float>> samples;
    for (auto& ls : datagen::load_samples<float>(data)) samples.push_back(std::move(ls.sample));
    if (samples.empty()) throw std::runtime_error("eval: no samples in " + data);
    auto rep = harness::evaluate(ckpt.params, samples);
    rep.config_hash = metrics::config_hash(config_to_text(ckpt.params.cfg));
    rep.seed = ckpt.params.cfg.seed;
    rep.write_csv(report);
    rep.write_summary(report + ".summary.json");
    write_text(report + ".config.txt", config_to_text(ckpt.params.cfg));
    std::cout << "mad " << rep.mean_mad() << " mse " << rep.mean_mse() << " grad " << rep.mean_grad() << " conn "
              << rep.mean_conn() << "\n";
    return 0;
}

int run_eval_dirs(const std::string& pred_dir, const std::string& gt_dir, int res, const std::string& report) {
    metrics::MetricsReport rep;
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(gt_dir)) {
        std::string name = e.path().filename().string();
        if (name.size() > 10 && name.substr(name.size() - 10) == "_alpha.png")
            stems.push_back(name.substr(0, name.size() - 10));
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw std::runtime_error("eval: no *_alpha.png in " + gt_dir);
    for (const auto& stem : stems) {
        auto gt = png::read_alpha<float>(gt_dir + "/" + stem + "_alpha.png");
        auto pred = png::read_alpha<float>(pred_dir + "/" + stem + "_alpha.png");
        if (gt.height() != res || gt.width() != res) gt = datagen::bilinear_resize(gt, res, res);
        if (pred.height() != res || pred.width() != res) pred = datagen::bilinear_resize(pred, res, res);
        metrics::SampleMetrics sm;
        sm.id = stem;
        sm.mad = metrics::mad(pred, gt);
        sm.mse = metrics::mse(pred, gt);
        sm.grad = metrics::grad_metric(pred, gt);
        sm.conn = metrics::conn_metric(pred, gt);
        rep.per_sample.push_back(sm);
    }
    rep.write_csv(report);
    rep.write_summary(report + ".summary.json");
    std::cout << "mad " << rep.mean_mad() << " mse " << rep.mean_mse() << " grad " << rep.mean_grad() << " conn "
              << rep.mean_conn() << "\n";
    return 0;
}

int run_stress(const std::string& ckpt_path, const std::string& data, const std::string& levels_arg,
               const std::string& report) {
    auto ckpt = harness::load_checkpoint(ckpt_path);
    std::vector<ImageSample<float>> samples;
    for (auto& ls : datagen::load_samples<float>(data)) samples.push_back(std::move(ls.sample));
    if (samples.empty()) throw std::runtime_error("stress: no samples in " + data);

    auto all_levels = harness::standard_shift_levels(ckpt.params.cfg.seed);
    std::vector<datagen::ShiftSpec> levels;
    if (levels_arg.empty() || levels_arg == "all") {
        levels = all_levels;
    } else {
        std::istringstream ss(levels_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) levels.push_back(all_levels.at(std::size_t(std::stoi(tok))));
    }
    auto reports = harness::stress_shift(ckpt.params, samples, levels);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        reports[i].config_hash = metrics::config_hash(config_to_text(ckpt.params.cfg));
        std::string base = report + "_level" + std::to_string(reports[i].shift_level);
        reports[i].write_csv(base + ".csv");
        reports[i].write_summary(base + ".summary.json");
        std::cout << "level " << reports[i].shift_level << ": mad " << reports[i].mean_mad() << " mse "
                  << reports[i].mean_mse() << "\n";
    }
    write_text(report + ".config.txt", config_to_text(ckpt.params.cfg));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"background matting pipeline"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate synthetic samples with exact alpha");
    std::string kind = "disk", out_dir = "out";
    int count = 8, res = 64, frames = 4;
    std::uint64_t seed = 0;
    synth->add_option("--kind", kind, "disk | poly | sequence | training");
    synth->add_option("--count", count);
    synth->add_option("--res", res);
    synth->add_option("--seed", seed);
    synth->add_option("--frames", frames, "frames per sequence (sequence kind)");
    synth->add_option("--out", out_dir)->required();

    auto* train = app.add_subcommand("train", "train a model");
    std::string config_path, data = "synth:disk:count=8", train_out = "run";
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--data", data, "sample directory or synth:<kind>[:count=N]");
    train->add_option("--out", train_out)->required();

    auto* infer = app.add_subcommand("infer", "predict an alpha matte");
    std::string ckpt_path, image_path, bg_path, alpha_out = "alpha.png";
    infer->add_option("--ckpt", ckpt_path)->required();
    infer->add_option("--image", image_path)->required();
    infer->add_option("--bg", bg_path)->required();
    infer->add_option("--out", alpha_out);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or compare alpha directories");
    std::string eval_ckpt, eval_data, report = "report.csv", pred_dir, gt_dir;
    int eval_res = 1024;
    eval->add_option("--ckpt", eval_ckpt);
    eval->add_option("--data", eval_data);
    eval->add_option("--pred-dir", pred_dir);
    eval->add_option("--gt-dir", gt_dir);
    eval->add_option("--res", eval_res, "evaluation resolution (directory mode)");
    eval->add_option("--report", report);

    auto* stress = app.add_subcommand("stress", "background-shift robustness protocol");
    std::string stress_ckpt, stress_data, stress_levels = "all", stress_report = "stress";
    stress->add_option("--ckpt", stress_ckpt)->required();
    stress->add_option("--data", stress_data)->required();
    stress->add_option("--levels", stress_levels, "comma list of level indices, or 'all'");
    stress->add_option("--report", stress_report);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(kind, count, res, seed, out_dir, frames);
        if (train->parsed()) return run_train(config_path, data, train_out);
        if (infer->parsed()) return run_infer(ckpt_path, image_path, bg_path, alpha_out);
        if (eval->parsed()) {
            if (!pred_dir.empty() && !gt_dir.empty()) return run_eval_dirs(pred_dir, gt_dir, eval_res, report);
            if (!eval_ckpt.empty() && !eval_data.empty()) return run_eval_model(eval_ckpt, eval_data, report);
            std::cerr << "eval: need either --ckpt with --data, or --pred-dir with --gt-dir\n";
            return 1;
        }
        if (stress->parsed()) return run_stress(stress_ckpt, stress_data, stress_levels, stress_report);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
