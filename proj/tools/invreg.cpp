// invreg — inverse-consistent deformable registration toolkit.
//
// Subcommands: train, register, eval, synth, fieldopt, import, gradcheck.
// Every command is deterministic given --seed and its inputs; data goes to
// files, diagnostics to stderr, and a run-config.json echo is written next
// to the outputs.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "invreg/fieldopt.hpp"
#include "invreg/gradcheck.hpp"
#include "invreg/ivr_io.hpp"
#include "invreg/metrics.hpp"
#include "invreg/net.hpp"
#include "invreg/nifti.hpp"
#include "invreg/parallel.hpp"
#include "invreg/synth.hpp"
#include "invreg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_run_config(const std::string& out_dir, const json& j) {
    invreg::ensure_dir(out_dir);
    invreg::write_text_file(out_dir + "/run-config.json", j.dump(2) + "\n");
}

std::vector<std::string> list_subject_images(const std::string& data_dir) {
    std::string dir = data_dir;
    if (fs::is_directory(data_dir + "/subjects")) dir = data_dir + "/subjects";
    std::vector<std::string> paths;
    invreg::require(fs::is_directory(dir), dir + ": not a directory");
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.size() > 10 && name.substr(name.size() - 10) == "_image.ivr")
            paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    invreg::require(paths.size() >= 2, dir + ": need at least 2 *_image.ivr subjects");
    return paths;
}

invreg::CycleNorm parse_cycle_norm(const std::string& s) {
    if (s == "mean") return invreg::CycleNorm::mean;
    if (s == "sum") return invreg::CycleNorm::sum;
    throw std::runtime_error("--cycle-norm must be 'mean' or 'sum'");
}

int cmd_train(const std::string& data_dir, const std::string& out_dir, invreg::TrainConfig cfg,
              const std::string& cycle_norm) {
    cfg.cycle_norm = parse_cycle_norm(cycle_norm);
    auto paths = list_subject_images(data_dir);
    std::vector<invreg::Volume3> subjects;
    for (const auto& p : paths) subjects.push_back(invreg::load_image(p));

    json j{{"command", "train"},
           {"data", data_dir},
           {"out", out_dir},
           {"subjects", paths.size()},
           {"lr", cfg.learning_rate},
           {"epochs", cfg.epochs},
           {"window", cfg.window},
           {"cycle_weight", cfg.cycle_weight},
           {"cycle_norm", cycle_norm},
           {"seed", cfg.seed},
           {"levels", cfg.levels},
           {"base_channels", cfg.base_channels},
           {"ablate_backward", cfg.ablate_backward},
           {"threads", invreg::thread_count()}};
    write_run_config(out_dir, j);

    invreg::train(subjects, cfg, out_dir);
    return 0;
}

int cmd_register(const std::string& ckpt_path, const std::string& moving_path,
                 const std::string& fixed_path, const std::string& out_dir) {
    auto ck = invreg::load_checkpoint(ckpt_path);
    auto moving = invreg::load_image(moving_path);
    auto fixed = invreg::load_image(fixed_path);
    invreg::require(moving.header.shape == ck.net.input_shape &&
                        fixed.header.shape == ck.net.input_shape,
                    "register: volume shape does not match checkpoint input shape " +
                        invreg::shape_str(ck.net.input_shape));
    invreg::require(moving.header.channels == 1 && fixed.header.channels == 1,
                    "register: volumes must be single channel");

    json j{{"command", "register"}, {"checkpoint", ckpt_path},     {"moving", moving_path},
           {"fixed", fixed_path},   {"out", out_dir},              {"levels", ck.net.levels},
           {"seed", ck.meta.seed},  {"threads", invreg::thread_count()}};
    write_run_config(out_dir, j);

    auto t0 = std::chrono::steady_clock::now();
    auto flows = invreg::register_pair(ck.net, moving, fixed);
    auto warped_moving = invreg::trilinear_warp(moving, flows.flow_st);
    auto warped_fixed = invreg::trilinear_warp(fixed, flows.flow_ts);
    auto t1 = std::chrono::steady_clock::now();

    invreg::save_ivr(out_dir + "/flow_fwd.ivr", flows.flow_st);
    invreg::save_ivr(out_dir + "/flow_bwd.ivr", flows.flow_ts);
    invreg::save_ivr(out_dir + "/warped_moving.ivr", warped_moving);
    invreg::save_ivr(out_dir + "/warped_fixed.ivr", warped_fixed);

    double secs = std::chrono::duration<double>(t1 - t0).count();
    std::printf("registration time: %.3f s\n", secs);
    return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& out_dir) {
    std::ifstream f(manifest_path);
    invreg::require(f.good(), manifest_path + ": cannot open");
    std::string line;
    std::getline(f, line);  // header
    std::vector<invreg::EvalPair> pairs;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string src, dst, target, warped;
        invreg::require(std::getline(ss, src, ',') && std::getline(ss, dst, ',') &&
                            std::getline(ss, target, ',') && std::getline(ss, warped, ','),
                        manifest_path + ": malformed row '" + line + "'");
        invreg::EvalPair p;
        p.src = std::stoi(src);
        p.dst = std::stoi(dst);
        p.target = invreg::load_labels(target);
        p.warped = invreg::load_labels(warped);
        pairs.push_back(std::move(p));
    }
    invreg::require(!pairs.empty(), manifest_path + ": no pairs listed");

    json j{{"command", "eval"}, {"manifest", manifest_path}, {"out", out_dir},
           {"pairs", pairs.size()}};
    write_run_config(out_dir, j);

    auto rep = invreg::evaluate_pairs(pairs);
    invreg::write_eval_reports(rep, out_dir);
    return 0;
}

int cmd_synth(const std::string& out_dir, int subjects, int64_t extent, int blobs, double max_disp,
              uint64_t seed) {
    invreg::Shape3 shape{extent, extent, extent};
    json j{{"command", "synth"},    {"out", out_dir}, {"subjects", subjects},
           {"shape", {extent, extent, extent}},       {"blobs", blobs},
           {"max_disp", max_disp},  {"seed", seed}};
    write_run_config(out_dir, j);
    auto ds = invreg::generate_dataset(shape, subjects, blobs, max_disp, seed);
    invreg::write_dataset(ds, out_dir);
    return 0;
}

int cmd_fieldopt(const std::string& moving_path, const std::string& fixed_path,
                 const std::string& out_dir, invreg::FieldOptConfig cfg,
                 const std::string& cycle_norm) {
    cfg.cycle_norm = parse_cycle_norm(cycle_norm);
    auto moving = invreg::load_image(moving_path);
    auto fixed = invreg::load_image(fixed_path);

    json j{{"command", "fieldopt"}, {"moving", moving_path},  {"fixed", fixed_path},
           {"out", out_dir},        {"lr", cfg.lr},           {"steps", cfg.steps},
           {"window", cfg.window},  {"cycle_weight", cfg.cycle_weight},
           {"cycle_norm", cycle_norm},                        {"seed", cfg.seed},
           {"threads", invreg::thread_count()}};
    write_run_config(out_dir, j);

    auto res = invreg::optimize_fields(moving, fixed, cfg);
    invreg::save_ivr(out_dir + "/flow_fwd.ivr", res.flow_st);
    invreg::save_ivr(out_dir + "/flow_bwd.ivr", res.flow_ts);
    invreg::write_text_file(out_dir + "/trace.csv", invreg::fieldopt_trace_csv(res.trace));
    return 0;
}

int cmd_import(const std::string& in_path, const std::string& out_path, bool as_labels,
               bool normalize) {
    auto data = invreg::import_nifti(in_path, as_labels);
    if (as_labels) {
        invreg::save_ivr(out_path, invreg::LabelVolume3{data.header, std::move(data.u16)});
    } else {
        invreg::Volume3 v{data.header, std::move(data.f32)};
        if (normalize) v = invreg::normalize_intensity(v);
        invreg::save_ivr(out_path, v);
    }
    return 0;
}

int cmd_gradcheck(uint64_t seed) {
    auto report = invreg::run_gradient_audit(seed);
    std::fputs(invreg::format_gradcheck(report).c_str(), stdout);
    return report.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"invreg — inverse-consistent deformable registration"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads (1 = bitwise reference mode)");

    // train
    auto* tr = app.add_subcommand("train", "train the two-decoder registration network");
    std::string tr_data, tr_out, tr_cycle_norm = "mean";
    invreg::TrainConfig tcfg;
    tr->add_option("--data", tr_data, "dataset directory of IVR images")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--epochs", tcfg.epochs, "training epochs");
    tr->add_option("--lr", tcfg.learning_rate, "Adam learning rate (default 1e-4)");
    tr->add_option("--window", tcfg.window, "local CC window (odd, default 9)");
    tr->add_option("--cycle-weight", tcfg.cycle_weight, "cycle loss weight (default 1)");
    tr->add_option("--cycle-norm", tr_cycle_norm, "cycle L1 normalization: mean|sum");
    tr->add_option("--seed", tcfg.seed, "RNG seed");
    tr->add_option("--levels", tcfg.levels, "encoder levels (default 4)");
    tr->add_option("--base-channels", tcfg.base_channels, "encoder channels (default 32)");
    tr->add_flag("--ablate-backward", tcfg.ablate_backward,
                 "single-decoder mode: drop backward decoder and cycle loss");

    // register
    auto* rg = app.add_subcommand("register", "register a pair; one pass emits both flows");
    std::string rg_ckpt, rg_moving, rg_fixed, rg_out;
    rg->add_option("--checkpoint", rg_ckpt)->required();
    rg->add_option("--moving", rg_moving)->required();
    rg->add_option("--fixed", rg_fixed)->required();
    rg->add_option("--out", rg_out)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate Dice/BIR over a manifest of label pairs");
    std::string ev_manifest, ev_out;
    ev->add_option("--manifest", ev_manifest,
                   "CSV: pair_src,pair_dst,target_labels,warped_labels")
        ->required();
    ev->add_option("--out", ev_out)->required();

    // synth
    auto* sy = app.add_subcommand("synth", "generate a synthetic dataset with known truth");
    std::string sy_out;
    int sy_subjects = 10, sy_blobs = 4;
    int64_t sy_extent = 32;
    double sy_maxdisp = 3.0;
    uint64_t sy_seed = 0;
    sy->add_option("--out", sy_out)->required();
    sy->add_option("--subjects", sy_subjects);
    sy->add_option("--extent", sy_extent, "cubic volume extent (default 32)");
    sy->add_option("--blobs", sy_blobs);
    sy->add_option("--max-disp", sy_maxdisp, "max ground-truth displacement, voxels");
    sy->add_option("--seed", sy_seed);

    // fieldopt
    auto* fo = app.add_subcommand("fieldopt", "optimize raw flow fields for one pair");
    std::string fo_moving, fo_fixed, fo_out, fo_cycle_norm = "mean";
    invreg::FieldOptConfig fcfg;
    fo->add_option("--moving", fo_moving)->required();
    fo->add_option("--fixed", fo_fixed)->required();
    fo->add_option("--out", fo_out)->required();
    fo->add_option("--lr", fcfg.lr, "Adam learning rate (default 1e-2)");
    fo->add_option("--steps", fcfg.steps, "optimization steps (default 200)");
    fo->add_option("--window", fcfg.window);
    fo->add_option("--cycle-weight", fcfg.cycle_weight);
    fo->add_option("--cycle-norm", fo_cycle_norm);
    fo->add_option("--seed", fcfg.seed);

    // import
    auto* im = app.add_subcommand("import", "convert an uncompressed NIfTI-1 .nii to IVR");
    std::string im_in, im_out;
    bool im_labels = false, im_norm = false;
    im->add_option("input", im_in, "input .nii path")->required();
    im->add_option("-o,--out", im_out, "output .ivr path")->required();
    im->add_flag("--labels", im_labels, "treat values as integer labels (u16)");
    im->add_flag("--normalize", im_norm, "min-max normalize intensities to [0,1]");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of all gradients");
    uint64_t gc_seed = 1;
    gc->add_option("--seed", gc_seed);

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) invreg::set_thread_count(threads);

    try {
        if (tr->parsed()) return cmd_train(tr_data, tr_out, tcfg, tr_cycle_norm);
        if (rg->parsed()) return cmd_register(rg_ckpt, rg_moving, rg_fixed, rg_out);
        if (ev->parsed()) return cmd_eval(ev_manifest, ev_out);
        if (sy->parsed())
            return cmd_synth(sy_out, sy_subjects, sy_extent, sy_blobs, sy_maxdisp, sy_seed);
        if (fo->parsed()) return cmd_fieldopt(fo_moving, fo_fixed, fo_out, fcfg, fo_cycle_norm);
        if (im->parsed()) return cmd_import(im_in, im_out, im_labels, im_norm);
        if (gc->parsed()) return cmd_gradcheck(gc_seed);
    } catch (const std::exception& e) {
        std::cerr << "invreg: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
