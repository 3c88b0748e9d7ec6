// Command-line front end: phantom generation, atlas construction, training,
// sliding-window prediction, evaluation, gradient checking, schedule dumps
// and slice export. Exit codes: 0 success, 1 validation error, 2 I/O error.
// PATCHSEG_THREADS caps the worker count; PATCHSEG_KERNEL picks the compute
// backend (auto|scalar|avx2).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "patchseg/atlas.hpp"
#include "patchseg/errors.hpp"
#include "patchseg/eval.hpp"
#include "patchseg/kernels.hpp"
#include "patchseg/model.hpp"
#include "patchseg/nn/gradcheck.hpp"
#include "patchseg/nn/loss.hpp"
#include "patchseg/nn/optim.hpp"
#include "patchseg/phantom.hpp"
#include "patchseg/pipeline.hpp"
#include "patchseg/rng.hpp"
#include "patchseg/volume.hpp"

namespace fs = std::filesystem;
using namespace patchseg;

namespace {

Dims parse_dims(const std::string& text) {
    Dims d;
    if (std::sscanf(text.c_str(), "%u,%u,%u", &d[0], &d[1], &d[2]) == 3) return d;
    unsigned n = 0;
    if (std::sscanf(text.c_str(), "%u", &n) == 1) return {n, n, n};
    throw ValidationError("cannot parse --dims (use N or NX,NY,NZ): " + text);
}

int run_phantom(const std::string& dims_text, int classes, std::uint64_t seed, int count,
                double noise, bool no_pair, const std::string& out_dir) {
    PhantomSpec spec;
    spec.dims = parse_dims(dims_text);
    spec.num_classes = static_cast<std::uint16_t>(classes);
    spec.noise_sigma = noise;
    spec.ambiguous_pair = !no_pair;
    fs::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        spec.seed = seed + static_cast<std::uint64_t>(i);
        const auto [vol, lab] = generate_phantom(spec);
        const std::string stem = "phantom_" + std::to_string(spec.seed);
        save_volume(fs::path(out_dir) / (stem + "_img.mrv"), vol);
        save_labelmap(fs::path(out_dir) / (stem + "_lab.mrv"), lab);
        std::cout << "wrote " << stem << "_img.mrv / " << stem << "_lab.mrv\n";
    }
    return 0;
}

int run_atlas(const std::vector<std::string>& label_paths, double eps, const std::string& out) {
    std::vector<LabelMap> maps;
    maps.reserve(label_paths.size());
    for (const auto& p : label_paths) maps.push_back(load_labelmap(p));
    const auto atlas = build_atlas(maps, eps);
    save_atlas(out, atlas);
    std::cout << "atlas " << atlas.dims[0] << "x" << atlas.dims[1] << "x" << atlas.dims[2] << ", "
              << atlas.num_classes << " classes -> " << out << "\n";
    return 0;
}

int run_train(const std::string& config_path) {
    const TrainConfig cfg = parse_config_file(config_path);
    const auto result = train_model(cfg);
    std::cout << "trained " << cfg.epochs << " epochs; final loss "
              << result.log.back().train_loss << ", val dice " << result.log.back().val_dice
              << "\ncheckpoint: " << (fs::path(cfg.out_dir) / "checkpoint.ckpt").string() << "\n";
    return 0;
}

int run_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& atlas_path, const std::string& out_path, bool no_mask) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Volume raw = load_volume(image_path);
    ProbAtlas atlas;
    const bool have_atlas = !atlas_path.empty();
    if (have_atlas) atlas = load_atlas(atlas_path);
    LandmarkGrid grid;
    const bool need_grid = ckpt.config.net.use_dist;
    if (need_grid) grid = build_grid(raw.dims, ckpt.config.net.landmarks_per_axis);
    const LabelMap pred = predict_volume(ckpt, raw, have_atlas ? &atlas : nullptr,
                                         need_grid ? &grid : nullptr, !no_mask);
    save_labelmap(out_path, pred);
    std::cout << "prediction -> " << out_path << "\n";
    return 0;
}

int run_evaluate(const std::string& pred_path, const std::string& gt_path,
                 const std::string& csv_path, bool fullset) {
    const LabelMap pred = load_labelmap(pred_path);
    const LabelMap gt = load_labelmap(gt_path);
    const MetricReport report = evaluate_pair(pred, gt, fullset);
    const std::string id = fs::path(pred_path).stem().string();
    if (!csv_path.empty()) write_metrics_csv(csv_path, {{id, report}});
    std::cout << "mean dice " << report.mean_dice << " over " << report.dice_valid_count
              << " classes; mean hausdorff " << report.mean_hausdorff_mm << " mm, mean msd "
              << report.mean_msd_mm << " mm over " << report.dist_valid_count
              << " distance-valid classes\n";
    return 0;
}

template <typename T>
double gradcheck_config(const NetworkConfig& net, std::uint64_t seed) {
    Model<T> model = build_model<T>(net, seed);
    Prng rng(seed, 21);
    PatchSample s;
    for (auto* p : {&s.p25, &s.p51s, &s.p71s})
        for (auto& v : *p) v = static_cast<float>(rng.next_uniform(-1, 1));
    if (net.use_3d) {
        s.p3d.resize(kPatch3d * kPatch3d * kPatch3d);
        for (auto& v : s.p3d) v = static_cast<float>(rng.next_uniform(-1, 1));
    }
    if (net.use_dist) {
        const int k = net.landmarks_per_axis;
        s.dist.resize(static_cast<std::size_t>(k) * k * k);
        for (auto& v : s.dist) v = static_cast<float>(rng.next_uniform(0, 50));
    }
    if (net.use_prob) s.atlas_prob.assign(net.num_classes, 1.0f / net.num_classes);
    const std::vector<std::uint16_t> targets{1};

    auto loss_of = [&](int node) {
        const auto& t = model.graph.tensor(node);
        std::vector<T> scores(t.v.begin(), t.v.end());
        return nn::softmax_cross_entropy<T>(scores, targets[0], nullptr).first;
    };
    auto global_loss = [&]() {
        forward_batch(model, std::span<const PatchSample>(&s, 1), nn::Mode::eval, 0);
        double loss = loss_of(model.logits);
        if (model.aux_base_logits >= 0) loss += net.aux_w_base * loss_of(model.aux_base_logits);
        if (model.aux_dist_logits >= 0) loss += net.aux_w_dist * loss_of(model.aux_dist_logits);
        return loss;
    };
    global_loss();
    auto params = model.graph.params();
    for (auto& p : params) p.tensor->zero_grad();
    nn::softmax_cross_entropy_batch(model.graph.tensor(model.logits), targets, nullptr, 1.0);
    std::vector<int> seeded{model.logits};
    if (model.aux_base_logits >= 0) {
        nn::softmax_cross_entropy_batch(model.graph.tensor(model.aux_base_logits), targets,
                                        nullptr, net.aux_w_base);
        seeded.push_back(model.aux_base_logits);
    }
    if (model.aux_dist_logits >= 0) {
        nn::softmax_cross_entropy_batch(model.graph.tensor(model.aux_dist_logits), targets,
                                        nullptr, net.aux_w_dist);
        seeded.push_back(model.aux_dist_logits);
    }
    model.graph.backward(seeded, nn::Mode::eval, 0);
    return nn::grad_check<T>(params, global_loss, 1e-5).max_rel_err;
}

int run_gradcheck(const std::string& config_path, bool use_double, std::uint64_t seed) {
    const TrainConfig cfg = parse_config_file(config_path);
    const double err = use_double ? gradcheck_config<double>(cfg.net, seed)
                                  : gradcheck_config<float>(cfg.net, seed);
    std::cout << "max relative gradient error: " << err << "\n";
    return 0;
}

int run_lr_dump(const std::string& config_path, const std::string& csv_path) {
    const TrainConfig cfg = parse_config_file(config_path);
    nn::OptimConfig oc{cfg.lr0, cfg.momentum, cfg.net.weight_decay, cfg.poly_power, cfg.epochs};
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + csv_path);
    f.precision(17);
    f << "epoch,lr\n";
    for (std::size_t e = 0; e < cfg.epochs; ++e) f << e << ',' << nn::poly_lr(e, oc) << '\n';
    std::cout << "wrote " << cfg.epochs << " rows -> " << csv_path << "\n";
    return 0;
}

int run_slice(const std::string& image_path, int axis, std::uint32_t index,
              const std::string& out_path) {
    const Volume v = load_volume(image_path);
    write_pgm_slice(out_path, v, axis, index);
    std::cout << "slice -> " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"patchseg: spatially-constrained patch classifier pipeline"};
    app.require_subcommand(1);

    // phantom
    auto* sc_phantom = app.add_subcommand("phantom", "generate synthetic volume/label pairs");
    std::string ph_dims = "64";
    int ph_classes = 8, ph_count = 1;
    std::uint64_t ph_seed = 0;
    double ph_noise = 0.08;
    bool ph_no_pair = false;
    std::string ph_out = ".";
    sc_phantom->add_option("--dims", ph_dims, "grid size, N or NX,NY,NZ");
    sc_phantom->add_option("--classes", ph_classes, "number of classes incl. background");
    sc_phantom->add_option("--seed", ph_seed, "seed of the first phantom");
    sc_phantom->add_option("--count", ph_count, "how many phantoms (seeds seed..seed+count-1)");
    sc_phantom->add_option("--noise", ph_noise, "intensity noise sigma");
    sc_phantom->add_flag("--no-ambiguous-pair", ph_no_pair, "disable the mirrored pair");
    sc_phantom->add_option("--out", ph_out, "output directory");

    // atlas
    auto* sc_atlas = app.add_subcommand("atlas", "build a probability atlas from label maps");
    std::vector<std::string> at_labels;
    double at_eps = 1e-3;
    std::string at_out = "atlas.mrv";
    sc_atlas->add_option("--labels", at_labels, "training label maps")->required();
    sc_atlas->add_option("--epsilon", at_eps, "Laplace smoothing");
    sc_atlas->add_option("--out", at_out, "output file");

    // train
    auto* sc_train = app.add_subcommand("train", "train a model from a config file");
    std::string tr_config;
    sc_train->add_option("--config", tr_config, "key = value config file")->required();

    // predict
    auto* sc_predict = app.add_subcommand("predict", "sliding-window segmentation");
    std::string pr_ckpt, pr_image, pr_atlas, pr_out = "pred.mrv";
    bool pr_no_mask = false;
    sc_predict->add_option("--ckpt", pr_ckpt)->required();
    sc_predict->add_option("--image", pr_image)->required();
    sc_predict->add_option("--atlas", pr_atlas, "atlas file (required with use_prob)");
    sc_predict->add_option("--out", pr_out);
    sc_predict->add_flag("--no-mask", pr_no_mask, "classify every voxel, not just nonzero ones");

    // evaluate
    auto* sc_eval = app.add_subcommand("evaluate", "compare a prediction against ground truth");
    std::string ev_pred, ev_gt, ev_csv;
    bool ev_fullset = false;
    sc_eval->add_option("--pred", ev_pred)->required();
    sc_eval->add_option("--gt", ev_gt)->required();
    sc_eval->add_option("--csv", ev_csv, "per-class metrics CSV "
                                         "(volume_id,class_id,dice,hausdorff_mm,msd_mm,valid)");
    sc_eval->add_flag("--fullset-distances", ev_fullset,
                      "distances over full voxel sets instead of surfaces");

    // gradcheck
    auto* sc_grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_config;
    bool gc_double = false;
    std::uint64_t gc_seed = 1;
    sc_grad->add_option("--config", gc_config)->required();
    sc_grad->add_flag("--double", gc_double, "check in double precision");
    sc_grad->add_option("--seed", gc_seed);

    // lr-dump
    auto* sc_lr = app.add_subcommand("lr-dump", "write the poly schedule to CSV");
    std::string lr_config, lr_csv = "lr.csv";
    sc_lr->add_option("--config", lr_config)->required();
    sc_lr->add_option("--csv", lr_csv);

    // slice
    auto* sc_slice = app.add_subcommand("slice", "export one slice as binary PGM");
    std::string sl_image, sl_out = "slice.pgm";
    int sl_axis = 2;
    std::uint32_t sl_index = 0;
    sc_slice->add_option("--image", sl_image)->required();
    sc_slice->add_option("--axis", sl_axis, "0=x, 1=y, 2=z");
    sc_slice->add_option("--index", sl_index);
    sc_slice->add_option("--out", sl_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sc_phantom->parsed())
            return run_phantom(ph_dims, ph_classes, ph_seed, ph_count, ph_noise, ph_no_pair,
                               ph_out);
        if (sc_atlas->parsed()) return run_atlas(at_labels, at_eps, at_out);
        if (sc_train->parsed()) return run_train(tr_config);
        if (sc_predict->parsed()) return run_predict(pr_ckpt, pr_image, pr_atlas, pr_out,
                                                     pr_no_mask);
        if (sc_eval->parsed()) return run_evaluate(ev_pred, ev_gt, ev_csv, ev_fullset);
        if (sc_grad->parsed()) return run_gradcheck(gc_config, gc_double, gc_seed);
        if (sc_lr->parsed()) return run_lr_dump(lr_config, lr_csv);
        if (sc_slice->parsed()) return run_slice(sl_image, sl_axis, sl_index, sl_out);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
