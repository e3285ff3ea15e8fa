// Command-line front end: data generation, training, evaluation, uncertainty
// visualization, augmentation previews, and cross-fold reporting.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "csds/augment.hpp"
#include "csds/config.hpp"
#include "csds/data.hpp"
#include "csds/metrics.hpp"
#include "csds/segnet.hpp"
#include "csds/trainer.hpp"
#include "csds/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace csds;

namespace {

Tensor load_image_tensor(const std::string& path) {
    PngImage img = read_png(path);
    std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    Tensor t({3, img.height, img.width});
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            t[static_cast<std::size_t>(c) * plane + i] =
                static_cast<float>(img.pixels[i * static_cast<std::size_t>(img.channels) +
                                              static_cast<std::size_t>(img.channels == 3 ? c : 0)]) /
                255.0f;
    return t;
}

int cmd_gen_data(const std::string& out, int count, int canvas, std::uint64_t seed,
                 float labeled_ratio) {
    SynthConfig cfg;
    cfg.canvas = canvas;
    cfg.seed = seed;
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
        Sample s = generate_sample(cfg, i);
        save_sample(s, out);
        ids.push_back(s.id);
    }
    DatasetSplits splits = make_splits(ids, seed, labeled_ratio);
    write_split_manifest(splits, (fs::path(out) / "splits.json").string());
    std::cout << "wrote " << count << " samples to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out,
              const std::string& run_id) {
    RunConfig cfg = load_run_config(config_path);
    FitData data = prepare_fit_data(cfg);
    RunResult r = fit(cfg, data, out, run_id);
    std::cout << "best_student=" << r.best_student << " best_val_dice=" << r.best_val_dice
              << " test_dice=" << r.test_dice << " test_jaccard=" << r.test_jaccard
              << " wall_time_s=" << r.wall_time_s << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, int resize_to,
             const std::string& out_csv) {
    ModelState net = load_checkpoint(ckpt);
    LoadReport rep = load_dir(data_dir, resize_to);
    if (rep.samples.empty()) throw IoError("no samples found under " + data_dir);
    for (const auto& s : rep.skipped)
        std::cerr << "warning: no mask for image '" << s << "', skipped\n";

    std::ostringstream csv;
    csv << metrics_csv_header() << "\n";
    double dice_sum = 0.0, jac_sum = 0.0;
    for (const Sample& s : rep.samples) {
        Tensor batch({1, 3, s.image.dim(1), s.image.dim(2)});
        std::copy(s.image.data().begin(), s.image.data().end(), batch.data().begin());
        Tensor logits = segnet_forward(net, batch, false);
        Tensor single({net.config.num_classes, s.image.dim(1), s.image.dim(2)});
        std::copy(logits.data().begin(), logits.data().end(), single.data().begin());
        BinaryMask pred = logits_to_mask(single);
        BinaryMask gt = tensor_to_mask(s.mask);
        MetricRow row;
        row.run_id = s.id;
        row.split = "eval";
        row.dice = dice_score(pred, gt);
        row.jaccard = jaccard_score(pred, gt);
        dice_sum += row.dice;
        jac_sum += row.jaccard;
        csv << to_csv(row) << "\n";
    }
    if (out_csv.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream os(out_csv);
        if (!os) throw IoError("cannot open " + out_csv + " for writing");
        os << csv.str();
    }
    std::cout << "mean dice=" << dice_sum / static_cast<double>(rep.samples.size())
              << " mean jaccard=" << jac_sum / static_cast<double>(rep.samples.size()) << " over "
              << rep.samples.size() << " samples\n";
    return 0;
}

int cmd_uncertainty(const std::string& ckpt, const std::string& image_path,
                    const std::string& out) {
    ModelState net = load_checkpoint(ckpt);
    Tensor image = load_image_tensor(image_path);
    int div = 1 << net.config.depth;
    if (image.dim(1) % div != 0 || image.dim(2) % div != 0)
        throw DimensionError("image dims must be divisible by 2^depth = " + std::to_string(div));

    Tensor batch({1, 3, image.dim(1), image.dim(2)});
    std::copy(image.data().begin(), image.data().end(), batch.data().begin());
    Tensor logits_b = segnet_forward(net, batch, false);
    Tensor logits({net.config.num_classes, image.dim(1), image.dim(2)});
    std::copy(logits_b.data().begin(), logits_b.data().end(), logits.data().begin());

    UncertaintyConfig ucfg;
    UncertaintyMap base = entropy_map(softmax_channel(logits), ucfg.eps);
    auto [color, structure] = csds_uncertainty(logits, image, ucfg);

    fs::create_directories(out);
    auto to_map = [](const UncertaintyMap& u) {
        ScalarMap m(u.height, u.width);
        m.values = u.values;
        return m;
    };
    write_png((fs::path(out) / "uncertainty_base.png").string(), scalar_map_to_png(to_map(base)));
    write_png((fs::path(out) / "uncertainty_color.png").string(), scalar_map_to_png(to_map(color)));
    write_png((fs::path(out) / "uncertainty_structure.png").string(),
              scalar_map_to_png(to_map(structure)));
    std::cout << "wrote base/color/structure maps to " << out << "\n";
    return 0;
}

int cmd_augment_preview(const std::string& image_path, std::uint64_t seed,
                        const std::string& out) {
    Tensor image = load_image_tensor(image_path);
    Rng rng(seed);
    fs::create_directories(out);

    write_png((fs::path(out) / "original.png").string(), image_to_png(image));

    ColorJitterParams p = sample_color_jitter(ColorJitterRanges{}, rng);
    write_png((fs::path(out) / "color_jitter.png").string(),
              image_to_png(color_jitter(image, p)));

    ElasticField f = sample_elastic(image.dim(1), image.dim(2), 8.0f, 16.0f, rng);
    write_png((fs::path(out) / "elastic.png").string(),
              image_to_png(warp(image, f, Interp::Bilinear)));

    SharedGeom g = sample_shared_geom(rng);
    write_png((fs::path(out) / "geometric.png").string(),
              image_to_png(shared_geom_apply(image, std::nullopt, g).first));

    std::ofstream params((fs::path(out) / "params.txt").string());
    params << "seed = " << seed << "\n"
           << "jitter.brightness_delta = " << p.brightness_delta << "\n"
           << "jitter.contrast_factor = " << p.contrast_factor << "\n"
           << "jitter.saturation_factor = " << p.saturation_factor << "\n"
           << "jitter.hue_delta = " << p.hue_delta << "\n"
           << "elastic.alpha = " << f.alpha << "\n"
           << "elastic.sigma = " << f.sigma << "\n"
           << "geom.hflip = " << g.hflip << "\n"
           << "geom.vflip = " << g.vflip << "\n"
           << "geom.rot90 = " << g.rot90 << "\n";
    std::cout << "wrote previews to " << out << "\n";
    return 0;
}

struct CsvRow {
    int fold = 0;
    int epoch = 0;
    std::string split;
    double dice = 0.0;
};

std::vector<CsvRow> read_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::vector<CsvRow> rows;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() < 6) continue;
        CsvRow r;
        r.fold = std::stoi(f[1]);
        r.epoch = std::stoi(f[2]);
        r.split = f[3];
        r.dice = std::stod(f[4]);
        rows.push_back(r);
    }
    return rows;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
    std::vector<double> test_dice;
    std::map<int, std::pair<double, int>> epoch_curve;  // epoch -> (dice sum, count)
    for (const auto& path : inputs) {
        for (const CsvRow& r : read_metrics_csv(path)) {
            if (r.split == "test") test_dice.push_back(r.dice);
            if (r.split == "val/teacher") {
                epoch_curve[r.epoch].first += r.dice;
                epoch_curve[r.epoch].second += 1;
            }
        }
    }
    if (test_dice.empty()) throw ConfigError("no test rows found in the given metrics files");
    Aggregate agg = aggregate_folds(test_dice);

    fs::create_directories(out);
    {
        std::ofstream os((fs::path(out) / "aggregate.csv").string());
        os << "metric,mean,std,n,formatted\n";
        os << "test_dice," << agg.mean << "," << agg.std_dev << "," << agg.n << ","
           << agg.formatted() << "\n";
    }
    {
        std::ofstream os((fs::path(out) / "curves.csv").string());
        os << "epoch,val_teacher_dice_mean\n";
        for (const auto& [epoch, acc] : epoch_curve)
            os << epoch << "," << acc.first / acc.second << "\n";
    }
    std::cout << "test dice: " << agg.formatted() << " over " << agg.n << " folds\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"color/structure dual-student segmentation toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic PNG corpus");
    std::string gen_out = "data";
    int gen_count = 60, gen_canvas = 64;
    std::uint64_t gen_seed = 0;
    float gen_ratio = 0.10f;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--canvas", gen_canvas, "image side length");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--labeled-ratio", gen_ratio, "labeled ratio for the split manifest");

    // train
    auto* train = app.add_subcommand("train", "run a training configuration");
    std::string train_cfg, train_out = "runs/out", train_id = "run";
    train->add_option("--config", train_cfg, "run config file")->required();
    train->add_option("--out", train_out, "artifact directory");
    train->add_option("--run-id", train_id, "run identifier in metrics rows");

    // eval
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a data directory");
    std::string eval_ckpt, eval_data, eval_csv;
    int eval_resize = 64;
    eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    eval->add_option("--data", eval_data, "directory with images/ and masks/")->required();
    eval->add_option("--resize", eval_resize, "resize images to this side length (0 = native)");
    eval->add_option("--out", eval_csv, "write per-sample rows to this CSV instead of stdout");

    // uncertainty
    auto* unc = app.add_subcommand("uncertainty", "write base/color/structure uncertainty maps");
    std::string unc_ckpt, unc_image, unc_out = "uncertainty_out";
    unc->add_option("--checkpoint", unc_ckpt, "model checkpoint")->required();
    unc->add_option("--image", unc_image, "input PNG")->required();
    unc->add_option("--out", unc_out, "output directory");

    // augment-preview
    auto* aug = app.add_subcommand("augment-preview", "write before/after augmentation PNGs");
    std::string aug_image, aug_out = "augment_out";
    std::uint64_t aug_seed = 0;
    aug->add_option("--image", aug_image, "input PNG")->required();
    aug->add_option("--seed", aug_seed, "sampling seed");
    aug->add_option("--out", aug_out, "output directory");

    // report
    auto* rep = app.add_subcommand("report", "aggregate metrics.csv files across folds");
    std::vector<std::string> rep_inputs;
    std::string rep_out = "report_out";
    rep->add_option("--metrics", rep_inputs, "metrics.csv files")->required()->expected(-1);
    rep->add_option("--out", rep_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_count, gen_canvas, gen_seed, gen_ratio);
        if (train->parsed()) return cmd_train(train_cfg, train_out, train_id);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_resize, eval_csv);
        if (unc->parsed()) return cmd_uncertainty(unc_ckpt, unc_image, unc_out);
        if (aug->parsed()) return cmd_augment_preview(aug_image, aug_seed, aug_out);
        if (rep->parsed()) return cmd_report(rep_inputs, rep_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
