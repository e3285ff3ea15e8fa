#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csds/augment.hpp"
#include "csds/config.hpp"
#include "csds/data.hpp"
#include "csds/losses.hpp"
#include "csds/metrics.hpp"
#include "csds/segnet.hpp"
#include "csds/uncertainty.hpp"

namespace csds {

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay.
// ---------------------------------------------------------------------------

struct AdamWState {
    AdamWHyper hyper;
    std::vector<std::vector<float>> m, v;  // first/second moments per parameter
    long step = 0;
    long skipped = 0;

    static AdamWState init(const ModelState& params, const AdamWHyper& hyper) {
        AdamWState s;
        s.hyper = hyper;
        s.m.reserve(params.params.size());
        s.v.reserve(params.params.size());
        for (const auto& p : params.params) {
            s.m.emplace_back(p.tensor.numel(), 0.0f);
            s.v.emplace_back(p.tensor.numel(), 0.0f);
        }
        return s;
    }
};

/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
/// A step with any non-finite gradient is skipped entirely.
inline void adamw_step(AdamWState& state, ModelState& params) {
    if (state.m.size() != params.params.size())
        throw ConfigError("adamw_step: optimizer state does not match parameter list");
    for (const auto& p : params.params) {
        if (!p.tensor.has_grad()) continue;
        for (float g : p.tensor.grad())
            if (!std::isfinite(g)) {
                ++state.skipped;
                return;
            }
    }
    ++state.step;
    const AdamWHyper& h = state.hyper;
    float bc1 = 1.0f - std::pow(h.beta1, static_cast<float>(state.step));
    float bc2 = 1.0f - std::pow(h.beta2, static_cast<float>(state.step));
    for (std::size_t pi = 0; pi < params.params.size(); ++pi) {
        Tensor& t = params.params[pi].tensor;
        std::vector<float>& m = state.m[pi];
        std::vector<float>& v = state.v[pi];
        const float* g = t.has_grad() ? t.grad().data() : nullptr;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            float gi = g ? g[i] : 0.0f;
            m[i] = h.beta1 * m[i] + (1.0f - h.beta1) * gi;
            v[i] = h.beta2 * v[i] + (1.0f - h.beta2) * gi * gi;
            float m_hat = m[i] / bc1;
            float v_hat = v[i] / bc2;
            t[i] -= h.lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * t[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// EMA teacher updates (mean / alternate / best-student-only).
// ---------------------------------------------------------------------------

inline void ema_update_single(ModelState& teacher, const ModelState& source, float alpha) {
    if (!teacher.ema_compatible(source))
        throw ConfigError("ema_update: incompatible model states");
    for (std::size_t pi = 0; pi < teacher.params.size(); ++pi) {
        float* t = teacher.params[pi].tensor.data().data();
        const float* s = source.params[pi].tensor.data().data();
        std::size_t n = teacher.params[pi].tensor.numel();
        for (std::size_t i = 0; i < n; ++i) t[i] = alpha * t[i] + (1.0f - alpha) * s[i];
    }
}

/// val_scores = (color Dice, structure Dice); ties go to the color student.
inline void ema_update(ModelState& teacher, const ModelState& color, const ModelState& structure,
                       const EmaConfig& cfg, int epoch, std::pair<double, double> val_scores) {
    cfg.validate();
    switch (cfg.strategy) {
        case EmaStrategy::Mean: {
            if (!teacher.ema_compatible(color) || !teacher.ema_compatible(structure))
                throw ConfigError("ema_update: incompatible model states");
            for (std::size_t pi = 0; pi < teacher.params.size(); ++pi) {
                float* t = teacher.params[pi].tensor.data().data();
                const float* c = color.params[pi].tensor.data().data();
                const float* s = structure.params[pi].tensor.data().data();
                std::size_t n = teacher.params[pi].tensor.numel();
                for (std::size_t i = 0; i < n; ++i)
                    t[i] = cfg.alpha * t[i] + (1.0f - cfg.alpha) * 0.5f * (c[i] + s[i]);
            }
            break;
        }
        case EmaStrategy::Alternate:
            ema_update_single(teacher, epoch % 2 == 0 ? color : structure, cfg.alpha);
            break;
        case EmaStrategy::BestStudentOnly:
            ema_update_single(teacher, val_scores.first >= val_scores.second ? color : structure,
                              cfg.alpha);
            break;
    }
}

// ---------------------------------------------------------------------------
// Unsupervised weight schedule: Gaussian ramp-up, then constant.
// ---------------------------------------------------------------------------

inline float lambda_unsup(int epoch, const TrainSchedule& schedule) {
    float ramp = schedule.ramp_frac * static_cast<float>(schedule.epochs);
    if (ramp <= 0.0f || static_cast<float>(epoch) >= ramp) return schedule.lambda_unsup_base;
    float t = static_cast<float>(epoch) / ramp;
    return schedule.lambda_unsup_base * std::exp(-5.0f * (1.0f - t) * (1.0f - t));
}

// ---------------------------------------------------------------------------
// One CSDS training step.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor stack_images(const std::vector<Tensor>& images) {
    int c = images[0].dim(0), h = images[0].dim(1), w = images[0].dim(2);
    Tensor out({static_cast<int>(images.size()), c, h, w});
    std::size_t sample = static_cast<std::size_t>(c) * h * w;
    for (std::size_t b = 0; b < images.size(); ++b)
        std::copy_n(images[b].data().data(), sample, out.data().data() + b * sample);
    return out;
}

inline Tensor slice_sample(const Tensor& batch, int b) {
    int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    std::size_t sample = static_cast<std::size_t>(c) * h * w;
    Tensor out({c, h, w});
    std::copy_n(batch.data().data() + static_cast<std::size_t>(b) * sample, sample,
                out.data().data());
    return out;
}

inline Tensor one_hot_masks(const std::vector<Tensor>& masks, int num_classes) {
    int h = masks[0].dim(1), w = masks[0].dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out({static_cast<int>(masks.size()), num_classes, h, w});
    for (std::size_t b = 0; b < masks.size(); ++b) {
        float* t = out.data().data() + b * static_cast<std::size_t>(num_classes) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            int cls = masks[b][i] > 0.5f ? 1 : 0;
            t[static_cast<std::size_t>(cls) * plane + i] = 1.0f;
        }
    }
    return out;
}

} // namespace detail

struct StepReport {
    float loss_sup = 0.0f;
    float loss_unsup = 0.0f;
    float lambda = 0.0f;
    float total = 0.0f;
    int unlabeled_used = 0;
};

/// One optimizer step for both students. Teacher forwards run without
/// gradients; its parameters change only through ema_update (done by the
/// caller). `hist_pool` provides histogram-matching references when the
/// unlabeled batch has no other member.
inline StepReport train_step(ModelState& teacher, ModelState& color_student,
                             ModelState& structure_student, AdamWState& opt_color,
                             AdamWState& opt_structure, const std::vector<Sample>& batch_l,
                             const std::vector<Sample>& batch_u,
                             const std::vector<Sample>* hist_pool, const RunConfig& cfg, int epoch,
                             Rng& rng) {
    const bool use_color = cfg.ablation.enable_color_student;
    const bool use_structure = cfg.ablation.enable_structure_student;
    StepReport report;
    report.lambda = lambda_unsup(epoch, cfg.schedule);

    // 1. shared geometric augmentation, identical on image and mask
    std::vector<Tensor> l_images, l_masks;
    for (const Sample& s : batch_l) {
        SharedGeom g = sample_shared_geom(rng);
        auto [img, msk] = shared_geom_apply(s.image, s.mask, g);
        l_images.push_back(std::move(img));
        l_masks.push_back(std::move(*msk));
    }

    color_student.zero_grads();
    structure_student.zero_grads();

    Tensor total_color, total_structure;  // per-student scalar losses
    if (!batch_l.empty()) {
        Tensor xl = detail::stack_images(l_images);
        Tensor yl = detail::one_hot_masks(l_masks, cfg.segnet.num_classes);
        if (use_color) {
            LossValue sup = ce_dice(segnet_forward(color_student, xl, true), yl, nullptr,
                                    cfg.dice_smooth);
            report.loss_sup += sup.scalar();
            total_color = sup.value;
        }
        if (use_structure) {
            LossValue sup = ce_dice(segnet_forward(structure_student, xl, true), yl, nullptr,
                                    cfg.dice_smooth);
            report.loss_sup += sup.scalar();
            total_structure = sup.value;
        }
    }

    // 2. unsupervised consistency, skipped entirely when weightless
    if (!batch_u.empty() && report.lambda > 0.0f) {
        std::vector<Tensor> clean, color_views, warped_views;
        std::vector<ElasticField> fields;
        for (std::size_t i = 0; i < batch_u.size(); ++i) {
            const Sample& s = batch_u[i];
            clean.push_back(s.image.detach_copy());

            if (use_color) {
                bool hist = rng.uniform() < cfg.augment.hist_match_prob;
                const Tensor* ref = nullptr;
                if (hist) {
                    if (batch_u.size() > 1) {
                        std::size_t j = static_cast<std::size_t>(
                            rng.uniform_int(0, static_cast<int>(batch_u.size()) - 2));
                        if (j >= i) ++j;
                        ref = &batch_u[j].image;
                    } else if (hist_pool && !hist_pool->empty()) {
                        ref = &(*hist_pool)[static_cast<std::size_t>(rng.uniform_int(
                                    0, static_cast<int>(hist_pool->size()) - 1))].image;
                    }
                }
                color_views.push_back(ref ? histogram_match(s.image, *ref)
                                          : color_jitter(s.image, sample_color_jitter(
                                                                      cfg.augment.jitter, rng)));
            }
            if (use_structure) {
                ElasticField f = sample_elastic(s.image.dim(1), s.image.dim(2),
                                                cfg.augment.elastic_alpha,
                                                cfg.augment.elastic_sigma, rng);
                warped_views.push_back(warp(s.image, f, Interp::Bilinear));
                fields.push_back(std::move(f));
            }
        }

        int n_u = static_cast<int>(batch_u.size());
        report.unlabeled_used = n_u;
        Tensor xu = detail::stack_images(clean);

        if (use_color) {
            Tensor t_logits;
            {
                NoGradGuard ng;
                t_logits = segnet_forward(teacher, xu, false);
            }
            std::vector<ScalarMap> weights;
            for (int b = 0; b < n_u; ++b) {
                auto [color_map, structure_map] = csds_uncertainty(
                    detail::slice_sample(t_logits, b), clean[static_cast<std::size_t>(b)],
                    cfg.uncertainty);
                weights.push_back(to_loss_weight(color_map, cfg.uncertainty.weight_mode));
            }
            LossValue lu = unsup_pair_loss(
                segnet_forward(color_student, detail::stack_images(color_views), true), t_logits,
                weights, cfg.ablation.pseudo_mode, cfg.dice_smooth);
            report.loss_unsup += lu.scalar();
            Tensor term = scale(lu.value, report.lambda);
            total_color = total_color.defined() ? add(total_color, term) : term;
        }
        if (use_structure) {
            Tensor xw = detail::stack_images(warped_views);
            Tensor t_logits;
            {
                NoGradGuard ng;
                t_logits = segnet_forward(teacher, xw, false);
            }
            std::vector<ScalarMap> weights;
            for (int b = 0; b < n_u; ++b) {
                auto [color_map, structure_map] = csds_uncertainty(
                    detail::slice_sample(t_logits, b), warped_views[static_cast<std::size_t>(b)],
                    cfg.uncertainty);
                weights.push_back(to_loss_weight(structure_map, cfg.uncertainty.weight_mode));
            }
            LossValue lu = unsup_pair_loss(segnet_forward(structure_student, xw, true), t_logits,
                                           weights, cfg.ablation.pseudo_mode, cfg.dice_smooth);
            report.loss_unsup += lu.scalar();
            Tensor term = scale(lu.value, report.lambda);
            total_structure = total_structure.defined() ? add(total_structure, term) : term;
        }
    }

    if (total_color.defined()) {
        total_color.backward();
        report.total += total_color[0];
    }
    if (total_structure.defined()) {
        total_structure.backward();
        report.total += total_structure[0];
    }
    if (use_color) adamw_step(opt_color, color_student);
    if (use_structure) adamw_step(opt_structure, structure_student);
    return report;
}

// ---------------------------------------------------------------------------
// Full training run.
// ---------------------------------------------------------------------------

struct RunResult {
    std::vector<MetricRow> rows;
    double best_val_dice = 0.0;
    std::string best_student;  // "color" or "structure"
    double test_dice = 0.0;
    double test_jaccard = 0.0;
    ModelState best_state;
    double wall_time_s = 0.0;
};

namespace detail {

inline std::pair<double, double> evaluate(const ModelState& net, const std::vector<Sample>& data) {
    if (data.empty()) return {0.0, 0.0};
    double dice = 0.0, jac = 0.0;
    for (const Sample& s : data) {
        Tensor batch = stack_images({s.image});
        Tensor logits;
        {
            NoGradGuard ng;
            logits = segnet_forward(net, batch, false);
        }
        BinaryMask pred = logits_to_mask(slice_sample(logits, 0));
        BinaryMask gt = tensor_to_mask(s.mask);
        dice += dice_score(pred, gt);
        jac += jaccard_score(pred, gt);
    }
    return {dice / static_cast<double>(data.size()), jac / static_cast<double>(data.size())};
}

inline std::vector<Sample> pick(const std::vector<Sample>& pool,
                                const std::vector<std::string>& ids) {
    std::vector<Sample> out;
    for (const auto& id : ids)
        for (const Sample& s : pool)
            if (s.id == id) {
                out.push_back(s);
                break;
            }
    return out;
}

} // namespace detail

struct FitData {
    std::vector<Sample> labeled;
    std::vector<Sample> unlabeled;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

/// Assembles the fold's data per the split protocol, from either a PNG
/// directory or the synthetic generator.
inline FitData prepare_fit_data(const RunConfig& cfg) {
    std::vector<Sample> pool;
    if (!cfg.data.dir.empty()) {
        LoadReport rep = load_dir(cfg.data.dir, cfg.data.resize_to);
        pool = std::move(rep.samples);
    } else {
        SynthConfig sc = cfg.data.synth;
        sc.seed = cfg.seed;
        for (int i = 0; i < cfg.data.synth_count; ++i) pool.push_back(generate_sample(sc, i));
    }
    std::vector<std::string> ids;
    for (const Sample& s : pool) ids.push_back(s.id);
    DatasetSplits splits = make_splits(ids, cfg.seed, cfg.data.labeled_ratio);

    FitData d;
    d.test = detail::pick(pool, splits.test);
    d.val = detail::pick(pool, splits.val_ids(cfg.data.fold));
    std::vector<std::string> train = splits.train_ids(cfg.data.fold);
    const auto& lab = splits.labeled[static_cast<std::size_t>(cfg.data.fold)];
    for (const auto& id : train) {
        bool is_labeled = std::find(lab.begin(), lab.end(), id) != lab.end();
        for (const Sample& s : pool)
            if (s.id == id) {
                Sample copy = s;
                copy.labeled = is_labeled;
                (is_labeled ? d.labeled : d.unlabeled).push_back(std::move(copy));
                break;
            }
    }
    return d;
}

/// The CSDS loop: teacher + two students initialized identically from the run
/// seed; per-step AdamW for students and EMA for the teacher; per-epoch
/// validation drives best-student checkpointing. out_dir may be empty to skip
/// artifact writing.
inline RunResult fit(const RunConfig& cfg, const FitData& data, const std::string& out_dir = "",
                     const std::string& run_id = "run") {
    cfg.validate();
    auto t_start = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    SegNetConfig net_cfg = cfg.segnet;
    net_cfg.seed = cfg.seed;
    Rng init_rng(cfg.seed);
    ModelState teacher = segnet_build(net_cfg, init_rng);
    ModelState color_student = teacher.clone();
    ModelState structure_student = teacher.clone();
    AdamWState opt_color = AdamWState::init(color_student, cfg.optimizer);
    AdamWState opt_structure = AdamWState::init(structure_student, cfg.optimizer);

    const bool use_color = cfg.ablation.enable_color_student;
    const bool use_structure = cfg.ablation.enable_structure_student;
    const bool dual = use_color && use_structure;

    RunResult result;
    result.best_val_dice = -1.0;
    std::pair<double, double> last_val{0.0, 0.0};
    Rng rng = Rng(cfg.seed).split(0xABCDu);

    int bs = cfg.schedule.batch_size;
    int steps = std::max({1,
                          static_cast<int>((data.labeled.size() + bs - 1) / bs),
                          static_cast<int>((data.unlabeled.size() + bs - 1) / bs)});

    for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
        std::vector<std::size_t> l_idx(data.labeled.size()), u_idx(data.unlabeled.size());
        for (std::size_t i = 0; i < l_idx.size(); ++i) l_idx[i] = i;
        for (std::size_t i = 0; i < u_idx.size(); ++i) u_idx[i] = i;
        for (std::size_t i = l_idx.size(); i > 1; --i)
            std::swap(l_idx[i - 1], l_idx[static_cast<std::size_t>(
                                        rng.uniform_int(0, static_cast<int>(i) - 1))]);
        for (std::size_t i = u_idx.size(); i > 1; --i)
            std::swap(u_idx[i - 1], u_idx[static_cast<std::size_t>(
                                        rng.uniform_int(0, static_cast<int>(i) - 1))]);

        double ep_sup = 0.0, ep_unsup = 0.0;
        float lam = lambda_unsup(epoch, cfg.schedule);
        for (int step = 0; step < steps; ++step) {
            std::vector<Sample> batch_l, batch_u;
            for (int k = 0; k < bs && !data.labeled.empty(); ++k)
                batch_l.push_back(
                    data.labeled[l_idx[(static_cast<std::size_t>(step) * bs + k) % l_idx.size()]]);
            for (int k = 0; k < bs && !data.unlabeled.empty(); ++k)
                batch_u.push_back(data.unlabeled[u_idx[(static_cast<std::size_t>(step) * bs + k) %
                                                       u_idx.size()]]);

            StepReport rep = train_step(teacher, color_student, structure_student, opt_color,
                                        opt_structure, batch_l, batch_u, &data.labeled, cfg, epoch,
                                        rng);
            if (!std::isfinite(rep.total)) {
                if (!out_dir.empty())
                    save_checkpoint(use_color ? color_student : structure_student,
                                    (fs::path(out_dir) / "diverged.ckpt").string());
                throw NumericError("fit: loss diverged at epoch " + std::to_string(epoch));
            }
            ep_sup += rep.loss_sup;
            ep_unsup += rep.loss_unsup;

            if (dual)
                ema_update(teacher, color_student, structure_student, cfg.ema, epoch, last_val);
            else
                ema_update_single(teacher, use_color ? color_student : structure_student,
                                  cfg.ema.alpha);
        }
        ep_sup /= steps;
        ep_unsup /= steps;

        auto [t_dice, t_jac] = detail::evaluate(teacher, data.val);
        auto [c_dice, c_jac] = use_color ? detail::evaluate(color_student, data.val)
                                         : std::pair<double, double>{0.0, 0.0};
        auto [s_dice, s_jac] = use_structure ? detail::evaluate(structure_student, data.val)
                                             : std::pair<double, double>{0.0, 0.0};
        last_val = {c_dice, s_dice};

        auto push = [&](const std::string& split, double dice, double jac) {
            MetricRow row;
            row.run_id = run_id;
            row.fold = cfg.data.fold;
            row.epoch = epoch;
            row.split = split;
            row.dice = dice;
            row.jaccard = jac;
            row.loss_sup = ep_sup;
            row.loss_unsup = ep_unsup;
            row.lambda_unsup = lam;
            result.rows.push_back(row);
        };
        push("val/teacher", t_dice, t_jac);
        if (use_color) push("val/color", c_dice, c_jac);
        if (use_structure) push("val/structure", s_dice, s_jac);

        // best student by validation Dice; ties go to the color student
        double best_dice = c_dice;
        std::string best_name = "color";
        const ModelState* best_net = &color_student;
        if (!use_color || (use_structure && s_dice > c_dice)) {
            best_dice = s_dice;
            best_name = "structure";
            best_net = &structure_student;
        }
        if (best_dice > result.best_val_dice) {
            result.best_val_dice = best_dice;
            result.best_student = best_name;
            result.best_state = best_net->clone();
            if (!out_dir.empty())
                save_checkpoint(result.best_state, (fs::path(out_dir) / "best_student.ckpt").string());
        }
    }

    auto [test_dice, test_jac] = detail::evaluate(result.best_state, data.test);
    result.test_dice = test_dice;
    result.test_jaccard = test_jac;
    {
        MetricRow row;
        row.run_id = run_id;
        row.fold = cfg.data.fold;
        row.epoch = cfg.schedule.epochs - 1;
        row.split = "test";
        row.dice = test_dice;
        row.jaccard = test_jac;
        row.lambda_unsup = lambda_unsup(cfg.schedule.epochs - 1, cfg.schedule);
        result.rows.push_back(row);
    }
    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    if (!out_dir.empty()) {
        std::ofstream csv((fs::path(out_dir) / "metrics.csv").string());
        csv << metrics_csv_header() << "\n";
        for (const auto& row : result.rows) csv << to_csv(row) << "\n";

        std::ofstream manifest((fs::path(out_dir) / "run.json").string());
        manifest << "{\n  \"run_id\": \"" << run_id << "\",\n  \"config_hash\": \""
                 << config_hash(cfg) << "\",\n  \"seed\": " << cfg.seed
                 << ",\n  \"best_student\": \"" << result.best_student
                 << "\",\n  \"best_val_dice\": " << result.best_val_dice
                 << ",\n  \"test_dice\": " << result.test_dice
                 << ",\n  \"test_jaccard\": " << result.test_jaccard
                 << ",\n  \"wall_time_s\": " << result.wall_time_s << "\n}\n";
    }
    return result;
}

} // namespace csds
