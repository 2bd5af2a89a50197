#include "esn/config.hpp"
#include "esn/dataset.hpp"
#include "esn/eval.hpp"
#include "esn/gradsuite.hpp"
#include "esn/image_io.hpp"
#include "esn/losses.hpp"
#include "esn/network.hpp"
#include "esn/schedule.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace {

constexpr unsigned long long kDefaultSeed = 1729;

esn::Config build_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
    esn::Config cfg =
        config_path.empty() ? esn::Config::defaults() : esn::Config::load_file(config_path);
    for (const std::string& o : overrides) cfg.apply_override(o);
    return cfg;
}

esn::SynthSpec synth_spec_from(const std::string& size, const std::string& style, int count,
                               double shift) {
    esn::SynthSpec spec;
    spec.count = count;
    spec.shift = shift;
    const auto x = size.find('x');
    if (x == std::string::npos) throw esn::ConfigError("--size must look like HxW");
    spec.height = std::stoll(size.substr(0, x));
    spec.width = std::stoll(size.substr(x + 1));
    if (style == "uniform") {
        spec.style = esn::DisparityStyle::UniformShift;
    } else if (style == "ramp") {
        spec.style = esn::DisparityStyle::SmoothRamp;
    } else if (style == "occlusion") {
        spec.style = esn::DisparityStyle::TwoLayerOcclusion;
    } else {
        throw esn::ConfigError("--style must be uniform, ramp or occlusion");
    }
    return spec;
}

int cmd_synth(const std::string& out, const std::string& size, const std::string& style,
              int count, double shift, unsigned long long seed) {
    esn::Rng rng(seed);
    const auto samples = esn::synth_generate(synth_spec_from(size, style, count, shift), rng);
    esn::save_dataset(out, samples);
    std::printf("wrote %zu samples to %s\n", samples.size(), out.c_str());
    return 0;
}

std::map<std::string, std::vector<esn::StereoSample>> load_datasets_for(
    const esn::DatasetSchedule& sched, const esn::Config& cfg) {
    std::map<std::string, std::vector<esn::StereoSample>> out;
    for (const auto& st : sched.stages) {
        if (out.count(st.dataset_id)) continue;
        const std::string key = "data." + st.dataset_id;
        if (!cfg.has(key)) {
            throw esn::ConfigError("schedule stage '" + st.dataset_id + "' has no " + key +
                                   " directory configured");
        }
        out[st.dataset_id] = esn::load_dataset(cfg.get(key));
    }
    return out;
}

int cmd_train(const esn::Config& cfg, const std::string& out_dir, const std::string& init,
              unsigned long long seed, bool verbose) {
    esn::StereoModel<float> model(cfg.network_config(), seed);
    if (!init.empty()) {
        auto loaded = esn::load_checkpoint<float>(init);
        esn::assign_named(model.parameters(), loaded);
    }
    const esn::DatasetSchedule sched = esn::schedule_from_config(cfg);
    const auto datasets = load_datasets_for(sched, cfg);
    esn::RunOptions opts = esn::run_options_from_config(cfg);
    opts.out_dir = out_dir;
    opts.seed = seed;
    opts.verbose = verbose;
    const esn::RunResult result = esn::run_schedule(sched, model, datasets, opts);

    for (const auto& st : result.stages) {
        std::printf("stage %-6s params %016llx -> %016llx\n", st.stage.c_str(),
                    static_cast<unsigned long long>(st.params_hash_start),
                    static_cast<unsigned long long>(st.params_hash_end));
    }
    if (!result.log.empty()) {
        const esn::EpochLog& last = result.log.back();
        std::printf("final: stage %s round %d epoch %d loss %.6g val_epe %.6g\n",
                    last.stage.c_str(), last.round, last.epoch, last.loss, last.val_epe);
    }
    return 0;
}

int cmd_pretrain(esn::Config cfg, const std::string& data_dir, const std::string& out_dir,
                 int epochs, unsigned long long seed, bool verbose) {
    cfg.set("data.PRE", data_dir);
    cfg.set("schedule.order", "PRE*");
    if (epochs > 0) cfg.set("schedule.pretrain.epochs", std::to_string(epochs));
    return cmd_train(cfg, out_dir, "", seed, verbose);
}

int cmd_infer(const esn::Config& cfg, const std::string& checkpoint, const std::string& left_path,
              const std::string& right_path, const std::string& out_dir,
              unsigned long long seed) {
    esn::Tensor<float> left = esn::read_image(left_path);
    esn::Tensor<float> right = esn::read_image(right_path);
    if (!(left.shape() == right.shape())) {
        throw esn::DataError("left and right images differ in size");
    }
    if (left.shape().h % 64 != 0 || left.shape().w % 64 != 0) {
        throw esn::DataError("input size " + left.shape().str() + " must be divisible by 64");
    }
    esn::StereoModel<float> model(cfg.network_config(), seed);
    auto loaded = esn::load_checkpoint<float>(checkpoint);
    esn::assign_named(model.parameters(), loaded);

    const auto out = model.forward(esn::normalize(left), esn::normalize(right));
    fs::create_directories(out_dir);
    esn::write_pfm(out_dir + "/disparity.pfm", out.pyramid[0]);
    esn::ExportOptions eo;
    eo.max_disparity = cfg.get_double("eval.max_disparity");
    eo.max_error = cfg.get_double("eval.max_error");
    esn::export_artifacts(out.pyramid[0], esn::Tensor<float>(), out.occlusion, out_dir, eo);
    std::printf("wrote %s/disparity.pfm\n", out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& dir, const std::string& rule_name, const std::string& csv_out) {
    const esn::OutlierRule rule = esn::outlier_rule_from_string(rule_name);
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const auto pos = name.find("_pred.pfm");
        if (pos != std::string::npos) stems.push_back(name.substr(0, pos));
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw esn::DataError("eval: no '*_pred.pfm' files in '" + dir + "'");

    std::vector<esn::ImageEval> evals;
    for (const std::string& stem : stems) {
        const std::string base = dir + "/" + stem;
        esn::Tensor<float> pred = esn::read_pfm(base + "_pred.pfm");
        esn::Tensor<float> gt, valid;
        if (fs::exists(base + "_gt.pfm")) {
            gt = esn::read_pfm(base + "_gt.pfm");
            valid = esn::Tensor<float>(gt.shape());
            for (std::size_t i = 0; i < gt.data().size(); ++i) {
                valid.data()[i] = std::isfinite(gt.data()[i]) && gt.data()[i] > 0 ? 1.0f : 0.0f;
            }
        } else if (fs::exists(base + "_gt.png")) {
            auto [g, v] = esn::read_kitti_disparity(base + "_gt.png");
            gt = g;
            valid = v;
        } else {
            throw esn::DataError("eval: no ground truth for '" + stem + "'");
        }
        evals.push_back(esn::evaluate_image(stem, pred, gt, valid));
    }
    const esn::EvalReport report = esn::evaluate_set(evals, rule);
    std::fputs(esn::report_summary(report).c_str(), stdout);
    if (!csv_out.empty()) esn::write_report_csv(csv_out, report);
    return 0;
}

int cmd_gradcheck() {
    const auto results = esn::gradient_suite();
    bool ok = true;
    for (const auto& [name, err] : results) {
        const bool pass = err <= esn::kGradSuiteThreshold;
        ok = ok && pass;
        std::printf("%-28s %.3e %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
    }
    std::printf("%zu ops checked, threshold %.0e\n", results.size(), esn::kGradSuiteThreshold);
    return ok ? 0 : 4;
}

int cmd_inspect(const esn::Config& cfg, unsigned long long seed) {
    esn::StereoModel<float> model(cfg.network_config(), seed);
    std::printf("variant: %s  preset: %s\n", esn::to_string(model.config().variant).c_str(),
                esn::to_string(model.config().preset).c_str());
    const auto ch = model.config().resolved_channels();
    std::printf("channels:");
    for (int c : ch) std::printf(" %d", c);
    std::printf("\nd_max: %d  fmm offsets: %zu  residual blocks/scale: %d\n",
                model.config().d_max_base, model.config().fmm_offsets.size(),
                model.config().resolved_blocks());
    for (const auto& [name, shape] : model.layer_shapes()) {
        std::printf("  %-24s %s\n", name.c_str(), shape.str().c_str());
    }
    std::printf("total parameters: %lld\n", static_cast<long long>(model.parameter_count()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stereo disparity estimation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, init_ckpt, data_dir, checkpoint, left_path, right_path;
    std::string size = "64x128", style = "uniform", rule = "paper_or", csv_out, eval_dir;
    std::vector<std::string> overrides;
    unsigned long long seed = kDefaultSeed;
    int count = 4, epochs = 0;
    double shift = 4.0;
    bool verbose = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config file");
        sub->add_option("--set", overrides, "override config entries (section.key=value)");
        sub->add_option("--seed", seed, "rng seed (default 1729)");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic stereo dataset");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--count", count, "number of samples");
    synth->add_option("--size", size, "sample size HxW (divisible by 64)");
    synth->add_option("--style", style, "uniform | ramp | occlusion");
    synth->add_option("--shift", shift, "disparity for uniform style");
    synth->add_option("--seed", seed, "rng seed (default 1729)");

    CLI::App* train = app.add_subcommand("train", "run the configured dataset schedule");
    add_common(train);
    train->add_option("--out", out_dir, "output directory for checkpoints and logs")->required();
    train->add_option("--init", init_ckpt, "checkpoint to start from");
    train->add_flag("--verbose", verbose, "per-epoch progress on stderr");

    CLI::App* pretrain = app.add_subcommand("pretrain", "unsupervised pretraining stage only");
    add_common(pretrain);
    pretrain->add_option("--data", data_dir, "dataset directory")->required();
    pretrain->add_option("--out", out_dir, "output directory")->required();
    pretrain->add_option("--epochs", epochs, "override pretraining epoch count");
    pretrain->add_flag("--verbose", verbose, "per-epoch progress on stderr");

    CLI::App* infer = app.add_subcommand("infer", "disparity for one rectified pair");
    add_common(infer);
    infer->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    infer->add_option("--left", left_path, "left image (png/ppm)")->required();
    infer->add_option("--right", right_path, "right image (png/ppm)")->required();
    infer->add_option("--out", out_dir, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "metrics over a directory of (pred, gt) pairs");
    eval->add_option("--dir", eval_dir, "directory with *_pred.pfm and *_gt.{pfm,png}")
        ->required();
    eval->add_option("--rule", rule, "outlier rule: paper_or | kitti_and");
    eval->add_option("--csv", csv_out, "write the per-image report here");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    (void)gradcheck;

    CLI::App* inspect = app.add_subcommand("inspect", "parameter counts and layer shapes");
    add_common(inspect);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(out_dir, size, style, count, shift, seed);
        if (train->parsed())
            return cmd_train(build_config(config_path, overrides), out_dir, init_ckpt, seed,
                             verbose);
        if (pretrain->parsed())
            return cmd_pretrain(build_config(config_path, overrides), data_dir, out_dir, epochs,
                                seed, verbose);
        if (infer->parsed())
            return cmd_infer(build_config(config_path, overrides), checkpoint, left_path,
                             right_path, out_dir, seed);
        if (eval->parsed()) return cmd_eval(eval_dir, rule, csv_out);
        if (gradcheck->parsed()) return cmd_gradcheck();
        if (inspect->parsed()) return cmd_inspect(build_config(config_path, overrides), seed);
    } catch (const esn::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const esn::ShapeError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const esn::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const esn::NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
