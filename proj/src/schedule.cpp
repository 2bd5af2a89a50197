#include "esn/schedule.hpp"

#include "esn/eval.hpp"
#include "esn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace esn {

double LrPolicy::lr_at(int epoch) const {
    switch (kind) {
        case Kind::Constant: return base;
        case Kind::StepEvery: return base * std::pow(step_factor, epoch / step_epochs);
        case Kind::Milestone: return epoch >= milestone_epoch ? base * milestone_factor : base;
    }
    return base;
}

LrPolicy LrPolicy::parse(const std::string& spec, double base_lr) {
    LrPolicy p;
    p.base = base_lr;
    if (spec == "constant" || spec.empty()) {
        p.kind = Kind::Constant;
        return p;
    }
    std::stringstream ss(spec);
    std::string kind, a, b;
    std::getline(ss, kind, ':');
    std::getline(ss, a, ':');
    std::getline(ss, b, ':');
    try {
        if (kind == "step") {
            p.kind = Kind::StepEvery;
            p.step_epochs = std::stoi(a);
            p.step_factor = std::stod(b);
            if (p.step_epochs < 1) throw ConfigError("lr_policy step interval must be >= 1");
            return p;
        }
        if (kind == "milestone") {
            p.kind = Kind::Milestone;
            p.milestone_epoch = std::stoi(a);
            p.milestone_factor = std::stod(b);
            return p;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("malformed lr_policy '" + spec + "'");
    }
    throw ConfigError("unknown lr_policy '" + spec + "' (constant | step:N:f | milestone:N:f)");
}

std::vector<std::pair<std::string, bool>> parse_order(const std::string& order) {
    std::vector<std::pair<std::string, bool>> out;
    std::stringstream ss(order);
    std::string tok;
    while (std::getline(ss, tok, '+')) {
        if (tok.empty()) throw ConfigError("schedule order '" + order + "' has an empty stage");
        bool unsup = false;
        if (tok.back() == '*') {
            unsup = true;
            tok.pop_back();
        }
        if (tok.empty()) throw ConfigError("schedule order '" + order + "' has a bare '*'");
        out.emplace_back(tok, unsup);
    }
    if (out.empty()) throw ConfigError("schedule order '" + order + "' is empty");
    return out;
}

namespace {

std::array<double, 7> omega_from_list(const std::vector<double>& v, const std::string& what) {
    if (v.size() != 7) throw ConfigError(what + " needs exactly 7 weights");
    std::array<double, 7> out;
    for (int i = 0; i < 7; ++i) {
        if (v[static_cast<std::size_t>(i)] < 0) throw ConfigError(what + " weights must be >= 0");
        out[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    }
    return out;
}

std::pair<index_t, index_t> parse_crop(const std::string& spec) {
    if (spec.empty() || spec == "none") return {0, 0};
    const std::size_t x = spec.find('x');
    if (x == std::string::npos) throw ConfigError("crop '" + spec + "' must look like HxW");
    try {
        return {std::stoll(spec.substr(0, x)), std::stoll(spec.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError("crop '" + spec + "' must look like HxW");
    }
}

}  // namespace

DatasetSchedule schedule_from_config(const Config& cfg) {
    DatasetSchedule sched;
    const auto order = parse_order(cfg.get("schedule.order"));

    // global per-round omega defaults; a stage with R rounds takes the last R
    std::vector<std::array<double, 7>> omega_defaults;
    for (int i = 1; cfg.has("schedule.omega" + std::to_string(i)); ++i) {
        omega_defaults.push_back(omega_from_list(cfg.get_list("schedule.omega" + std::to_string(i)),
                                                 "schedule.omega" + std::to_string(i)));
    }
    if (omega_defaults.empty()) omega_defaults.push_back({1, 1, 1, 1, 1, 1, 1});

    for (const auto& [id, unsup] : order) {
        StageSpec st;
        st.dataset_id = id;
        st.mode = unsup ? StageMode::UnsupervisedPretrain : StageMode::Supervised;

        const std::string base = "schedule." + id + ".";
        auto crop = parse_crop(cfg.get_or(base + "crop", "none"));
        st.crop_h = crop.first;
        st.crop_w = crop.second;

        if (unsup) {
            RoundSpec r;
            r.epochs = static_cast<int>(cfg.get_int("schedule.pretrain.epochs"));
            r.lr = LrPolicy::parse("constant", cfg.get_double("schedule.pretrain.lr"));
            st.rounds.push_back(r);
        } else {
            std::vector<double> epochs{1};
            if (cfg.has(base + "epochs")) epochs = cfg.get_list(base + "epochs");
            const double lr = cfg.has(base + "lr") ? cfg.get_double(base + "lr") : 1e-4;
            const LrPolicy policy = LrPolicy::parse(cfg.get_or(base + "lr_policy", "constant"), lr);
            const std::size_t nrounds = epochs.size();
            for (std::size_t r = 0; r < nrounds; ++r) {
                RoundSpec rs;
                rs.epochs = static_cast<int>(epochs[r]);
                if (rs.epochs < 0) throw ConfigError("negative epoch count for stage " + id);
                rs.lr = policy;
                // per-stage omega override, else the tail of the global list
                const std::string okey = base + "omega" + std::to_string(r + 1);
                if (cfg.has(okey)) {
                    rs.omega = omega_from_list(cfg.get_list(okey), okey);
                } else {
                    const std::size_t nd = omega_defaults.size();
                    const std::size_t idx =
                        nrounds >= nd ? std::min(r, nd - 1)
                                      : nd - nrounds + r;  // tail alignment
                    rs.omega = omega_defaults[idx];
                }
                st.rounds.push_back(rs);
            }
        }
        sched.stages.push_back(std::move(st));
    }
    return sched;
}

std::uint64_t parameters_hash(const NamedTensors<float>& params) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&h](const void* data, std::size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : params) {
        mix(name.data(), name.size());
        mix(t.data().data(), t.data().size() * sizeof(float));
    }
    return h;
}

std::string format_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "stage,round,epoch,lr,loss,val_epe,val_d1\n";
    char line[256];
    for (const EpochLog& e : log) {
        std::snprintf(line, sizeof(line), "%s,%d,%d,%.8g,%.8g,%.8g,%.8g\n", e.stage.c_str(),
                      e.round, e.epoch, e.lr, e.loss, e.val_epe, e.val_d1);
        os << line;
    }
    return os.str();
}

namespace {

struct Batch {
    Tensor<float> left, right;        // raw [0,1]
    Tensor<float> gt, valid;          // defined only for supervised batches
};

Batch make_batch(const std::vector<StereoSample>& samples, const std::vector<std::size_t>& idx,
                 std::size_t begin, std::size_t end, index_t crop_h, index_t crop_w, Rng& rng,
                 bool with_gt) {
    std::vector<Tensor<float>> ls, rs, gs, vs;
    for (std::size_t i = begin; i < end; ++i) {
        StereoSample s = samples[idx[i]];
        if (crop_h > 0 && crop_w > 0 && (s.left.shape().h > crop_h || s.left.shape().w > crop_w)) {
            const index_t ch = std::min(crop_h, s.left.shape().h);
            const index_t cw = std::min(crop_w, s.left.shape().w);
            s = random_crop(s, ch, cw, rng);
        }
        ls.push_back(s.left);
        rs.push_back(s.right);
        if (with_gt) {
            gs.push_back(s.gt());
            vs.push_back(s.valid_mask.defined() ? s.valid_mask
                                                : Tensor<float>(s.gt().shape(), 1.0f));
        }
    }
    Batch b;
    b.left = stack_batch(ls);
    b.right = stack_batch(rs);
    if (with_gt) {
        b.gt = stack_batch(gs);
        b.valid = stack_batch(vs);
    }
    return b;
}

struct ValMetrics {
    double epe = std::numeric_limits<double>::quiet_NaN();
    double d1 = std::numeric_limits<double>::quiet_NaN();
};

ValMetrics validate(StereoModel<float>& model, const std::vector<StereoSample>& samples,
                    const std::vector<std::size_t>& idx) {
    std::vector<ImageEval> evals;
    for (std::size_t i : idx) {
        if (!samples[i].has_gt()) continue;
        const StereoSample s = crop_to_divisible(samples[i], 64);
        auto out = model.forward(normalize(s.left), normalize(s.right));
        Tensor<float> valid =
            s.valid_mask.defined() ? s.valid_mask : Tensor<float>(s.gt().shape(), 1.0f);
        evals.push_back(evaluate_image("val", out.pyramid[0], s.gt(), valid));
    }
    if (evals.empty()) return {};
    EvalReport rep = evaluate_set(evals, OutlierRule::PaperOr);
    return {rep.epe, rep.d1_paper_or};
}

}  // namespace

RunResult run_schedule(const DatasetSchedule& schedule, StereoModel<float>& model,
                       const std::map<std::string, std::vector<StereoSample>>& datasets,
                       const RunOptions& opts) {
    if (schedule.stages.empty()) throw ConfigError("schedule has no stages");
    // resolve every dataset and check trainability before any training starts
    for (const StageSpec& st : schedule.stages) {
        auto it = datasets.find(st.dataset_id);
        if (it == datasets.end() || it->second.empty()) {
            throw DataError("schedule: dataset '" + st.dataset_id + "' is missing or empty");
        }
        for (const StereoSample& s : it->second) {
            if (st.mode == StageMode::Supervised && !s.has_gt()) {
                throw DataError("schedule: supervised stage '" + st.dataset_id +
                                "' has samples without ground truth");
            }
            // the size each training batch will actually run at
            const Shape sz = s.left.shape();
            index_t h = sz.h, w = sz.w;
            if (st.crop_h > 0 && st.crop_w > 0 && (h > st.crop_h || w > st.crop_w)) {
                h = std::min(h, st.crop_h);
                w = std::min(w, st.crop_w);
            }
            if (h % 64 != 0 || w % 64 != 0) {
                throw DataError("schedule: stage '" + st.dataset_id + "' would train at " +
                                std::to_string(h) + "x" + std::to_string(w) +
                                ", which is not divisible by 64");
            }
        }
    }

    const bool persist = !opts.out_dir.empty();
    if (persist) std::filesystem::create_directories(opts.out_dir);
    std::ofstream csv;
    if (persist) {
        csv.open(opts.out_dir + "/train_log.csv", std::ios::trunc);
        csv << "stage,round,epoch,lr,loss,val_epe,val_d1\n";
    }

    RunResult result;
    AdamState<float> adam_state;
    const std::vector<Tensor<float>> param_tensors = model.parameter_tensors();

    for (std::size_t stage_idx = 0; stage_idx < schedule.stages.size(); ++stage_idx) {
        const StageSpec& st = schedule.stages[stage_idx];
        const bool unsup = st.mode == StageMode::UnsupervisedPretrain;
        const std::vector<StereoSample>& all = datasets.at(st.dataset_id);

        StageTrace trace;
        trace.stage = st.label();
        trace.params_hash_start = parameters_hash(model.parameters());

        // deterministic split: leading samples train, the rest validate
        std::vector<std::size_t> train_idx, val_idx;
        const std::size_t ntrain = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(opts.split * static_cast<double>(all.size()))));
        for (std::size_t i = 0; i < all.size(); ++i) {
            (i < ntrain ? train_idx : val_idx).push_back(i);
        }
        if (val_idx.empty()) val_idx = train_idx;

        // fresh optimizer state per stage
        adam_state = AdamState<float>{};

        // an unsupervised stage trains on samples with the ground truth
        // removed, so it cannot read it even by accident
        const std::vector<StereoSample>* stage_samples = &all;
        std::vector<StereoSample> stripped;
        if (unsup) {
            stripped.reserve(all.size());
            for (const StereoSample& s : all) stripped.push_back(s.without_gt());
            stage_samples = &stripped;
        }

        for (std::size_t round = 0; round < st.rounds.size(); ++round) {
            const RoundSpec& rs = st.rounds[round];
            SupervisedLossConfig sup_cfg;
            sup_cfg.omega = rs.omega;

            for (int epoch = 0; epoch < rs.epochs; ++epoch) {
                const double lr = rs.lr.lr_at(epoch);
                Rng rng(opts.seed ^ (0x9e3779b97f4a7c15ull * (stage_idx * 1000003 + round * 1009 +
                                                              static_cast<std::size_t>(epoch) + 1)));
                std::vector<std::size_t> order = train_idx;
                std::shuffle(order.begin(), order.end(), rng);

                double loss_sum = 0;
                std::size_t nbatches = 0;
                for (std::size_t b = 0; b < order.size();
                     b += static_cast<std::size_t>(opts.batch_size)) {
                    const std::size_t e =
                        std::min(order.size(), b + static_cast<std::size_t>(opts.batch_size));
                    Batch batch = make_batch(*stage_samples, order, b, e, st.crop_h, st.crop_w,
                                             rng, !unsup);

                    Graph<float> graph;
                    auto out = model.forward(normalize(batch.left), normalize(batch.right));
                    Tensor<float> loss;
                    if (unsup) {
                        loss = unsupervised_total(out.pyramid, batch.left, batch.right, opts.unsup);
                    } else {
                        loss = supervised_total(out.pyramid, batch.gt, batch.valid, sup_cfg);
                        if (opts.mixed_weight > 0) {
                            Tensor<float> extra =
                                unsupervised_total(out.pyramid, batch.left, batch.right, opts.unsup);
                            loss = add(loss,
                                       mul_scalar(extra, static_cast<float>(opts.mixed_weight)));
                        }
                    }
                    model.zero_grads();
                    graph.backward(loss);
                    AdamConfig ac = opts.adam;
                    ac.lr = lr;
                    adam_step(param_tensors, adam_state, ac);
                    loss_sum += static_cast<double>(loss.item());
                    ++nbatches;
                }

                EpochLog log;
                log.stage = st.label();
                log.round = static_cast<int>(round);
                log.epoch = epoch;
                log.lr = lr;
                log.loss = nbatches > 0 ? loss_sum / static_cast<double>(nbatches) : 0.0;
                if (!unsup) {
                    const ValMetrics vm = validate(model, all, val_idx);
                    log.val_epe = vm.epe;
                    log.val_d1 = vm.d1;
                }
                result.log.push_back(log);
                if (persist) {
                    char line[256];
                    std::snprintf(line, sizeof(line), "%s,%d,%d,%.8g,%.8g,%.8g,%.8g\n",
                                  log.stage.c_str(), log.round, log.epoch, log.lr, log.loss,
                                  log.val_epe, log.val_d1);
                    csv << line;
                    csv.flush();
                }
                if (opts.verbose) {
                    std::fprintf(stderr, "[%s r%zu e%d] lr %.2g loss %.5g val_epe %.4g\n",
                                 log.stage.c_str(), round, epoch, lr, log.loss, log.val_epe);
                }
            }

            if (persist) {
                char name[128];
                std::snprintf(name, sizeof(name), "ckpt_s%zu_%s_r%zu.esn", stage_idx,
                              st.dataset_id.c_str(), round);
                const std::string path = opts.out_dir + "/" + name;
                save_checkpoint(path, model.parameters());
                result.checkpoint_paths.push_back(path);
            }
        }

        trace.params_hash_end = parameters_hash(model.parameters());
        result.stages.push_back(trace);
    }

    if (persist) {
        const std::string path = opts.out_dir + "/final.esn";
        save_checkpoint(path, model.parameters());
        result.checkpoint_paths.push_back(path);
    }
    return result;
}

RunOptions run_options_from_config(const Config& cfg) {
    RunOptions o;
    o.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
    o.seed = static_cast<unsigned long long>(cfg.get_int("train.seed"));
    o.split = cfg.get_double("data.split");
    o.adam.beta1 = cfg.get_double("train.beta1");
    o.adam.beta2 = cfg.get_double("train.beta2");
    o.adam.eps = cfg.get_double("train.adam_eps");
    o.unsup.lambda1 = cfg.get_double("loss.lambda1");
    o.unsup.lambda2 = cfg.get_double("loss.lambda2");
    o.unsup.alpha = cfg.get_double("loss.alpha");
    o.unsup.num_scales = static_cast<int>(cfg.get_int("loss.num_scales"));
    o.unsup.full_res_compare = cfg.get_bool("loss.full_res_compare");
    o.mixed_weight = cfg.get_double("loss.mixed_weight");
    if (o.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (o.split <= 0 || o.split > 1) throw ConfigError("data.split must be in (0, 1]");
    return o;
}

}  // namespace esn
