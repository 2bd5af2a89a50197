#pragma once

#include "esn/adam.hpp"
#include "esn/config.hpp"
#include "esn/dataset.hpp"
#include "esn/losses.hpp"
#include "esn/network.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace esn {

enum class StageMode { UnsupervisedPretrain, Supervised };

struct LrPolicy {
    enum class Kind { Constant, StepEvery, Milestone };
    Kind kind = Kind::Constant;
    double base = 1e-4;
    int step_epochs = 10;
    double step_factor = 0.5;
    int milestone_epoch = 600;
    double milestone_factor = 0.1;

    // epoch is 0-based within its round; the policy restarts every round
    double lr_at(int epoch) const;
    static LrPolicy parse(const std::string& spec, double base_lr);
};

struct RoundSpec {
    int epochs = 1;
    LrPolicy lr;
    std::array<double, 7> omega{1, 1, 1, 1, 1, 1, 1};
};

struct StageSpec {
    std::string dataset_id;
    StageMode mode = StageMode::Supervised;
    std::vector<RoundSpec> rounds;
    index_t crop_h = 0, crop_w = 0;  // 0 = no cropping

    std::string label() const {
        return dataset_id + (mode == StageMode::UnsupervisedPretrain ? "*" : "");
    }
};

struct DatasetSchedule {
    std::vector<StageSpec> stages;
};

// Order strings look like "SF*+SF+DS+K": '+'-separated dataset ids, a
// trailing '*' marking an unsupervised pretraining stage.
std::vector<std::pair<std::string, bool>> parse_order(const std::string& order);

// Builds the full schedule from the config: the order string plus each
// dataset's rounds / learning-rate policy / crop / per-round scale weights.
DatasetSchedule schedule_from_config(const Config& cfg);

struct EpochLog {
    std::string stage;  // dataset id, '*'-suffixed for unsupervised stages
    int round = 0;
    int epoch = 0;
    double lr = 0;
    double loss = 0;
    // NaN for unsupervised stages, which have no disparity metric
    double val_epe = std::numeric_limits<double>::quiet_NaN();
    double val_d1 = std::numeric_limits<double>::quiet_NaN();
};

struct StageTrace {
    std::string stage;
    std::uint64_t params_hash_start = 0;
    std::uint64_t params_hash_end = 0;
};

struct RunResult {
    std::vector<EpochLog> log;
    std::vector<StageTrace> stages;
    std::vector<std::string> checkpoint_paths;
};

struct RunOptions {
    int batch_size = 2;
    unsigned long long seed = 1729;
    double split = 0.9;  // train fraction; validation falls back to the train set when empty
    std::string out_dir;  // empty: no checkpoints or CSV log written
    AdamConfig adam;
    UnsupLossConfig unsup;
    SupervisedLossConfig mixed_supervised;  // used only with mixed_weight > 0
    double mixed_weight = 0;  // adds mixed_weight * unsupervised loss to supervised stages
    bool verbose = false;
};

std::uint64_t parameters_hash(const NamedTensors<float>& params);

std::string format_log_csv(const std::vector<EpochLog>& log);

// Executes the stages in order, carrying parameters across stage boundaries.
// Every dataset named by a stage must be present and non-empty before any
// training starts. Checkpoints are written at round ends (atomic rename) and
// a final checkpoint plus CSV log at the end when out_dir is set.
RunResult run_schedule(const DatasetSchedule& schedule, StereoModel<float>& model,
                       const std::map<std::string, std::vector<StereoSample>>& datasets,
                       const RunOptions& opts);

RunOptions run_options_from_config(const Config& cfg);

}  // namespace esn
