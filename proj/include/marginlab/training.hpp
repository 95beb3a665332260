#pragma once

#include "marginlab/data.hpp"
#include "marginlab/network.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace marginlab {

enum class LossKind { cross_entropy, hinge };

struct LossSpec {
    LossKind kind = LossKind::cross_entropy;
    double hinge_margin = 1.0;
};

enum class RegKind { none, weight_decay, jacobian, jacobian_row };

struct RegSpec {
    RegKind kind = RegKind::none;
    double lambda = 0.0;
    std::size_t rows_per_sample = 1;  // jacobian_row only

    void validate() const;
};

std::string to_string(LossKind k);
std::string to_string(RegKind k);
LossKind parse_loss_kind(const std::string& s);
/// Accepts none|wd|jac|jac-row and the long names.
RegKind parse_reg_kind(const std::string& s);

/// Gradient of one weight/bias pair, in Network::parameters() order.
struct ParamGrad {
    Matrix weight;
    Vector bias;
};
using Gradients = std::vector<ParamGrad>;

Gradients zero_gradients(const Network& net);
double gradient_norm(const Gradients& g);

/// Class rows drawn for the sampled-row penalty, one list per batch sample.
using RowSelection = std::vector<std::vector<std::size_t>>;

/// Draws `rows_per_sample` rows uniformly with replacement for each sample.
RowSelection draw_rows(std::size_t batch_size, std::size_t num_classes, std::size_t rows_per_sample,
                       std::mt19937_64& rng);

/// Every row for every sample; the row-penalty over this selection is
/// ||J||_F^2 / N_Y.
RowSelection all_rows(std::size_t batch_size, std::size_t num_classes);

struct ObjectiveValue {
    double loss = 0.0;     // mean training surrogate
    double penalty = 0.0;  // regularizer before the lambda factor
    double total = 0.0;    // loss + lambda * penalty
};

/// Mean loss over the batch. Cross-entropy requires a softmax head and is
/// evaluated by log-sum-exp on the logits; hinge requires a linear head.
double loss_value(const Network& net, std::span<const Sample> batch, const LossSpec& loss);

/// Mean over the batch of ||J(x_i)||_F^2.
double jacobian_penalty(const Network& net, std::span<const Sample> batch);

/// Mean over the batch of the mean over the drawn rows r of ||J_r(x_i)||^2.
double sampled_row_penalty(const Network& net, std::span<const Sample> batch, const RowSelection& rows);

ObjectiveValue objective(const Network& net, std::span<const Sample> batch, const LossSpec& loss,
                         const RegSpec& reg, const RowSelection* rows = nullptr);

/// Exact gradient of objective(). The Jacobian penalties are differentiated
/// by reverse-mode through the Jacobian row recursion. Samples are processed
/// in fixed blocks and summed in order, so the result does not depend on
/// `jobs`.
Gradients gradients(const Network& net, std::span<const Sample> batch, const LossSpec& loss, const RegSpec& reg,
                    const RowSelection* rows = nullptr, ObjectiveValue* value = nullptr, std::size_t jobs = 1);

struct OptimizerState {
    Gradients velocity;
    std::uint64_t steps = 0;
};

OptimizerState make_optimizer_state(const Network& net);

/// Classical momentum: v <- momentum * v - rate * g; p <- p + v.
void sgd_step(OptimizerState& state, Network& net, const Gradients& grads, double rate, double momentum);

struct ScheduleStage {
    double rate = 0.01;
    std::size_t epochs = 0;  // 0 on the last stage: open-ended
};
using Schedule = std::vector<ScheduleStage>;

/// `rate` divided by `factor` after every `every` epochs, over `total` epochs.
Schedule step_schedule(double rate, double factor, std::size_t every, std::size_t total);
double rate_at(const Schedule& schedule, std::size_t epoch);

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    LossSpec loss;
    RegSpec reg;
    Schedule schedule{{0.01, 0}};
    double momentum = 0.9;
    bool weight_norm = false;   // project onto unit-norm rows after every step
    double clip_norm = 0.0;     // global gradient-norm clip, 0 disables
    std::size_t jobs = 1;
    bool track_jacobian = true;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = std::numeric_limits<double>::quiet_NaN();
    double mean_jac_frob = std::numeric_limits<double>::quiet_NaN();
    double max_jac_spec = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    Network net;
    std::vector<EpochRecord> history;
};

/// Seeded mini-batch SGD. `test` may be null.
TrainResult train(Network net, const Dataset& train_set, const Dataset* test, const TrainConfig& config);

double accuracy(const Network& net, const Dataset& data, std::size_t jobs = 1);

struct JacobianStats {
    double mean_frob = 0.0;
    double max_spec = 0.0;
    std::vector<double> frob;  // per sample
    std::vector<double> spec;  // per sample
};

JacobianStats jacobian_stats(const Network& net, const Dataset& data, std::size_t jobs = 1);

struct GradCheckOptions {
    double step = 1e-5;
    std::size_t coordinates = 256;
    std::uint64_t seed = 1;
    /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
    double floor = 1e-4;
    /// Applied to the analytic gradient before comparison (fault injection).
    std::function<void(Gradients&)> tamper;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // perturbation crossed a ReLU, max-pool or hinge switch
};

GradCheckResult grad_check(const Network& net, std::span<const Sample> batch, const LossSpec& loss,
                           const RegSpec& reg, const RowSelection* rows = nullptr,
                           const GradCheckOptions& opts = {});

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace marginlab
