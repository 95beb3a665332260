#include "marginlab/training.hpp"

#include "marginlab/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace marginlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::size_t kBlock = 8;

void check_label(const Network& net, const Sample& s) {
    if (s.label >= net.num_classes())
        throw InvalidInput("label " + std::to_string(s.label) + " outside [0, " + std::to_string(net.num_classes()) +
                           ")");
}

void check_loss_head(const Network& net, const LossSpec& loss) {
    const HeadKind h = net.head().kind;
    if (loss.kind == LossKind::cross_entropy && h != HeadKind::softmax)
        throw InvalidInput("cross-entropy loss requires a softmax head");
    if (loss.kind == LossKind::hinge && h != HeadKind::linear)
        throw InvalidInput("hinge loss requires a linear head");
}

double log_sum_exp(const Vector& v) {
    const double mx = v.maxCoeff();
    return mx + std::log((v.array() - mx).exp().sum());
}

// Loss of one sample and its adjoint with respect to the head logits.
double sample_loss(const LossSpec& loss, const Vector& logits, std::size_t y, Vector* adj) {
    const auto yi = static_cast<Eigen::Index>(y);
    if (loss.kind == LossKind::cross_entropy) {
        const double lse = log_sum_exp(logits);
        if (adj) {
            *adj = (logits.array() - lse).exp().matrix();
            (*adj)[yi] -= 1.0;
        }
        return lse - logits[yi];
    }
    const auto k = logits.size();
    const double w = 1.0 / static_cast<double>(k - 1);
    double total = 0.0;
    if (adj) *adj = Vector::Zero(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        if (j == yi) continue;
        const double slack = loss.hinge_margin - (logits[yi] - logits[j]);
        if (slack > 0.0) {
            total += slack;
            if (adj) {
                (*adj)[j] += w;
                (*adj)[yi] -= w;
            }
        }
    }
    return total * w;
}

// Seed rows selecting the given classes.
Matrix selection_seed(const std::vector<std::size_t>& rows, std::size_t num_classes) {
    Matrix e = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(num_classes));
    for (std::size_t i = 0; i < rows.size(); ++i) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(rows[i])) = 1.0;
    return e;
}

Vector derivs(Activation a, const Vector& pre) {
    return pre.unaryExpr([a](double v) { return activation_derivative(a, v); });
}

Vector second_derivs(Activation a, const Vector& pre) {
    return pre.unaryExpr([a](double v) { return activation_second_derivative(a, v); });
}

Matrix dense_rows_left(const DenseLayer& d, const LayerTrace& t, const Matrix& rows) {
    return (rows * derivs(d.activation, t.preactivation).asDiagonal()) * d.weight;
}

// Reverse step through R_prev = R diag(d) W. Accumulates the weight
// gradient, adds the pre-activation adjoint to `extra` and returns R-bar.
Matrix dense_rows_adjoint(const DenseLayer& d, const LayerTrace& t, const Matrix& r, const Matrix& r_bar_prev,
                          ParamGrad& g, Vector& extra) {
    const Vector dv = derivs(d.activation, t.preactivation);
    const Matrix v = r * dv.asDiagonal();
    g.weight.noalias() += v.transpose() * r_bar_prev;
    const Matrix v_bar = r_bar_prev * d.weight.transpose();
    if (d.activation != Activation::relu) {
        const Vector d_bar = (v_bar.array() * r.array()).colwise().sum().transpose();
        extra += (d_bar.array() * second_derivs(d.activation, t.preactivation).array()).matrix();
    }
    return v_bar * dv.asDiagonal();
}

std::vector<std::size_t> parameter_offsets(const Network& net) {
    std::vector<std::size_t> off;
    std::size_t k = 0;
    for (const auto& layer : net.layers()) {
        off.push_back(k);
        std::visit(overloaded{
                       [&](const DenseLayer&) { ++k; },
                       [&](const HeadLayer&) { ++k; },
                       [&](const PoolingLayer&) {},
                       [&](const ResidualBlock& r) { k += r.inner.size(); },
                   },
                   layer);
    }
    return off;
}

struct SampleTerms {
    double loss = 0.0;
    double penalty = 0.0;  // c-free: ||seed J||_F^2
};

// Adds the gradient of loss_scale * loss + pen_scale * ||seed J||_F^2 at one
// sample into g. `seed` null disables the penalty.
SampleTerms accumulate_sample(const Network& net, const std::vector<std::size_t>& offsets, const Sample& s,
                              const LossSpec& loss, double loss_scale, const Matrix* seed, double pen_scale,
                              Gradients& g) {
    const auto& layers = net.layers();
    const std::size_t nl = layers.size();
    const ForwardTrace tr = forward(net, s.x);
    SampleTerms out;

    // Extra pre-activation adjoints produced by the penalty.
    std::vector<Vector> extra(nl);
    std::vector<std::vector<Vector>> extra_inner(nl);
    for (std::size_t l = 0; l < nl; ++l) {
        std::visit(overloaded{
                       [&](const DenseLayer& d) { extra[l] = Vector::Zero(d.weight.rows()); },
                       [&](const HeadLayer& h) { extra[l] = Vector::Zero(h.weight.rows()); },
                       [&](const PoolingLayer&) {},
                       [&](const ResidualBlock& r) {
                           for (const auto& d : r.inner) extra_inner[l].push_back(Vector::Zero(d.weight.rows()));
                       },
                   },
                   layers[l]);
    }

    if (seed != nullptr) {
        // rows[l] = seed * d z^L / d z^l, rows[nl] = seed.
        std::vector<Matrix> rows(nl + 1);
        std::vector<std::vector<Matrix>> inner_rows(nl);
        rows[nl] = *seed;
        for (std::size_t l = nl; l-- > 0;) {
            const LayerTrace& t = tr.layers[l];
            rows[l] = std::visit(
                overloaded{
                    [&](const DenseLayer& d) -> Matrix { return dense_rows_left(d, t, rows[l + 1]); },
                    [&](const ResidualBlock& r) -> Matrix {
                        auto& q = inner_rows[l];
                        q.assign(r.inner.size() + 1, Matrix());
                        q[r.inner.size()] = rows[l + 1];
                        for (std::size_t k = r.inner.size(); k-- > 0;) q[k] = dense_rows_left(r.inner[k], t.inner[k], q[k + 1]);
                        return rows[l + 1] + q[0];
                    },
                    [&](const auto&) -> Matrix { return apply_jacobian_left(layers[l], t, rows[l + 1]); },
                },
                layers[l]);
        }
        out.penalty = rows[0].squaredNorm();

        Matrix r_bar = (2.0 * pen_scale) * rows[0];
        for (std::size_t l = 0; l < nl; ++l) {
            const LayerTrace& t = tr.layers[l];
            std::visit(overloaded{
                           [&](const DenseLayer& d) {
                               r_bar = dense_rows_adjoint(d, t, rows[l + 1], r_bar, g[offsets[l]], extra[l]);
                           },
                           [&](const HeadLayer& h) {
                               ParamGrad& pg = g[offsets[l]];
                               if (h.kind == HeadKind::linear) {
                                   pg.weight.noalias() += seed->transpose() * r_bar;
                                   return;
                               }
                               const Vector p = softmax(t.preactivation);
                               const Matrix sm = softmax_jacobian(p);
                               const Matrix v = (*seed) * sm;
                               pg.weight.noalias() += v.transpose() * r_bar;
                               const Matrix s_bar = seed->transpose() * (r_bar * h.weight.transpose());
                               const Vector p_bar = s_bar.diagonal() - (s_bar + s_bar.transpose()) * p;
                               extra[l] += sm * p_bar;
                           },
                           [&](const PoolingLayer& p) {
                               Matrix next(r_bar.rows(), static_cast<Eigen::Index>(p.regions.size()));
                               for (std::size_t i = 0; i < p.regions.size(); ++i) {
                                   if (p.kind == PoolKind::average) {
                                       Vector acc = Vector::Zero(r_bar.rows());
                                       for (std::size_t j : p.regions[i]) acc += r_bar.col(static_cast<Eigen::Index>(j));
                                       next.col(static_cast<Eigen::Index>(i)) = acc / static_cast<double>(p.regions[i].size());
                                   } else {
                                       next.col(static_cast<Eigen::Index>(i)) =
                                           r_bar.col(static_cast<Eigen::Index>(t.selection[i]));
                                   }
                               }
                               r_bar = std::move(next);
                           },
                           [&](const ResidualBlock& r) {
                               Matrix q_bar = r_bar;
                               for (std::size_t k = 0; k < r.inner.size(); ++k)
                                   q_bar = dense_rows_adjoint(r.inner[k], t.inner[k], inner_rows[l][k + 1], q_bar,
                                                              g[offsets[l] + k], extra_inner[l][k]);
                               r_bar += q_bar;
                           },
                       },
                       layers[l]);
        }
    }

    // Standard backpropagation with the loss adjoint at the logits plus the
    // penalty's pre-activation adjoints.
    Vector logit_adj;
    const bool with_loss = loss_scale != 0.0;
    if (with_loss) {
        out.loss = sample_loss(loss, tr.layers[nl - 1].preactivation, s.label, &logit_adj);
        logit_adj *= loss_scale;
    } else {
        logit_adj = Vector::Zero(static_cast<Eigen::Index>(net.num_classes()));
    }

    Vector adj;  // adjoint of z^l
    for (std::size_t l = nl; l-- > 0;) {
        const LayerTrace& t = tr.layers[l];
        const Vector& input = tr.activations[l];
        std::visit(overloaded{
                       [&](const HeadLayer& h) {
                           const Vector pre_bar = logit_adj + extra[l];
                           ParamGrad& pg = g[offsets[l]];
                           pg.weight.noalias() += pre_bar * input.transpose();
                           pg.bias += pre_bar;
                           adj = h.weight.transpose() * pre_bar;
                       },
                       [&](const DenseLayer& d) {
                           const Vector pre_bar =
                               (adj.array() * derivs(d.activation, t.preactivation).array()).matrix() + extra[l];
                           ParamGrad& pg = g[offsets[l]];
                           pg.weight.noalias() += pre_bar * input.transpose();
                           pg.bias += pre_bar;
                           adj = d.weight.transpose() * pre_bar;
                       },
                       [&](const PoolingLayer& p) {
                           Vector next = Vector::Zero(static_cast<Eigen::Index>(p.input_dim));
                           for (std::size_t i = 0; i < p.regions.size(); ++i) {
                               const double a = adj[static_cast<Eigen::Index>(i)];
                               if (p.kind == PoolKind::average) {
                                   const double w = 1.0 / static_cast<double>(p.regions[i].size());
                                   for (std::size_t j : p.regions[i]) next[static_cast<Eigen::Index>(j)] += w * a;
                               } else {
                                   next[static_cast<Eigen::Index>(t.selection[i])] += a;
                               }
                           }
                           adj = std::move(next);
                       },
                       [&](const ResidualBlock& r) {
                           Vector h = adj;
                           for (std::size_t k = r.inner.size(); k-- > 0;) {
                               const DenseLayer& d = r.inner[k];
                               const Vector pre_bar =
                                   (h.array() * derivs(d.activation, t.inner[k].preactivation).array()).matrix() +
                                   extra_inner[l][k];
                               ParamGrad& pg = g[offsets[l] + k];
                               pg.weight.noalias() += pre_bar * t.inner_activations[k].transpose();
                               pg.bias += pre_bar;
                               h = d.weight.transpose() * pre_bar;
                           }
                           adj += h;
                       },
                   },
                   layers[l]);
    }
    return out;
}

void add_into(Gradients& acc, const Gradients& g) {
    for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i].weight += g[i].weight;
        acc[i].bias += g[i].bias;
    }
}

bool uses_jacobian(const RegSpec& reg) {
    return (reg.kind == RegKind::jacobian || reg.kind == RegKind::jacobian_row);
}

double weight_sq_sum(const Network& net) {
    double s = 0.0;
    for (const auto& p : net.parameters()) s += p.weight->squaredNorm();
    return s;
}

// Switching pattern plus the hinge active set; grad_check skips coordinates
// that change it.
void pattern_of(const Network& net, const ForwardTrace& tr, const LossSpec& loss, std::size_t label,
                std::vector<std::int64_t>& out) {
    const auto p = switching_pattern(net, tr);
    out.insert(out.end(), p.begin(), p.end());
    if (loss.kind != LossKind::hinge) return;
    const Vector& z = tr.layers.back().preactivation;
    const auto y = static_cast<Eigen::Index>(label);
    for (Eigen::Index j = 0; j < z.size(); ++j) out.push_back(j != y && loss.hinge_margin - (z[y] - z[j]) > 0.0);
}

std::vector<std::int64_t> batch_pattern(const Network& net, std::span<const Sample> batch, const LossSpec& loss) {
    std::vector<std::int64_t> out;
    for (const auto& s : batch) pattern_of(net, forward(net, s.x), loss, s.label, out);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void RegSpec::validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw InvalidInput("regularizer: lambda must be finite and >= 0");
    if (kind == RegKind::jacobian_row && rows_per_sample < 1)
        throw InvalidInput("regularizer: rows_per_sample must be at least 1");
}

std::string to_string(LossKind k) { return k == LossKind::cross_entropy ? "cross_entropy" : "hinge"; }

std::string to_string(RegKind k) {
    switch (k) {
        case RegKind::none: return "none";
        case RegKind::weight_decay: return "wd";
        case RegKind::jacobian: return "jac";
        case RegKind::jacobian_row: return "jac-row";
    }
    return "?";
}

LossKind parse_loss_kind(const std::string& s) {
    if (s == "cross_entropy" || s == "cce" || s == "ce") return LossKind::cross_entropy;
    if (s == "hinge") return LossKind::hinge;
    throw InvalidInput("unknown loss '" + s + "'");
}

RegKind parse_reg_kind(const std::string& s) {
    if (s == "none") return RegKind::none;
    if (s == "wd" || s == "weight_decay") return RegKind::weight_decay;
    if (s == "jac" || s == "jacobian") return RegKind::jacobian;
    if (s == "jac-row" || s == "jacobian_row") return RegKind::jacobian_row;
    throw InvalidInput("unknown regularizer '" + s + "' (expected none|wd|jac|jac-row)");
}

Gradients zero_gradients(const Network& net) {
    Gradients g;
    for (const auto& p : net.parameters())
        g.push_back({Matrix::Zero(p.weight->rows(), p.weight->cols()), Vector::Zero(p.bias->size())});
    return g;
}

double gradient_norm(const Gradients& g) {
    double s = 0.0;
    for (const auto& p : g) s += p.weight.squaredNorm() + p.bias.squaredNorm();
    return std::sqrt(s);
}

RowSelection draw_rows(std::size_t batch_size, std::size_t num_classes, std::size_t rows_per_sample,
                       std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, num_classes - 1);
    RowSelection sel(batch_size);
    for (auto& r : sel) {
        r.resize(rows_per_sample);
        for (auto& v : r) v = pick(rng);
    }
    return sel;
}

RowSelection all_rows(std::size_t batch_size, std::size_t num_classes) {
    std::vector<std::size_t> every(num_classes);
    std::iota(every.begin(), every.end(), std::size_t{0});
    return RowSelection(batch_size, every);
}

double loss_value(const Network& net, std::span<const Sample> batch, const LossSpec& loss) {
    check_loss_head(net, loss);
    if (batch.empty()) throw InvalidInput("loss_value: empty batch");
    double total = 0.0;
    for (const auto& s : batch) {
        check_label(net, s);
        total += sample_loss(loss, forward(net, s.x).layers.back().preactivation, s.label, nullptr);
    }
    return total / static_cast<double>(batch.size());
}

double jacobian_penalty(const Network& net, std::span<const Sample> batch) {
    if (batch.empty()) throw InvalidInput("jacobian_penalty: empty batch");
    double total = 0.0;
    for (const auto& s : batch) total += network_jacobian(net, s.x).squaredNorm();
    return total / static_cast<double>(batch.size());
}

double sampled_row_penalty(const Network& net, std::span<const Sample> batch, const RowSelection& rows) {
    if (batch.empty()) throw InvalidInput("sampled_row_penalty: empty batch");
    if (rows.size() != batch.size()) throw InvalidInput("sampled_row_penalty: one row list per sample required");
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (rows[i].empty()) throw InvalidInput("sampled_row_penalty: empty row list");
        const Matrix j = network_jacobian(net, batch[i].x);
        double s = 0.0;
        for (std::size_t r : rows[i]) s += j.row(static_cast<Eigen::Index>(r)).squaredNorm();
        total += s / static_cast<double>(rows[i].size());
    }
    return total / static_cast<double>(batch.size());
}

ObjectiveValue objective(const Network& net, std::span<const Sample> batch, const LossSpec& loss,
                         const RegSpec& reg, const RowSelection* rows) {
    reg.validate();
    ObjectiveValue v;
    v.loss = loss_value(net, batch, loss);
    switch (reg.kind) {
        case RegKind::none: break;
        case RegKind::weight_decay: v.penalty = weight_sq_sum(net); break;
        case RegKind::jacobian: v.penalty = jacobian_penalty(net, batch); break;
        case RegKind::jacobian_row:
            if (rows == nullptr) throw InvalidInput("objective: sampled-row penalty needs a row selection");
            v.penalty = sampled_row_penalty(net, batch, *rows);
            break;
    }
    v.total = v.loss + reg.lambda * v.penalty;
    return v;
}

Gradients gradients(const Network& net, std::span<const Sample> batch, const LossSpec& loss, const RegSpec& reg,
                    const RowSelection* rows, ObjectiveValue* value, std::size_t jobs) {
    reg.validate();
    check_loss_head(net, loss);
    if (batch.empty()) throw InvalidInput("gradients: empty batch");
    if (reg.kind == RegKind::jacobian_row && (rows == nullptr || rows->size() != batch.size()))
        throw InvalidInput("gradients: sampled-row penalty needs one row list per sample");
    for (const auto& s : batch) check_label(net, s);

    const auto offsets = parameter_offsets(net);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const std::size_t ny = net.num_classes();
    const Matrix identity = Matrix::Identity(static_cast<Eigen::Index>(ny), static_cast<Eigen::Index>(ny));
    const bool jac = uses_jacobian(reg) && reg.lambda != 0.0;

    const std::size_t blocks = (batch.size() + kBlock - 1) / kBlock;
    std::vector<Gradients> partial(blocks);
    std::vector<double> block_loss(blocks, 0.0), block_pen(blocks, 0.0);
    parallel_for(blocks, jobs, [&](std::size_t b) {
        Gradients g = zero_gradients(net);
        const std::size_t end = std::min(batch.size(), (b + 1) * kBlock);
        for (std::size_t i = b * kBlock; i < end; ++i) {
            Matrix seed_rows;
            const Matrix* seed = nullptr;
            double pen_scale = 0.0;
            if (jac && reg.kind == RegKind::jacobian) {
                seed = &identity;
                pen_scale = reg.lambda * inv_b;
            } else if (jac) {
                seed_rows = selection_seed((*rows)[i], ny);
                seed = &seed_rows;
                pen_scale = reg.lambda * inv_b / static_cast<double>((*rows)[i].size());
            }
            const SampleTerms t = accumulate_sample(net, offsets, batch[i], loss, inv_b, seed, pen_scale, g);
            block_loss[b] += t.loss;
            if (seed != nullptr) block_pen[b] += t.penalty * pen_scale / reg.lambda;
        }
        partial[b] = std::move(g);
    });

    Gradients total = std::move(partial[0]);
    for (std::size_t b = 1; b < blocks; ++b) add_into(total, partial[b]);

    double loss_sum = 0.0, pen = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
        loss_sum += block_loss[b];
        pen += block_pen[b];
    }
    if (reg.kind == RegKind::weight_decay) {
        const auto params = net.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) total[i].weight += (2.0 * reg.lambda) * *params[i].weight;
        pen = weight_sq_sum(net);
    }
    if (value != nullptr) {
        value->loss = loss_sum * inv_b;
        if (uses_jacobian(reg) && reg.lambda == 0.0)
            pen = reg.kind == RegKind::jacobian ? jacobian_penalty(net, batch) : sampled_row_penalty(net, batch, *rows);
        value->penalty = pen;
        value->total = value->loss + reg.lambda * pen;
    }
    return total;
}

// ---------------------------------------------------------------------------

OptimizerState make_optimizer_state(const Network& net) { return {zero_gradients(net), 0}; }

void sgd_step(OptimizerState& state, Network& net, const Gradients& grads, double rate, double momentum) {
    auto params = net.parameters();
    if (state.velocity.size() != params.size() || grads.size() != params.size())
        throw InvalidInput("sgd_step: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& v = state.velocity[i];
        const auto& g = grads[i];
        if (v.weight.rows() != params[i].weight->rows() || v.weight.cols() != params[i].weight->cols() ||
            g.weight.rows() != v.weight.rows() || g.weight.cols() != v.weight.cols() ||
            v.bias.size() != params[i].bias->size() || g.bias.size() != v.bias.size())
            throw InvalidInput("sgd_step: shape mismatch at parameter " + std::to_string(i));
        v.weight = momentum * v.weight - rate * g.weight;
        v.bias = momentum * v.bias - rate * g.bias;
        *params[i].weight += v.weight;
        *params[i].bias += v.bias;
    }
    ++state.steps;
}

Schedule step_schedule(double rate, double factor, std::size_t every, std::size_t total) {
    if (every == 0 || !(factor > 0.0)) throw InvalidInput("step_schedule: invalid parameters");
    Schedule s;
    for (std::size_t start = 0; start < total; start += every) {
        s.push_back({rate, std::min(every, total - start)});
        rate /= factor;
    }
    if (s.empty()) s.push_back({rate, 0});
    s.back().epochs = 0;
    return s;
}

double rate_at(const Schedule& schedule, std::size_t epoch) {
    if (schedule.empty()) throw InvalidInput("empty learning-rate schedule");
    std::size_t start = 0;
    for (const auto& st : schedule) {
        if (st.epochs == 0 || epoch < start + st.epochs) return st.rate;
        start += st.epochs;
    }
    return schedule.back().rate;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidInput("train: batch_size must be at least 1");
    if (epochs < 1) throw InvalidInput("train: epochs must be at least 1");
    if (schedule.empty()) throw InvalidInput("train: empty schedule");
    for (const auto& s : schedule)
        if (!(s.rate > 0.0) || !std::isfinite(s.rate)) throw InvalidInput("train: learning rates must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("train: momentum must lie in [0, 1)");
    if (clip_norm < 0.0) throw InvalidInput("train: clip_norm must be >= 0");
    reg.validate();
}

double accuracy(const Network& net, const Dataset& data, std::size_t jobs) {
    if (data.empty()) throw InvalidInput("accuracy: empty dataset");
    std::vector<char> hit(data.size());
    parallel_for(data.size(), jobs, [&](std::size_t i) {
        hit[i] = classify(net, data.samples[i].x) == data.samples[i].label;
    });
    return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(data.size());
}

JacobianStats jacobian_stats(const Network& net, const Dataset& data, std::size_t jobs) {
    if (data.empty()) throw InvalidInput("jacobian_stats: empty dataset");
    JacobianStats st;
    st.frob.resize(data.size());
    st.spec.resize(data.size());
    parallel_for(data.size(), jobs, [&](std::size_t i) {
        const Matrix j = network_jacobian(net, data.samples[i].x);
        st.frob[i] = frobenius_norm(j);
        st.spec[i] = spectral_norm(j, {1e-10, 2000, 0x5eed});
    });
    st.mean_frob = std::accumulate(st.frob.begin(), st.frob.end(), 0.0) / static_cast<double>(data.size());
    st.max_spec = *std::max_element(st.spec.begin(), st.spec.end());
    return st;
}

TrainResult train(Network net, const Dataset& train_set, const Dataset* test, const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) throw InvalidInput("train: empty dataset");
    if (train_set.input_dim != net.input_dim())
        throw InvalidInput("train: dataset dimension does not match the network input");
    check_loss_head(net, config.loss);

    std::mt19937_64 rng(config.seed);
    if (config.weight_norm) weight_normalize_in_place(net);
    OptimizerState state = make_optimizer_state(net);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    std::vector<Sample> batch;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = rate_at(config.schedule, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_set.samples[order[i]]);
            RowSelection rows;
            if (config.reg.kind == RegKind::jacobian_row)
                rows = draw_rows(batch.size(), net.num_classes(), config.reg.rows_per_sample, rng);
            Gradients g = gradients(net, batch, config.loss, config.reg, rows.empty() ? nullptr : &rows, nullptr,
                                    config.jobs);
            if (config.clip_norm > 0.0) {
                const double n = gradient_norm(g);
                if (n > config.clip_norm) {
                    const double s = config.clip_norm / n;
                    for (auto& p : g) {
                        p.weight *= s;
                        p.bias *= s;
                    }
                }
            }
            sgd_step(state, net, g, lr, config.momentum);
            if (config.weight_norm) weight_normalize_in_place(net);
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = lr;
        rec.train_loss = loss_value(net, train_set.samples, config.loss);
        if (!std::isfinite(rec.train_loss)) throw std::runtime_error("train: loss diverged at epoch " + std::to_string(epoch + 1));
        rec.train_acc = accuracy(net, train_set, config.jobs);
        if (test != nullptr && !test->empty()) rec.test_acc = accuracy(net, *test, config.jobs);
        if (config.track_jacobian) {
            const JacobianStats js = jacobian_stats(net, train_set, config.jobs);
            rec.mean_jac_frob = js.mean_frob;
            rec.max_jac_spec = js.max_spec;
        }
        result.history.push_back(rec);
    }
    result.net = std::move(net);
    return result;
}

GradCheckResult grad_check(const Network& net, std::span<const Sample> batch, const LossSpec& loss,
                           const RegSpec& reg, const RowSelection* rows, const GradCheckOptions& opts) {
    if (!(opts.step > 0.0)) throw InvalidInput("grad_check: step must be positive");
    Gradients analytic = gradients(net, batch, loss, reg, rows);
    if (opts.tamper) opts.tamper(analytic);

    // Flat coordinate list (parameter, is_bias, row, col).
    struct Coord {
        std::size_t param;
        bool bias;
        Eigen::Index r, c;
    };
    std::vector<Coord> all;
    const auto params = net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (Eigen::Index c = 0; c < params[p].weight->cols(); ++c)
            for (Eigen::Index r = 0; r < params[p].weight->rows(); ++r) all.push_back({p, false, r, c});
        for (Eigen::Index r = 0; r < params[p].bias->size(); ++r) all.push_back({p, true, r, 0});
    }
    std::mt19937_64 rng(opts.seed);
    std::shuffle(all.begin(), all.end(), rng);
    if (all.size() > opts.coordinates) all.resize(opts.coordinates);

    const auto base_pattern = batch_pattern(net, batch, loss);
    GradCheckResult res;
    Network probe = net;
    for (const Coord& co : all) {
        auto pp = probe.parameters()[co.param];
        double& slot = co.bias ? (*pp.bias)[co.r] : (*pp.weight)(co.r, co.c);
        const double orig = slot;
        slot = orig + opts.step;
        const bool plus_same = batch_pattern(probe, batch, loss) == base_pattern;
        const double fp = objective(probe, batch, loss, reg, rows).total;
        slot = orig - opts.step;
        const bool minus_same = batch_pattern(probe, batch, loss) == base_pattern;
        const double fm = objective(probe, batch, loss, reg, rows).total;
        slot = orig;
        if (!plus_same || !minus_same) {
            ++res.skipped;
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * opts.step);
        const auto& ga = analytic[co.param];
        const double a = co.bias ? ga.bias[co.r] : ga.weight(co.r, co.c);
        const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
        res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / denom);
        ++res.checked;
    }
    return res;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << "epoch,lr,train_loss,train_acc,test_acc,mean_jac_frob,max_jac_spec\n";
    out << std::setprecision(17);
    for (const auto& r : history)
        out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.train_acc << ',' << r.test_acc << ','
            << r.mean_jac_frob << ',' << r.max_jac_spec << '\n';
}

}  // namespace marginlab
