#include "dcls/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>

#include "dcls/conv.hpp"
#include "dcls/random.hpp"

namespace dcls {

Tensor init_positions(const KernelSpec& spec, InitDist dist, std::uint64_t seed) {
    spec.validate();
    Tensor positions(spec.position_shape(), 0.0);
    Rng rng(seed);
    const std::size_t per_axis = spec.channel_slices() * static_cast<std::size_t>(spec.kernel_count);
    for (int d = 0; d < spec.ndims; ++d) {
        double* axis = positions.data() + static_cast<std::size_t>(d) * per_axis;
        for (std::size_t i = 0; i < per_axis; ++i) {
            axis[i] = dist == InitDist::normal ? rng.normal(0.0, 0.5)
                                               : rng.uniform(spec.lower_bound(d), spec.upper_bound(d));
        }
    }
    clamp_positions(positions, spec);
    return positions;
}

std::size_t clamp_positions(Tensor& positions, const KernelSpec& spec) {
    if (positions.shape() != spec.position_shape()) {
        throw std::invalid_argument("position tensor shape " + shape_string(positions.shape()) +
                                    " does not match spec " + shape_string(spec.position_shape()));
    }
    const std::size_t per_axis = positions.size() / static_cast<std::size_t>(spec.ndims);
    std::size_t clamped = 0;
    for (int d = 0; d < spec.ndims; ++d) {
        const double lo = spec.lower_bound(d);
        const double hi = spec.upper_bound(d);
        double* axis = positions.data() + static_cast<std::size_t>(d) * per_axis;
        for (std::size_t i = 0; i < per_axis; ++i) {
            const double v = std::clamp(axis[i], lo, hi);
            if (v != axis[i]) {
                axis[i] = v;
                ++clamped;
            }
        }
    }
    return clamped;
}

std::vector<ParamGroup> make_param_groups(const std::vector<Parameter>& params,
                                          const GroupDefaults& defaults) {
    ParamGroup weights;
    weights.kind = ParamKind::weights;
    weights.lr_multiplier = defaults.weights_lr_multiplier;
    weights.weight_decay = defaults.weights_decay;
    ParamGroup positions;
    positions.kind = ParamKind::positions;
    positions.lr_multiplier = defaults.positions_lr_multiplier;
    positions.weight_decay = defaults.positions_decay;

    for (const Parameter& p : params) {
        if (!p.kind.has_value()) {
            throw std::invalid_argument("parameter '" + p.name +
                                        "' is not classified as weights or positions");
        }
        (*p.kind == ParamKind::weights ? weights : positions).members.push_back(p);
    }
    return {std::move(weights), std::move(positions)};
}

SgdOptimizer::SgdOptimizer(std::vector<ParamGroup> groups, double momentum)
    : groups_(std::move(groups)), momentum_(momentum) {
    if (momentum_ < 0.0 || momentum_ >= 1.0) {
        throw std::invalid_argument("momentum must lie in [0, 1)");
    }
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        if (groups_[g].weight_decay < 0.0) {
            throw std::invalid_argument("weight decay must be >= 0");
        }
        for (std::size_t m = 0; m < groups_[g].members.size(); ++m) {
            const Parameter& p = groups_[g].members[m];
            if (p.value == nullptr) {
                throw std::invalid_argument("parameter '" + p.name + "' has no storage");
            }
            order_.emplace_back(g, m);
            velocity_.emplace_back(p.value->shape(), 0.0);
            last_update_.emplace_back(p.value->shape(), 0.0);
        }
    }
}

void SgdOptimizer::step(const std::vector<const Tensor*>& grads, double lr) {
    if (grads.size() != order_.size()) {
        throw std::invalid_argument("got " + std::to_string(grads.size()) + " gradients for " +
                                    std::to_string(order_.size()) + " parameters");
    }
    for (std::size_t i = 0; i < order_.size(); ++i) {
        const auto [g, m] = order_[i];
        const ParamGroup& group = groups_[g];
        Tensor& param = *group.members[m].value;
        const Tensor& grad = *grads[i];
        if (!param.same_shape(grad)) {
            throw std::invalid_argument("gradient shape " + shape_string(grad.shape()) +
                                        " does not match parameter '" + group.members[m].name +
                                        "' " + shape_string(param.shape()));
        }
        const double lr_g = lr * group.lr_multiplier;
        Tensor& v = velocity_[i];
        Tensor& upd = last_update_[i];
        for (std::size_t j = 0; j < param.size(); ++j) {
            v[j] = momentum_ * v[j] + grad[j];
            // decoupled decay: the decay term never enters the momentum buffer
            upd[j] = lr_g * v[j] + lr_g * group.weight_decay * param[j];
            param[j] -= upd[j];
        }
    }
}

double scheduled_lr(std::size_t step, std::size_t total_steps, double base_lr,
                    std::size_t warmup_steps) {
    if (total_steps == 0) throw std::invalid_argument("schedule needs at least one step");
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps + 1) return base_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - 1 - warmup_steps);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

SyncGroup::SyncGroup(std::vector<std::size_t> member_layers, Tensor shared_positions)
    : members_(std::move(member_layers)),
      shared_(std::move(shared_positions)),
      grad_(shared_.shape(), 0.0),
      reported_(members_.size(), false) {
    if (members_.empty()) throw std::invalid_argument("sync group needs at least one member");
}

void SyncGroup::zero_grad() {
    grad_.fill(0.0);
    std::fill(reported_.begin(), reported_.end(), false);
}

void SyncGroup::accumulate(std::size_t layer_index, const Tensor& grad) {
    const auto it = std::find(members_.begin(), members_.end(), layer_index);
    if (it == members_.end()) {
        throw std::invalid_argument("layer " + std::to_string(layer_index) +
                                    " is not a member of this sync group");
    }
    const std::size_t slot = static_cast<std::size_t>(it - members_.begin());
    if (reported_[slot]) {
        throw std::logic_error("layer " + std::to_string(layer_index) +
                               " already accumulated a gradient this step");
    }
    if (!grad_.same_shape(grad)) {
        throw std::invalid_argument("sync gradient shape " + shape_string(grad.shape()) +
                                    " does not match shared positions " +
                                    shape_string(grad_.shape()));
    }
    for (std::size_t i = 0; i < grad_.size(); ++i) grad_[i] += grad[i];
    reported_[slot] = true;
}

const Tensor& SyncGroup::reduced_grad() const {
    for (std::size_t i = 0; i < reported_.size(); ++i) {
        if (!reported_[i]) {
            throw std::logic_error("sync group member layer " + std::to_string(members_[i]) +
                                   " has not reported a gradient this step");
        }
    }
    return grad_;
}

void SyncGroup::broadcast(Model& model) const {
    for (std::size_t idx : members_) {
        if (idx >= model.layers.size()) {
            throw std::invalid_argument("sync group member layer " + std::to_string(idx) +
                                        " does not exist in the model");
        }
        if (!model.layers[idx].positions.same_shape(shared_)) {
            throw std::invalid_argument("layer " + std::to_string(idx) +
                                        " positions do not match the shared tensor shape");
        }
        model.layers[idx].positions = shared_;
    }
}

namespace {

void check_repulsive_args(const Tensor& positions, const KernelSpec& spec, double radius) {
    if (radius <= 0.0) throw std::invalid_argument("repulsive radius must be > 0");
    if (positions.shape() != spec.position_shape()) {
        throw std::invalid_argument("position tensor shape " + shape_string(positions.shape()) +
                                    " does not match spec " + shape_string(spec.position_shape()));
    }
}

}  // namespace

double repulsive_loss(const Tensor& positions, const KernelSpec& spec, double radius) {
    check_repulsive_args(positions, spec, radius);
    const std::size_t slices = spec.channel_slices();
    const std::size_t m = static_cast<std::size_t>(spec.kernel_count);
    const std::size_t per_axis = slices * m;
    double total = 0.0;
    for (std::size_t s = 0; s < slices; ++s) {
        for (std::size_t k = 0; k + 1 < m; ++k) {
            for (std::size_t l = k + 1; l < m; ++l) {
                double d2 = 0.0;
                for (int d = 0; d < spec.ndims; ++d) {
                    const double diff = positions[static_cast<std::size_t>(d) * per_axis + s * m + k] -
                                        positions[static_cast<std::size_t>(d) * per_axis + s * m + l];
                    d2 += diff * diff;
                }
                const double h = 1.0 - std::sqrt(d2) / radius;
                if (h > 0.0) total += h * h;
            }
        }
    }
    return total / static_cast<double>(slices);
}

Tensor repulsive_loss_grad(const Tensor& positions, const KernelSpec& spec, double radius) {
    check_repulsive_args(positions, spec, radius);
    const std::size_t slices = spec.channel_slices();
    const std::size_t m = static_cast<std::size_t>(spec.kernel_count);
    const std::size_t per_axis = slices * m;
    Tensor grad(positions.shape(), 0.0);
    const double inv_slices = 1.0 / static_cast<double>(slices);
    for (std::size_t s = 0; s < slices; ++s) {
        for (std::size_t k = 0; k + 1 < m; ++k) {
            for (std::size_t l = k + 1; l < m; ++l) {
                double d2 = 0.0;
                for (int d = 0; d < spec.ndims; ++d) {
                    const double diff = positions[static_cast<std::size_t>(d) * per_axis + s * m + k] -
                                        positions[static_cast<std::size_t>(d) * per_axis + s * m + l];
                    d2 += diff * diff;
                }
                const double dist = std::sqrt(d2);
                const double h = 1.0 - dist / radius;
                // coincident points have no defined direction; give them zero
                if (h <= 0.0 || dist == 0.0) continue;
                const double scale = -2.0 * h / (radius * dist) * inv_slices;
                for (int d = 0; d < spec.ndims; ++d) {
                    const std::size_t ik = static_cast<std::size_t>(d) * per_axis + s * m + k;
                    const std::size_t il = static_cast<std::size_t>(d) * per_axis + s * m + l;
                    const double diff = positions[ik] - positions[il];
                    grad[ik] += scale * diff;
                    grad[il] -= scale * diff;
                }
            }
        }
    }
    return grad;
}

std::vector<std::size_t> match_taps(const std::vector<std::array<double, kMaxDims>>& learned,
                                    const std::vector<TeacherTap>& truth, std::size_t ndims) {
    const std::size_t m = learned.size();
    if (truth.size() != m) {
        throw std::invalid_argument("matching needs equally many learned and true taps");
    }
    if (m == 0) return {};
    if (m > 20) throw std::invalid_argument("matching supports at most 20 taps");

    std::vector<double> cost(m * m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t t = 0; t < m; ++t) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < ndims; ++d) {
                const double diff = learned[k][d] - truth[t].offset[d];
                d2 += diff * diff;
            }
            cost[k * m + t] = std::sqrt(d2);
        }
    }

    // assignment by subset dynamic programming: dp[mask] is the cheapest way
    // to assign learned taps 0..popcount(mask)-1 to the truth taps in mask
    const std::size_t full = (std::size_t{1} << m) - 1;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dp(full + 1, inf);
    std::vector<int> parent(full + 1, -1);
    dp[0] = 0.0;
    for (std::size_t mask = 0; mask <= full; ++mask) {
        if (dp[mask] == inf) continue;
        const std::size_t k = static_cast<std::size_t>(std::popcount(mask));
        if (k == m) continue;
        for (std::size_t t = 0; t < m; ++t) {
            if (mask & (std::size_t{1} << t)) continue;
            const std::size_t next = mask | (std::size_t{1} << t);
            const double c = dp[mask] + cost[k * m + t];
            if (c < dp[next]) {
                dp[next] = c;
                parent[next] = static_cast<int>(t);
            }
        }
    }
    std::vector<std::size_t> assign(m, 0);
    std::size_t mask = full;
    for (std::size_t k = m; k-- > 0;) {
        const std::size_t t = static_cast<std::size_t>(parent[mask]);
        assign[k] = t;
        mask ^= std::size_t{1} << t;
    }
    return assign;
}

void TrainConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (base_lr <= 0.0) throw std::invalid_argument("base learning rate must be > 0");
    if (warmup_steps < 0) throw std::invalid_argument("warmup steps must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
    if (position_lr_multiplier <= 0.0) {
        throw std::invalid_argument("position learning rate multiplier must be > 0");
    }
    if (lambda_rep < 0.0) throw std::invalid_argument("repulsive coefficient must be >= 0");
    if (repulsive_radius <= 0.0) throw std::invalid_argument("repulsive radius must be > 0");
    if (channels < 1) throw std::invalid_argument("channels must be >= 1");
    if (kernel_count < 1) throw std::invalid_argument("kernel count must be >= 1");
    if (dilated_size.size() != 2) throw std::invalid_argument("the toy problem is 2-d");
    for (int s : dilated_size) {
        if (s < 1) throw std::invalid_argument("dilated size must be >= 1 on every axis");
    }
    if (map < dilated_size[0] || map < dilated_size[1]) {
        throw std::invalid_argument("map size must cover the dilated window");
    }
    if (snapshot_every < 1) throw std::invalid_argument("snapshot interval must be >= 1");
    if (!teacher.empty() && teacher.size() != static_cast<std::size_t>(kernel_count)) {
        throw std::invalid_argument("teacher must have exactly kernel_count taps");
    }
}

namespace {

std::vector<TeacherTap> default_teacher(const TrainConfig& cfg, const KernelSpec& spec) {
    if (!cfg.teacher.empty()) return cfg.teacher;
    if (cfg.kernel_count == 3) {
        return {TeacherTap{{-3.0, 2.0}, 1.0}, TeacherTap{{0.0, 0.0}, -0.5},
                TeacherTap{{4.0, -4.0}, 0.7}};
    }
    // draw distinct integer cells for other tap counts
    Rng rng(cfg.seed + 0x7EAC);
    std::set<std::pair<int, int>> used;
    std::vector<TeacherTap> taps;
    while (taps.size() < static_cast<std::size_t>(cfg.kernel_count)) {
        const int y = static_cast<int>(spec.lower_bound(0)) +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.dilated_size[0])));
        const int x = static_cast<int>(spec.lower_bound(1)) +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.dilated_size[1])));
        if (!used.insert({y, x}).second) continue;
        double w = rng.uniform(0.4, 1.2);
        if (rng.uniform() < 0.5) w = -w;
        taps.push_back(TeacherTap{{static_cast<double>(y), static_cast<double>(x)}, w});
    }
    return taps;
}

/// Depthwise layer whose taps are pinned to the given offsets on every channel.
DclsLayer taps_to_layer(const std::vector<TeacherTap>& taps, const KernelSpec& spec,
                        const ConvConfig& cc) {
    DclsLayer layer = make_layer(spec, cc);
    const std::size_t m = static_cast<std::size_t>(spec.kernel_count);
    const std::size_t per_axis = spec.channel_slices() * m;
    for (std::size_t slice = 0; slice < spec.channel_slices(); ++slice) {
        for (std::size_t k = 0; k < m; ++k) {
            layer.weights[slice * m + k] = taps[k].weight;
            for (int d = 0; d < spec.ndims; ++d) {
                layer.positions[static_cast<std::size_t>(d) * per_axis + slice * m + k] =
                    taps[k].offset[static_cast<std::size_t>(d)];
            }
        }
    }
    return layer;
}

/// Gaussian blur kernel, one copy per channel (depthwise). Normalized to
/// unit L2 norm, not unit sum: smoothing white noise with it then preserves
/// variance, so the smooth component's strength is set by its gain alone and
/// the inter-cell correlation keeps enough energy to pull positions across
/// the whole window.
Tensor blur_kernel(int channels, int extent, double sigma) {
    Tensor k({static_cast<std::size_t>(channels), 1, static_cast<std::size_t>(extent),
              static_cast<std::size_t>(extent)},
             0.0);
    const int half = extent / 2;
    double norm = 0.0;
    std::vector<double> cell(static_cast<std::size_t>(extent) * extent);
    for (int y = 0; y < extent; ++y) {
        for (int x = 0; x < extent; ++x) {
            const double dy = y - half, dx = x - half;
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            cell[static_cast<std::size_t>(y) * extent + x] = v;
            norm += v * v;
        }
    }
    norm = std::sqrt(norm);
    for (double& v : cell) v /= norm;
    for (int c = 0; c < channels; ++c) {
        std::copy(cell.begin(), cell.end(),
                  k.data() + static_cast<std::size_t>(c) * cell.size());
    }
    return k;
}

/// White noise plus amplified blurred noise: the smooth component gives the
/// position gradients long reach, the white component keeps the optimum of
/// the expected loss unique at exact teacher recovery. The rough field is
/// drawn on an enlarged canvas and blurred without padding so the smooth
/// component is statistically identical at every cell of the batch;
/// zero-padded blurring would dim the borders and give elements a spurious
/// outward drift (moving toward quieter cells lowers their self-energy).
Tensor make_batch(Rng& rng, int batch, int channels, int map, const Tensor& blur,
                  double smooth_gain) {
    const int blur_extent = static_cast<int>(blur.extent(2));
    const int canvas = map + blur_extent - 1;
    const std::vector<std::size_t> shape = {static_cast<std::size_t>(batch),
                                            static_cast<std::size_t>(channels),
                                            static_cast<std::size_t>(map),
                                            static_cast<std::size_t>(map)};
    Tensor white(shape, 0.0);
    Tensor rough({static_cast<std::size_t>(batch), static_cast<std::size_t>(channels),
                  static_cast<std::size_t>(canvas), static_cast<std::size_t>(canvas)},
                 0.0);
    for (std::size_t i = 0; i < white.size(); ++i) white[i] = rng.normal();
    for (std::size_t i = 0; i < rough.size(); ++i) rough[i] = rng.normal();
    ConvConfig blur_cfg;
    blur_cfg.groups = channels;
    Tensor smooth = conv_direct(rough, blur, blur_cfg);
    for (std::size_t i = 0; i < white.size(); ++i) white[i] += smooth_gain * smooth[i];
    return white;
}

/// Data-distribution schedule, a coarse-to-fine continuation. Early batches
/// are dominated by a wide smooth field so far-off elements feel a pull
/// toward the teacher taps; the field then narrows (better discrimination
/// between nearby taps: a wide Gaussian well is flat at the bottom, and a
/// heavy distant tap can out-pull a light close one) and fades, leaving the
/// white component to pin each element to its exact offset.
double anneal_cosine(double start, double end, int step, int total_steps) {
    // the anneal completes at 3/4 of the run and holds, leaving a final
    // stretch where late-arriving elements see a stable field while the
    // learning rate is still healthy
    const int horizon = std::max(1, (3 * total_steps) / 4);
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
    return end + (start - end) * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846));
}

double smooth_gain_at(int step, int total_steps) {
    return anneal_cosine(3.0, 0.5, step, total_steps);
}

double blur_sigma_at(int step, int total_steps) {
    return anneal_cosine(3.0, 1.0, step, total_steps);
}

constexpr int kBlurExtent = 13;

double mse_and_upstream(const Tensor& predicted, const Tensor& target, Tensor& upstream) {
    double acc = 0.0;
    const double inv = 1.0 / static_cast<double>(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double r = predicted[i] - target[i];
        acc += r * r;
        upstream[i] = 2.0 * r * inv;
    }
    return acc * inv;
}

struct RecoveryError {
    double max_position = 0.0;
    double max_weight_rel = 0.0;
};

RecoveryError recovery_errors(const DclsLayer& student, const std::vector<TeacherTap>& taps) {
    const KernelSpec& spec = student.spec;
    const std::size_t m = static_cast<std::size_t>(spec.kernel_count);
    const std::size_t per_axis = spec.channel_slices() * m;
    RecoveryError err;
    for (std::size_t slice = 0; slice < spec.channel_slices(); ++slice) {
        std::vector<std::array<double, kMaxDims>> learned(m);
        for (std::size_t k = 0; k < m; ++k) {
            for (int d = 0; d < spec.ndims; ++d) {
                learned[k][static_cast<std::size_t>(d)] =
                    student.positions[static_cast<std::size_t>(d) * per_axis + slice * m + k];
            }
        }
        const std::vector<std::size_t> assign =
            match_taps(learned, taps, static_cast<std::size_t>(spec.ndims));
        for (std::size_t k = 0; k < m; ++k) {
            const TeacherTap& t = taps[assign[k]];
            double d2 = 0.0;
            for (int d = 0; d < spec.ndims; ++d) {
                const double diff = learned[k][static_cast<std::size_t>(d)] -
                                    t.offset[static_cast<std::size_t>(d)];
                d2 += diff * diff;
            }
            err.max_position = std::max(err.max_position, std::sqrt(d2));
            const double w = student.weights[slice * m + k];
            const double rel = std::abs(w - t.weight) / std::max(std::abs(t.weight), 1e-12);
            err.max_weight_rel = std::max(err.max_weight_rel, rel);
        }
    }
    return err;
}

/// Trains only the weights of a layer whose positions stay pinned (the
/// fixed-grid baseline). Shares the data stream logic with the main loop.
double train_frozen_positions(DclsLayer& layer, const TrainConfig& cfg, const Tensor& t_kernel,
                              const ConvConfig& cc,
                              const Tensor& eval_x, const Tensor& eval_y) {
    Rng data_rng(cfg.seed);
    std::vector<ParamGroup> groups(1);
    groups[0].kind = ParamKind::weights;
    groups[0].lr_multiplier = 1.0;
    groups[0].weight_decay = cfg.weight_decay;
    groups[0].members.push_back(Parameter{"baseline.weights", &layer.weights, ParamKind::weights});
    SgdOptimizer opt(std::move(groups), cfg.momentum);

    for (int t = 0; t < cfg.steps; ++t) {
        const Tensor blur =
            blur_kernel(cfg.channels, kBlurExtent, blur_sigma_at(t, cfg.steps));
        Tensor x = make_batch(data_rng, cfg.batch, cfg.channels, cfg.map, blur,
                              smooth_gain_at(t, cfg.steps));
        Tensor y = conv_direct(x, t_kernel, cc);
        auto [pred, ctx] = dcls_conv_forward(x, layer.weights, layer.positions, layer.spec, cc);
        Tensor upstream(pred.shape(), 0.0);
        const double loss = mse_and_upstream(pred, y, upstream);
        if (!std::isfinite(loss)) return loss;
        DclsConvGrads grads = dcls_conv_backward(ctx, upstream);
        const double lr = scheduled_lr(static_cast<std::size_t>(t),
                                       static_cast<std::size_t>(cfg.steps), cfg.base_lr,
                                       static_cast<std::size_t>(cfg.warmup_steps));
        opt.step({&grads.params.d_weights}, lr);
    }
    Tensor pred = dcls_conv_forward(eval_x, layer.weights, layer.positions, layer.spec, cc).first;
    Tensor scratch(pred.shape(), 0.0);
    return mse_and_upstream(pred, eval_y, scratch);
}

/// An element whose weight has collapsed feels almost no data pull (the pull
/// on a position scales with the element's weight), so after losing a contest
/// for a tap it idles at a repulsion equilibrium while some teacher tap goes
/// unclaimed; a light element more than a cell from any tap is likewise
/// trapped, because the variance of its own interpolated spread favors
/// half-integer offsets and cancels the weak long-range pull. Greedy cure in
/// the spirit of matching pursuit: relocate such elements onto the cell where
/// the dense-kernel gradient of the current batch is largest, i.e. the
/// strongest unexplained correlation, skipping cells within reach of an
/// element that is still pulling real weight. The weight itself is left
/// untouched; at the new cell its own gradient revives it within a few steps.
void reseed_dead_elements(const Tensor& weights, Tensor& positions, const Tensor& g_kernel,
                          const KernelSpec& spec) {
    const std::size_t m = static_cast<std::size_t>(spec.kernel_count);
    const std::size_t slices = spec.channel_slices();
    const std::size_t per_axis = slices * m;
    const std::size_t s0 = static_cast<std::size_t>(spec.dilated_size[0]);
    const std::size_t s1 = static_cast<std::size_t>(spec.dilated_size[1]);
    for (std::size_t slice = 0; slice < slices; ++slice) {
        double wmax = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            wmax = std::max(wmax, std::abs(weights[slice * m + k]));
        }
        std::vector<std::pair<double, double>> blockers;  // live or freshly moved
        std::vector<std::size_t> dead;
        for (std::size_t k = 0; k < m; ++k) {
            if (std::abs(weights[slice * m + k]) < 0.25 * wmax) {
                dead.push_back(k);
            } else {
                blockers.emplace_back(positions[0 * per_axis + slice * m + k],
                                      positions[1 * per_axis + slice * m + k]);
            }
        }
        for (std::size_t k : dead) {
            double best = 0.0;
            double by = 0.0;
            double bx = 0.0;
            bool found = false;
            for (std::size_t r = 0; r < s0; ++r) {
                for (std::size_t c = 0; c < s1; ++c) {
                    const double py = static_cast<double>(r) - spec.half_extent(0);
                    const double px = static_cast<double>(c) - spec.half_extent(1);
                    double nearest = std::numeric_limits<double>::infinity();
                    for (const auto& [qy, qx] : blockers) {
                        nearest = std::min(nearest, std::hypot(qy - py, qx - px));
                    }
                    if (nearest < 1.5) continue;
                    const double score = std::abs(g_kernel[(slice * s0 + r) * s1 + c]);
                    if (score > best) {
                        best = score;
                        by = py;
                        bx = px;
                        found = true;
                    }
                }
            }
            if (found) {
                positions[0 * per_axis + slice * m + k] = by;
                positions[1 * per_axis + slice * m + k] = bx;
                blockers.emplace_back(by, bx);
            }
        }
    }
}

}  // namespace

TrainReport train_toy(const TrainConfig& cfg) {
    cfg.validate();

    KernelSpec spec;
    spec.ndims = 2;
    spec.kernel_count = cfg.kernel_count;
    spec.dilated_size = {cfg.dilated_size[0], cfg.dilated_size[1]};
    spec.channels_out = cfg.channels;
    spec.channels_in_per_group = 1;
    spec.groups = cfg.channels;
    spec.validate();

    // valid convolution (no padding): with the stationary batches above this
    // makes the expected loss exactly translation-invariant, so the only
    // stationary points are genuine tap arrangements, not boundary artifacts
    ConvConfig cc;
    cc.stride = {1, 1};
    cc.padding = {0, 0};
    cc.groups = cfg.channels;

    TrainReport report;
    report.teacher = default_teacher(cfg, spec);
    const DclsLayer teacher = taps_to_layer(report.teacher, spec, cc);
    const Tensor t_kernel = construct_forward(teacher.weights, teacher.positions, spec);

    // held-out batch for the final loss figures, disjoint from the data stream
    Rng eval_rng(cfg.seed + 0x9E37);
    const Tensor eval_blur = blur_kernel(cfg.channels, kBlurExtent, 2.0);
    const Tensor eval_x = make_batch(eval_rng, 8, cfg.channels, cfg.map, eval_blur, 1.0);
    const Tensor eval_y = conv_direct(eval_x, t_kernel, cc);

    // the student (and, when syncing, its twin branch)
    Model& student = report.student;
    student.layers.push_back(make_layer(spec, cc));
    if (cfg.sync_pair) student.layers.push_back(make_layer(spec, cc));

    Rng winit(cfg.seed + 0x3C6E);
    for (DclsLayer& layer : student.layers) {
        if (cfg.init_at_teacher) {
            layer.weights = teacher.weights;
            layer.positions = teacher.positions;
        } else {
            for (std::size_t i = 0; i < layer.weights.size(); ++i) {
                layer.weights[i] = winit.normal(0.0, 0.3);
            }
            layer.positions = init_positions(spec, cfg.init, cfg.seed + 0x51ED);
        }
    }

    GroupDefaults gd;
    gd.weights_decay = cfg.weight_decay;
    gd.positions_lr_multiplier = cfg.position_lr_multiplier;

    // with a sync pair, the optimizer steps one shared position tensor; the
    // members' own tensors are refreshed by broadcast after every step
    SyncGroup sync(cfg.sync_pair ? std::vector<std::size_t>{0, 1} : std::vector<std::size_t>{0},
                   student.layers[0].positions);
    std::vector<Parameter> params;
    for (std::size_t i = 0; i < student.layers.size(); ++i) {
        params.push_back(Parameter{"layer" + std::to_string(i) + ".weights",
                                   &student.layers[i].weights, ParamKind::weights});
    }
    params.push_back(Parameter{"shared.positions", &sync.positions(), ParamKind::positions});
    SgdOptimizer opt(make_param_groups(params, gd), cfg.momentum);
    sync.broadcast(student);

    Rng data_rng(cfg.seed);
    Tensor prev_snapshot = sync.positions();
    report.avg_speed.push_back(0.0);  // V(0) = 0 by convention
    report.position_snapshots.push_back(prev_snapshot);

    for (int t = 0; t < cfg.steps; ++t) {
        const Tensor blur =
            blur_kernel(cfg.channels, kBlurExtent, blur_sigma_at(t, cfg.steps));
        Tensor x = make_batch(data_rng, cfg.batch, cfg.channels, cfg.map, blur,
                              smooth_gain_at(t, cfg.steps));
        Tensor y = conv_direct(x, t_kernel, cc);

        // forward all branches; prediction is the branch mean
        std::vector<DclsConvContext> contexts;
        Tensor pred(y.shape(), 0.0);
        for (DclsLayer& layer : student.layers) {
            auto [out, ctx] =
                dcls_conv_forward(x, layer.weights, layer.positions, layer.spec, layer.cfg);
            for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += out[i];
            contexts.push_back(std::move(ctx));
        }
        const double branch_scale = 1.0 / static_cast<double>(student.layers.size());
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] *= branch_scale;

        Tensor upstream(pred.shape(), 0.0);
        double loss = mse_and_upstream(pred, y, upstream);
        if (cfg.lambda_rep > 0.0) {
            loss += cfg.lambda_rep * repulsive_loss(sync.positions(), spec, cfg.repulsive_radius);
        }
        report.loss.push_back(loss);
        if (!std::isfinite(loss)) {
            report.diverged = true;
            break;
        }
        for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] *= branch_scale;

        sync.zero_grad();
        std::vector<Tensor> weight_grads;
        for (std::size_t i = 0; i < student.layers.size(); ++i) {
            DclsConvGrads grads = dcls_conv_backward(contexts[i], upstream);
            // the raw position pull scales with the element's weight, so a
            // low-weight element would crawl; normalizing by |w| gives every
            // element the same travel speed without touching its direction
            const Tensor& w = student.layers[i].weights;
            const std::size_t per_axis = grads.params.d_positions.size() /
                                         static_cast<std::size_t>(spec.ndims);
            for (int d = 0; d < spec.ndims; ++d) {
                for (std::size_t j = 0; j < per_axis; ++j) {
                    grads.params.d_positions[static_cast<std::size_t>(d) * per_axis + j] /=
                        std::abs(w[j]) + 0.05;
                }
            }
            weight_grads.push_back(std::move(grads.params.d_weights));
            sync.accumulate(i, grads.params.d_positions);
        }
        Tensor pos_grad = sync.reduced_grad();
        if (cfg.lambda_rep > 0.0) {
            const Tensor rep = repulsive_loss_grad(sync.positions(), spec, cfg.repulsive_radius);
            for (std::size_t i = 0; i < pos_grad.size(); ++i) {
                pos_grad[i] += cfg.lambda_rep * rep[i];
            }
        }

        std::vector<const Tensor*> grads;
        for (const Tensor& g : weight_grads) grads.push_back(&g);
        grads.push_back(&pos_grad);
        const double lr = scheduled_lr(static_cast<std::size_t>(t),
                                       static_cast<std::size_t>(cfg.steps), cfg.base_lr,
                                       static_cast<std::size_t>(cfg.warmup_steps));
        opt.step(grads, lr);

        report.clamp_counts.push_back(clamp_positions(sync.positions(), spec));
        sync.broadcast(student);

        // periodic revival pass, only while the schedule still has time to
        // re-pin whatever gets moved; cell centers land inside the clamp box
        if (cfg.reseed_every > 0 && (t + 1) % cfg.reseed_every == 0 &&
            t + 1 < (7 * cfg.steps) / 10) {
            const Tensor g_kernel = conv_kernel_adjoint(upstream, x, cc, spec.kernel_shape());
            reseed_dead_elements(student.layers[0].weights, sync.positions(), g_kernel, spec);
            sync.broadcast(student);
        }

        if (cfg.sync_pair) {
            double div = 0.0;
            for (std::size_t i = 0; i < student.layers[0].positions.size(); ++i) {
                div = std::max(div, std::abs(student.layers[0].positions[i] -
                                             student.layers[1].positions[i]));
            }
            report.max_sync_divergence = std::max(report.max_sync_divergence, div);
        }

        if ((t + 1) % cfg.snapshot_every == 0 || t + 1 == cfg.steps) {
            const Tensor& curr = sync.positions();
            double acc = 0.0;
            for (std::size_t i = 0; i < curr.size(); ++i) {
                acc += std::abs(curr[i] - prev_snapshot[i]);
            }
            report.avg_speed.push_back(acc / static_cast<double>(curr.size()));
            report.position_snapshots.push_back(curr);
            prev_snapshot = curr;
        }
    }

    if (!report.diverged) {
        Tensor pred(eval_y.shape(), 0.0);
        for (DclsLayer& layer : student.layers) {
            Tensor out =
                dcls_conv_forward(eval_x, layer.weights, layer.positions, layer.spec, layer.cfg)
                    .first;
            for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += out[i];
        }
        for (std::size_t i = 0; i < pred.size(); ++i) {
            pred[i] /= static_cast<double>(student.layers.size());
        }
        Tensor scratch(pred.shape(), 0.0);
        report.final_loss = mse_and_upstream(pred, eval_y, scratch);

        const RecoveryError err = recovery_errors(student.layers[0], report.teacher);
        report.max_position_error = err.max_position;
        report.max_weight_rel_error = err.max_weight_rel;
    } else {
        report.final_loss = std::numeric_limits<double>::quiet_NaN();
        report.max_position_error = std::numeric_limits<double>::quiet_NaN();
        report.max_weight_rel_error = std::numeric_limits<double>::quiet_NaN();
    }

    if (cfg.train_baseline && !report.diverged) {
        // same element count on a fixed regular grid spanning the window
        // vertically: positions are pinned, only weights train
        std::vector<TeacherTap> grid(static_cast<std::size_t>(cfg.kernel_count));
        const int s0 = cfg.dilated_size[0];
        const int mcount = cfg.kernel_count;
        const int spacing = mcount > 1 ? std::max(1, (s0 - 1) / (mcount - 1)) : 1;
        for (int k = 0; k < mcount; ++k) {
            const double row = -(s0 / 2) + static_cast<double>(k * spacing);
            grid[static_cast<std::size_t>(k)] = TeacherTap{{row, 0.0}, 0.0};
        }
        DclsLayer baseline = taps_to_layer(grid, spec, cc);
        Rng binit(cfg.seed + 0x3C6E);
        for (std::size_t i = 0; i < baseline.weights.size(); ++i) {
            baseline.weights[i] = binit.normal(0.0, 0.3);
        }
        report.baseline_final_loss =
            train_frozen_positions(baseline, cfg, t_kernel, cc, eval_x, eval_y);
    }

    return report;
}

}  // namespace dcls
