#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dcls/geometry.hpp"
#include "dcls/model.hpp"
#include "dcls/tensor.hpp"

namespace dcls {

enum class InitDist { normal, uniform };

/// Draws i.i.d. starting positions: normal(0, 0.5) or uniform over the clamp
/// box, then clamps into bounds. Deterministic for a fixed seed.
Tensor init_positions(const KernelSpec& spec, InitDist dist, std::uint64_t seed);

/// Projects every coordinate along axis d into [-floor(s_d/2), s_d-1-floor(s_d/2)].
/// Returns how many coordinates moved, as an agglutination diagnostic.
std::size_t clamp_positions(Tensor& positions, const KernelSpec& spec);

/// One optimizer group. Defaults follow the position-learning recipe:
/// positions get no weight decay and a 5x learning rate.
struct ParamGroup {
    ParamKind kind = ParamKind::weights;
    double lr_multiplier = 1.0;
    double weight_decay = 0.0;
    std::vector<Parameter> members;
};

struct GroupDefaults {
    double weights_decay = 1e-4;
    double weights_lr_multiplier = 1.0;
    double positions_decay = 0.0;
    double positions_lr_multiplier = 5.0;
};

/// Splits a parameter list into a weights group and a positions group.
/// Throws on a parameter whose kind was never classified.
std::vector<ParamGroup> make_param_groups(const std::vector<Parameter>& params,
                                          const GroupDefaults& defaults = {});

/// Momentum SGD with decoupled weight decay:
///   v <- momentum * v + g
///   p <- p - lr_g * v - lr_g * wd * p,   lr_g = lr * group multiplier.
class SgdOptimizer {
  public:
    SgdOptimizer(std::vector<ParamGroup> groups, double momentum);

    /// Gradients must align with the flattened member order of the groups
    /// (group 0 members first). `lr` is this step's scheduled base rate.
    void step(const std::vector<const Tensor*>& grads, double lr);

    std::size_t parameter_count() const { return order_.size(); }
    const std::vector<ParamGroup>& groups() const { return groups_; }

    /// The update applied to parameter i during the last step (for the
    /// 5x-positions contract this is what gets asserted, not outcomes).
    const Tensor& last_update(std::size_t i) const { return last_update_.at(i); }

  private:
    std::vector<ParamGroup> groups_;
    double momentum_;
    std::vector<std::pair<std::size_t, std::size_t>> order_;  // (group, member)
    std::vector<Tensor> velocity_;
    std::vector<Tensor> last_update_;
};

/// Cosine decay with linear warmup. step counts from 0; warmup_steps may be 0.
double scheduled_lr(std::size_t step, std::size_t total_steps, double base_lr,
                    std::size_t warmup_steps);

/// Shared position storage for several layers: member gradients accumulate
/// into one buffer, the optimizer steps the shared tensor once, and the
/// result is broadcast back so all members stay elementwise identical.
class SyncGroup {
  public:
    SyncGroup(std::vector<std::size_t> member_layers, Tensor shared_positions);

    void zero_grad();
    void accumulate(std::size_t layer_index, const Tensor& grad);
    /// Sum of all member gradients. Throws if some member never reported.
    const Tensor& reduced_grad() const;

    Tensor& positions() { return shared_; }
    const Tensor& positions() const { return shared_; }
    const std::vector<std::size_t>& members() const { return members_; }

    /// Copies the shared tensor into every member layer of the model.
    void broadcast(Model& model) const;

  private:
    std::vector<std::size_t> members_;
    Tensor shared_;
    Tensor grad_;
    std::vector<bool> reported_;
};

/// Pairwise quadratic hinge on Euclidean distance, per channel slice,
/// averaged over slices: sum_{k<l} max(0, 1 - |p_k - p_l| / radius)^2.
double repulsive_loss(const Tensor& positions, const KernelSpec& spec, double radius);

/// Gradient of repulsive_loss with respect to every position coordinate.
/// At exactly coincident points the (undefined) direction is taken as zero.
Tensor repulsive_loss_grad(const Tensor& positions, const KernelSpec& spec, double radius);

struct TeacherTap {
    std::array<double, kMaxDims> offset{};  // centered cell coordinates
    double weight = 0.0;
};

struct TrainConfig {
    int steps = 4200;
    int batch = 8;
    double base_lr = 0.02;
    int warmup_steps = 150;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double position_lr_multiplier = 5.0;
    std::uint64_t seed = 1;
    // on by default: without a short-range repulsion, two elements that fall
    // into the same teacher tap's well split its weight and stay there
    double lambda_rep = 0.3;
    double repulsive_radius = 2.0;
    InitDist init = InitDist::uniform;

    // toy problem geometry
    int channels = 2;
    int map = 18;
    int kernel_count = 3;
    std::vector<int> dilated_size = {9, 9};
    std::vector<TeacherTap> teacher;  // empty = default three taps

    int snapshot_every = 100;  // steps per diagnostic epoch
    // every so many steps, relocate elements whose weight has collapsed to the
    // strongest unexplained cell of the residual (greedy reseeding); 0 = off
    int reseed_every = 150;
    bool train_baseline = false;
    bool sync_pair = false;        // two branches sharing one position tensor
    bool init_at_teacher = false;  // start the student at the optimum

    void validate() const;
};

struct TrainReport {
    bool diverged = false;
    std::vector<double> loss;       // one entry per step
    std::vector<double> avg_speed;  // one entry per snapshot epoch, V(0) = 0
    std::vector<Tensor> position_snapshots;
    std::vector<std::size_t> clamp_counts;  // coordinates clamped per step
    double final_loss = 0.0;
    double max_position_error = 0.0;    // over slices and matched taps, in cells
    double max_weight_rel_error = 0.0;  // over slices and matched taps
    double baseline_final_loss = -1.0;  // < 0 when the baseline was not trained
    double max_sync_divergence = 0.0;   // max |pos_a - pos_b| seen across steps
    std::vector<TeacherTap> teacher;
    Model student;  // final state, one layer (plus a second when sync_pair)
};

/// Teacher-student recovery: a depthwise conv with a few known taps labels
/// random inputs; a DCLS student with the same element count trains on MSE
/// with clamping, param groups, and optionally a synced twin branch, a
/// repulsive term, and a fixed-grid dilated baseline for comparison.
TrainReport train_toy(const TrainConfig& cfg);

/// Minimum-cost matching (by Euclidean position distance) between learned
/// and true taps; returns the matched tap index for each learned element.
std::vector<std::size_t> match_taps(const std::vector<std::array<double, kMaxDims>>& learned,
                                    const std::vector<TeacherTap>& truth, std::size_t ndims);

}  // namespace dcls
