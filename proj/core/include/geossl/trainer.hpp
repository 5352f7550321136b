#pragma once

#include "geossl/datakit.hpp"
#include "geossl/fusion.hpp"
#include "geossl/modelstate.hpp"
#include "geossl/objectives.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace geossl::model {

/// v1 + (v0 - v1) * (1 + cos(pi t / T)) / 2 ; T = 0 returns v0.
double cosine_schedule(std::int64_t t, std::int64_t total, double v0, double v1);

/// theta_t <- m * theta_t + (1 - m) * theta_s for every teacher-visible
/// parameter (centers and the prototype bank follow their own updates).
void ema_update(ModelState& state, double momentum);

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm. Non-finite gradients abort with the
/// offending parameter name.
double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm);

struct Metrics {
    int iter = 0;
    double total = 0, mgcl = 0, ita = 0, qsacl = 0, aux = 0;
    double lr = 0, wd = 0, ema_momentum = 0, grad_norm = 0;
    int pixel_pairs = 0;
    int pixel_skips = 0;
    std::vector<std::int64_t> moe_counts;  // summed over expert layers
    std::string to_json() const;
};

/// Features and aggregates of one encoded view for one branch.
struct ViewEncoding {
    std::vector<nn::Var> hr;   // single final grid (aligned to the fused grid)
    std::vector<nn::Var> ms;   // per selected frame
    std::vector<nn::Var> sar;
    FusedFeature fused;        // after geo-context augmentation (student only)
    nn::Var aggregate;         // query-aggregated (m x d)
    RoutingStats routing;      // flat per-pass expert layers
};

/// Per-sample forward + losses for both branches; also returns everything
/// the trainer's post-step updates need.
struct SampleLoss {
    nn::Var loss;
    LossParts parts;
    RoutingStats routing;
    std::vector<Tensor> fused_globals;  // detached student fused features
    TeacherLogitStats teacher_logits;
    int region = 0;
    int pixel_pairs = 0;
    int pixel_skips = 0;
};

ViewEncoding encode_view(ParamCtx& P, const data::ViewSet& views, int view_index,
                         const FullConfig& cfg, bool teacher, const ModelState& state);

SampleLoss sample_loss(const ModelState& state, const FullConfig& cfg,
                       const data::GeoSample& sample, const data::ViewSet& views,
                       bool track_grad, std::map<std::string, Tensor>* grads);

class Trainer {
public:
    Trainer(FullConfig cfg, ModelState state)
        : cfg_(std::move(cfg)), state_(std::move(state)) {}

    Metrics train_step(const std::vector<const data::GeoSample*>& batch, int iter);

    ModelState& state() { return state_; }
    const ModelState& state() const { return state_; }
    const FullConfig& config() const { return cfg_; }

private:
    FullConfig cfg_;
    ModelState state_;
    std::map<std::string, Tensor> adam_m_, adam_v_;
    std::int64_t adam_t_ = 0;
};

/// Full pre-training loop over a dataset with deterministic batch sampling.
/// `on_metrics` fires once per iteration.
void pretrain(Trainer& trainer, const std::vector<data::GeoSample>& dataset,
              const std::function<void(const Metrics&)>& on_metrics);

inline constexpr const char* kCheckpointMagic = "MMCK1\n";

struct Checkpoint {
    ModelState state;
    FullConfig config;
    int iteration = 0;
};

void save_checkpoint(const ModelState& state, const FullConfig& cfg, int iteration,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace geossl::model
