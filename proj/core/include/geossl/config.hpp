#pragma once

#include "geossl/datakit.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace geossl::model {

/// Hierarchical encoder shared by all modalities. Stage dims are
/// c, 2c, 4c, 8c; stages 1-2 use windowed attention, 3-4 global attention
/// with per-modality prompt tokens.
struct BackboneConfig {
    int base_dim = 32;                    // c
    std::array<int, 4> depths{2, 2, 4, 2};
    int window = 8;
    int head_dim = 32;
    double mlp_ratio = 4.0;
    int n_prompts = 4;                    // per modality, stages 3-4
    int moe_last = 2;                     // L: trailing blocks with expert FFNs
    int n_experts = 4;                    // M
    int top_k = 1;                        // k
    // per-modality downsample flags at the three stage boundaries (2,3,4)
    std::array<bool, 3> merge_hr{true, true, true};
    std::array<bool, 3> merge_ms{false, false, false};
    std::array<bool, 3> merge_sar{false, false, false};

    int stage_dim(int stage) const { return base_dim << stage; }  // stage 0..3
    int total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }
    int n_heads(int stage) const {
        const int h = stage_dim(stage) / head_dim;
        return h < 1 ? 1 : h;
    }
    const std::array<bool, 3>& merge_flags(data::Modality m) const {
        switch (m) {
            case data::Modality::HR: return merge_hr;
            case data::Modality::MS: return merge_ms;
            default: return merge_sar;
        }
    }
};

struct FusionConfig {
    int depth = 2;
    int n_heads = 4;
    int head_dim = 32;
    double mlp_ratio = 4.0;
};

/// Geo-context prototypes over a fixed 64x64 equirectangular lon/lat grid.
struct GcplConfig {
    int rows = 64, cols = 64;
    int n_prototypes = 8;      // per region (paper-scale value is 100)
    double momentum = 0.99;    // prototype EMA
    double eps = 0.05;         // assignment temperature
    int iters = 3;
    int n_heads = 1;
    int head_dim = 32;
    int regions() const { return rows * cols; }
};

struct HeadConfig {
    int hidden = 256;
    int out = 256;
    double tau_student = 0.1;
    double tau_teacher = 0.05;
    double center_momentum = 0.9;
};

struct ObjectivesConfig {
    HeadConfig head;
    int n_clusters = 8;        // object-level cluster count
    int n_queries = 16;        // m
    int query_heads = 4;
    int query_head_dim = 32;
    double decoder_mlp_ratio = 4.0;
    int text_dim = 64;         // frozen class-embedding width
    double ita_tau = 0.1;
    double lambda_mgcl = 1.0;
    double lambda_ita = 1.0;
    double lambda_qsacl = 1.0;
    double aux_weight = 0.01;
    double sinkhorn_eps = 0.05;
    int sinkhorn_iters = 3;
};

struct TrainConfig {
    int total_iters = 300;
    int batch_size = 4;
    double lr_start = 2e-4;
    double lr_end = 1e-6;
    double wd_start = 0.04;
    double wd_end = 0.2;
    double ema_start = 0.996;
    double ema_end = 1.0;
    double clip_norm = 3.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int n_workers = 4;  // per-sample worker threads within a step
};

struct FullConfig {
    data::DatasetSpec dataset;
    data::AugSpec aug;
    BackboneConfig backbone;
    FusionConfig fusion;
    GcplConfig gcpl;
    ObjectivesConfig objectives;
    TrainConfig trainer;

    int fused_dim() const { return backbone.stage_dim(3); }
    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses a JSON document and overlays it on `base`. Unknown keys and type
/// mismatches throw ConfigError; docs/config-schema.json mirrors the
/// accepted structure.
FullConfig apply_config_json(FullConfig base, const std::string& json_text);
std::string config_to_json(const FullConfig& cfg);

/// Downsample-activation presets: "1/8", "1/4", "1/2", "none" configure the
/// HR merge flags at stage boundaries 2-4.
void apply_apm_preset(BackboneConfig& cfg, const std::string& preset);

}  // namespace geossl::model
