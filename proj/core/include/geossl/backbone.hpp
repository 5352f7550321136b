#pragma once

#include "geossl/datakit.hpp"
#include "geossl/modelstate.hpp"

#include <string>
#include <vector>

namespace geossl::model {

/// Spatial grid of token vectors (row-major, (h*w x d)).
struct TokenGrid {
    nn::Var tokens;
    int h = 0, w = 0;
    int stride = 0;  // source pixels per token
    data::Modality modality = data::Modality::HR;

    int count() const { return h * w; }
    int dim() const { return tokens->value.cols(); }
};

/// Per-expert routing tallies for one expert-FFN layer plus the
/// differentiable mean gate probabilities used by the auxiliary loss.
struct RoutingLayerStats {
    std::vector<std::int64_t> counts;  // tokens routed per expert (top-k)
    Tensor mean_gate_prob;             // (1 x M)
    std::int64_t tokens_total = 0;
    int top_k = 1;
    nn::Var mean_gate_var;             // tape handle, may be null
};

struct RoutingStats {
    std::vector<RoutingLayerStats> layers;
    void merge(const RoutingStats& other);
};

struct BackboneOut {
    TokenGrid final;
    std::vector<TokenGrid> stages;  // output of each of the four stages
    RoutingStats routing;
};

/// 4x4 patch embedding with a per-modality linear tokenizer.
TokenGrid tokenize(ParamCtx& P, const float* image, int h, int w, int ch,
                   data::Modality modality, const BackboneConfig& cfg);
TokenGrid tokenize(ParamCtx& P, const data::ArrF& image, data::Modality modality,
                   const BackboneConfig& cfg);

/// Stage-boundary projection. With `reduce`, 2x2 token blocks concatenate to
/// 4d and project to 2d; otherwise the same weight is averaged across its
/// four input blocks and applied per token (resolution preserved).
TokenGrid patch_merge(ParamCtx& P, const TokenGrid& in, int boundary, bool reduce);

/// SwinV2-style block: windowed cosine attention with learned per-head
/// temperature and relative position bias, post-norm residuals.
TokenGrid swin_block(ParamCtx& P, const TokenGrid& in, const std::string& scope,
                     bool shift, bool use_moe, const BackboneConfig& cfg,
                     RoutingStats* routing);

/// Pre-norm global-attention block over (prompts + grid tokens).
nn::Var transformer_block(ParamCtx& P, const nn::Var& tokens, const std::string& scope,
                          int n_heads, int head_dim, bool use_moe,
                          const BackboneConfig& cfg, RoutingStats* routing);

/// Expert FFN: softmax gate over M logits, top-k dispatch (ties resolved to
/// the lowest expert index), output summed with gate weights.
nn::Var moe_ffn(ParamCtx& P, const nn::Var& x, const std::string& scope, int n_experts,
                int top_k, int hidden, RoutingLayerStats* stats);

BackboneOut forward_backbone(ParamCtx& P, const float* image, int h, int w, int ch,
                             data::Modality modality, const BackboneConfig& cfg);
BackboneOut forward_backbone(ParamCtx& P, const data::ArrF& image, data::Modality modality,
                             const BackboneConfig& cfg);

/// Dense (token x 16*ch) patch matrix in (dy, dx, channel) order; the
/// tokenizer is a plain right-multiplication by this matrix.
Tensor extract_patches(const float* image, int h, int w, int ch);

}  // namespace geossl::model
