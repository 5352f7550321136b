#pragma once

#include "geossl/backbone.hpp"
#include "geossl/fusion.hpp"

#include <map>
#include <string>
#include <vector>

namespace geossl::model {

/// Running sums of raw teacher head logits, feeding the center EMA.
struct TeacherLogitStats {
    std::map<std::string, Tensor> sum;  // head -> (1 x P)
    std::map<std::string, std::int64_t> rows;
    void absorb(const std::string& head, const Tensor& logits);
    void merge(const TeacherLogitStats& other);
};

/// Projection head ("pix" | "obj" | "img" | "qsacl"): 3-layer MLP, softmax
/// at the branch temperature; the teacher subtracts its center first.
/// `logits_out`, when set, receives the pre-softmax logits (used for the
/// teacher center update).
nn::Var head_forward(ParamCtx& P, const nn::Var& features, const std::string& head,
                     const HeadConfig& cfg, bool teacher, Tensor* logits_out = nullptr);

/// Cross-entropy with the (detached) teacher distribution as target,
/// averaged over rows: mean_r [ -sum_j q_rj log p_rj ].
nn::Var loss_cl(const nn::Var& student_prob, const Tensor& teacher_prob);

struct PixelLoss {
    nn::Var loss;        // 0 constant when skipped
    bool skipped = false;
    int pairs = 0;
};

/// Mean of loss_cl over corresponded locations and paired temporal slices.
PixelLoss loss_pixel(ParamCtx& Ps, ParamCtx& Pt, const std::vector<nn::Var>& f_student,
                     const std::vector<nn::Var>& f_teacher,
                     const std::vector<std::pair<int, int>>& corr, const HeadConfig& cfg);

/// Sinkhorn soft-clustering of pixel features against learnable cluster
/// embeddings; centers are assignment-weighted feature means.
nn::Var cluster_objects(ParamCtx& P, const nn::Var& f_pix, int n_clusters, double eps,
                        int iters);

nn::Var loss_object(ParamCtx& Ps, ParamCtx& Pt, const std::vector<nn::Var>& f_student,
                    const std::vector<nn::Var>& f_teacher, const ObjectivesConfig& cfg);

nn::Var loss_image(ParamCtx& Ps, ParamCtx& Pt, const std::vector<nn::Var>& f_student,
                   const std::vector<nn::Var>& f_teacher, const HeadConfig& cfg);

/// Pixel + object + image losses for one (student view, teacher view) pair
/// of temporal feature stacks. `pairs`/`skips` tally pixel-loss coverage.
nn::Var loss_fgcl(ParamCtx& Ps, ParamCtx& Pt, const std::vector<nn::Var>& f_student,
                  const std::vector<nn::Var>& f_teacher,
                  const std::vector<std::pair<int, int>>& corr, const ObjectivesConfig& cfg,
                  int* pairs = nullptr, int* skips = nullptr);

/// Query aggregation: one pre-norm transformer decoder layer whose queries
/// cross-attend over `features`. `attn_maps` receives the (m x n) cross
/// attention probabilities (head-averaged, rows sum to 1); `cross_sublayer`
/// the raw cross-attention sublayer output.
nn::Var qsacl_aggregate(ParamCtx& P, const nn::Var& features, const ObjectivesConfig& cfg,
                        Tensor* attn_maps = nullptr, nn::Var* cross_sublayer = nullptr);

/// Mean over all ordered (global, local) view pairs of the per-query
/// symmetric contrastive loss between branch aggregates.
nn::Var loss_qsacl(ParamCtx& Ps, ParamCtx& Pt, const std::vector<nn::Var>& student_global,
                   const std::vector<nn::Var>& student_local,
                   const std::vector<nn::Var>& teacher_global,
                   const std::vector<nn::Var>& teacher_local, const ObjectivesConfig& cfg);

/// Per-pixel cross-entropy between projected features and the frozen class
/// embedding table at temperature tau.
nn::Var loss_ita(const nn::Var& features, const std::vector<int>& labels,
                 const nn::Var& text_table, double tau);

/// Switch-style load-balancing penalty: mean over expert layers of
/// M * sum_i f_i * p_i (f = routed fraction, p = mean gate probability).
double moe_aux_loss(const RoutingStats& stats);
nn::Var moe_aux_loss_var(const RoutingStats& stats);

struct LossParts {
    nn::Var mgcl, ita, qsacl, aux;
};

/// lambda1*MGCL + lambda2*ITA + lambda3*QSACL + aux_weight*aux. Throws on
/// non-finite parts, naming the offender.
nn::Var total_loss(const LossParts& parts, const ObjectivesConfig& cfg);

}  // namespace geossl::model
