#pragma once

#include "geossl/backbone.hpp"

#include <vector>

namespace geossl::model {

/// Per-location fused representation over time and modalities.
struct FusedFeature {
    nn::Var data;  // (h*w x d)
    int h = 0, w = 0;
    std::vector<data::Modality> modalities;
    std::vector<int> temporal_lengths;
};

/// One modality's temporal stack of spatially-aligned token grids plus the
/// acquisition day (offset, days) of each frame.
struct ModalitySequence {
    data::Modality modality;
    std::vector<TokenGrid> frames;
    std::vector<double> days;
};

/// Per spatial location, runs a transformer encoder over the concatenated
/// temporal/modality token sequence (with learned modality embeddings and
/// gated sinusoidal day-of-year encodings) and mean-pools it.
FusedFeature fuse(ParamCtx& P, const std::vector<ModalitySequence>& seqs,
                  const FusionConfig& cfg);

/// Row-major cell index on the equirectangular lon/lat grid.
int region_index(double lon, double lat, const GcplConfig& cfg);

/// Sinkhorn-Knopp scaling of exp(M/eps) to uniform marginals (rows 1/n,
/// columns 1/p), `iters` alternating row/column normalizations.
Tensor sinkhorn_assign(const Tensor& m, double eps, int iters);
nn::Var sinkhorn_assign(const nn::Var& m, double eps, int iters);

/// Cosine similarity between rows of two matrices (eps-guarded norms).
Tensor cosine_matrix(const Tensor& a, const Tensor& b);
nn::Var cosine_matrix(const nn::Var& a, const nn::Var& b);

/// Region slice of the prototype bank as a (N_p x d) tensor.
Tensor region_prototypes(const ModelState& state, int region, const GcplConfig& cfg);

/// EMA prototype refresh from (detached) student fused features; touches
/// only the addressed region's slice.
void gcpl_update(ModelState& state, const Tensor& fused, int region, const GcplConfig& cfg);

/// Residual single-head cross-attention of each location over its region's
/// prototypes; the bank is read-only here.
nn::Var gcpl_augment(ParamCtx& P, const ModelState& state, const nn::Var& fused, int region,
                     const GcplConfig& cfg);

/// Sinusoidal day-of-year encoding (annual harmonics), (1 x d).
Tensor day_encoding(double day, int d);

}  // namespace geossl::model
