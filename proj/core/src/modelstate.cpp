#include "geossl/modelstate.hpp"

#include <algorithm>
#include <cmath>

namespace geossl::model {

Tensor Param::as_tensor() const {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(data[i]);
    return t;
}

void Param::set_from(const Tensor& t) {
    GEOSSL_CHECK(t.numel() == numel(), "param assignment size mismatch");
    for (std::int64_t i = 0; i < t.numel(); ++i) data[i] = static_cast<float>(t[i]);
}

void ModelState::add(const std::string& name, std::vector<int> shape, bool trainable) {
    GEOSSL_CHECK(!params_.count(name), "duplicate parameter: " + name);
    Param p;
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    p.data.assign(n, 0.f);
    p.shape = std::move(shape);
    p.trainable = trainable;
    params_[name] = std::move(p);
}

Param& ModelState::at(const std::string& name) {
    auto it = params_.find(name);
    GEOSSL_CHECK(it != params_.end(), "unknown parameter: " + name);
    return it->second;
}

const Param& ModelState::at(const std::string& name) const {
    auto it = params_.find(name);
    GEOSSL_CHECK(it != params_.end(), "unknown parameter: " + name);
    return it->second;
}

std::vector<std::string> ModelState::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [n, p] : params_) out.push_back(n);
    return out;
}

std::int64_t ModelState::total_parameters() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_) n += p.numel();
    return n;
}

bool is_teacher_name(const std::string& name) { return name.rfind("teacher/", 0) == 0; }

bool is_teacher_visible(const std::string& name) {
    if (is_teacher_name(name)) return false;
    return name.rfind("tok/", 0) == 0 || name.rfind("backbone/", 0) == 0 ||
           name.rfind("fusion/", 0) == 0 || name.rfind("head/", 0) == 0 ||
           name.rfind("qsacl/", 0) == 0 || name.rfind("mgcl/", 0) == 0;
}

bool no_weight_decay(const std::string& name) {
    return name.find("/prompt/") != std::string::npos ||
           name.find("/gate/") != std::string::npos;
}

namespace {

/// Deterministic per-parameter stream: tied to the name, not to creation
/// order, so adding parameters never reshuffles existing initializations.
Rng name_rng(std::uint64_t seed, const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return Rng::derive(seed, h);
}

void init_param(ModelState& s, std::uint64_t seed, const std::string& name) {
    Param& p = s.at(name);
    Rng rng = name_rng(seed, name);

    const bool is_bias = name.ends_with("/b") || name.ends_with("/b1") ||
                         name.ends_with("/b2") || name.ends_with("/b3") ||
                         name.ends_with("/bq") || name.ends_with("/bk") ||
                         name.ends_with("/bv") || name.ends_with("/bo");
    const bool is_norm_gain = name.ends_with("/g");
    const bool is_embedding_bank = name == "mgcl/cluster_embed" ||
                                   name == "gcpl/prototypes" || name == "text/table";
    if (name.ends_with("/logit_scale")) {
        for (auto& v : p.data) v = static_cast<float>(std::log(10.0));
        return;
    }
    if (name == "gcpl/attn/wo") return;  // zero: augmentation starts as identity
    if (is_bias || name == "fusion/day_scale") return;
    if (is_norm_gain) {
        for (auto& v : p.data) v = 1.f;
        return;
    }
    if (name.ends_with("/rpb")) return;  // bias table starts flat
    if (is_embedding_bank) {
        for (auto& v : p.data) v = static_cast<float>(rng.normal());
        if (name == "text/table") {  // unit rows
            const int d = p.shape[1];
            for (int r = 0; r < p.shape[0]; ++r) {
                double n2 = 0;
                for (int c = 0; c < d; ++c) {
                    const double v = p.data[static_cast<size_t>(r) * d + c];
                    n2 += v * v;
                }
                const double inv = 1.0 / std::sqrt(std::max(n2, 1e-12));
                for (int c = 0; c < d; ++c)
                    p.data[static_cast<size_t>(r) * d + c] = static_cast<float>(
                        p.data[static_cast<size_t>(r) * d + c] * inv);
            }
        }
        return;
    }
    for (auto& v : p.data) v = static_cast<float>(rng.normal(0.0, 0.02));
}

void add_linear(ModelState& s, const std::string& scope, int in, int out) {
    s.add(scope + "/w", {in, out});
    s.add(scope + "/b", {1, out});
}

void add_attn(ModelState& s, const std::string& scope, int dim, int inner) {
    s.add(scope + "/wq", {dim, inner});
    s.add(scope + "/bq", {1, inner});
    s.add(scope + "/wk", {dim, inner});
    s.add(scope + "/bk", {1, inner});
    s.add(scope + "/wv", {dim, inner});
    s.add(scope + "/bv", {1, inner});
    s.add(scope + "/wo", {inner, dim});
    s.add(scope + "/bo", {1, dim});
}

void add_norm(ModelState& s, const std::string& scope, int dim) {
    s.add(scope + "/g", {1, dim});
    s.add(scope + "/b", {1, dim});
}

void add_mlp(ModelState& s, const std::string& scope, int dim, int hidden) {
    s.add(scope + "/w1", {dim, hidden});
    s.add(scope + "/b1", {1, hidden});
    s.add(scope + "/w2", {hidden, dim});
    s.add(scope + "/b2", {1, dim});
}

int mlp_hidden(int dim, double ratio) {
    const int h = static_cast<int>(std::lround(dim * ratio));
    return h < 1 ? 1 : h;
}

}  // namespace

ModelState build_model_state(const FullConfig& cfg, std::uint64_t seed) {
    ModelState s;
    const BackboneConfig& bb = cfg.backbone;
    const int d_fus = cfg.fused_dim();

    // tokenizers (per modality; 4x4 patches)
    for (auto m : {data::Modality::HR, data::Modality::MS, data::Modality::SAR})
        add_linear(s, std::string("tok/") + data::modality_name(m),
                   16 * data::modality_channels(m), bb.base_dim);

    // backbone stages
    const int total = bb.total_blocks();
    int block_idx = 0;
    for (int stage = 0; stage < 4; ++stage) {
        const int dim = bb.stage_dim(stage);
        const int inner = bb.n_heads(stage) * std::min(bb.head_dim, dim);
        for (int b = 0; b < bb.depths[static_cast<size_t>(stage)]; ++b, ++block_idx) {
            const std::string scope =
                "backbone/s" + std::to_string(stage + 1) + "/b" + std::to_string(b);
            add_attn(s, scope + "/attn", dim, inner);
            add_norm(s, scope + "/n1", dim);
            add_norm(s, scope + "/n2", dim);
            if (stage < 2) {
                s.add(scope + "/attn/logit_scale", {1, bb.n_heads(stage)});
                const int table = (2 * bb.window - 1) * (2 * bb.window - 1);
                s.add(scope + "/attn/rpb", {table, bb.n_heads(stage)});
            }
            const bool use_moe = block_idx >= total - bb.moe_last;
            const int hidden = mlp_hidden(dim, bb.mlp_ratio);
            if (use_moe) {
                add_linear(s, scope + "/gate", dim, bb.n_experts);
                for (int e = 0; e < bb.n_experts; ++e)
                    add_mlp(s, scope + "/e" + std::to_string(e), dim, hidden);
            } else {
                add_mlp(s, scope + "/m", dim, hidden);
            }
        }
        if (stage < 3) {
            const std::string scope = "backbone/apm" + std::to_string(stage + 2);
            s.add(scope + "/w", {4 * dim, 2 * dim});
            s.add(scope + "/b", {1, 2 * dim});
        }
    }
    // modality prompts, stages 3-4
    for (int stage = 2; stage < 4; ++stage)
        for (auto m : {data::Modality::HR, data::Modality::MS, data::Modality::SAR})
            s.add("backbone/prompt/s" + std::to_string(stage + 1) + "/" +
                      data::modality_name(m),
                  {bb.n_prompts, bb.stage_dim(stage)});

    // temporal fusion encoder
    for (auto m : {data::Modality::HR, data::Modality::MS, data::Modality::SAR})
        s.add(std::string("fusion/embed/") + data::modality_name(m), {1, d_fus});
    s.add("fusion/day_scale", {1, 1});
    {
        const int inner = cfg.fusion.n_heads * std::min(cfg.fusion.head_dim, d_fus);
        for (int l = 0; l < cfg.fusion.depth; ++l) {
            const std::string scope = "fusion/l" + std::to_string(l);
            add_attn(s, scope + "/attn", d_fus, inner);
            add_norm(s, scope + "/n1", d_fus);
            add_norm(s, scope + "/n2", d_fus);
            add_mlp(s, scope + "/m", d_fus, mlp_hidden(d_fus, cfg.fusion.mlp_ratio));
        }
    }

    // geo-context prototypes + augmentation cross-attention
    s.add("gcpl/prototypes", {cfg.gcpl.regions(), cfg.gcpl.n_prototypes, d_fus},
          /*trainable=*/false);
    add_attn(s, "gcpl/attn", d_fus, cfg.gcpl.n_heads * std::min(cfg.gcpl.head_dim, d_fus));

    // projection heads (pixel/object/image/query granularities)
    const HeadConfig& hc = cfg.objectives.head;
    for (const char* h : {"pix", "obj", "img", "qsacl"}) {
        const std::string scope = std::string("head/") + h;
        s.add(scope + "/w1", {d_fus, hc.hidden});
        s.add(scope + "/b1", {1, hc.hidden});
        s.add(scope + "/w2", {hc.hidden, hc.hidden});
        s.add(scope + "/b2", {1, hc.hidden});
        s.add(scope + "/w3", {hc.hidden, hc.out});
        s.add(scope + "/b3", {1, hc.out});
    }

    // query aggregation (decoder layer: self-attn + cross-attn + FFN)
    s.add("qsacl/queries", {cfg.objectives.n_queries, d_fus});
    {
        const int inner =
            cfg.objectives.query_heads * std::min(cfg.objectives.query_head_dim, d_fus);
        add_attn(s, "qsacl/dec/self", d_fus, inner);
        add_attn(s, "qsacl/dec/cross", d_fus, inner);
        add_norm(s, "qsacl/dec/n1", d_fus);
        add_norm(s, "qsacl/dec/n2", d_fus);
        add_norm(s, "qsacl/dec/n3", d_fus);
        add_mlp(s, "qsacl/dec/m", d_fus, mlp_hidden(d_fus, cfg.objectives.decoder_mlp_ratio));
    }

    // object-level cluster embeddings (shared across modalities)
    s.add("mgcl/cluster_embed", {cfg.objectives.n_clusters, d_fus});

    // dense text alignment: frozen class table + learnable projection
    s.add("text/table", {cfg.dataset.num_classes, cfg.objectives.text_dim},
          /*trainable=*/false);
    add_linear(s, "ita/proj", d_fus, cfg.objectives.text_dim);

    for (const auto& name : s.names()) init_param(s, seed, name);

    // teacher: exact copy of teacher-visible parameters + per-head centers
    std::vector<std::string> student_names = s.names();
    for (const auto& name : student_names) {
        if (!is_teacher_visible(name)) continue;
        const Param& src = s.at(name);
        std::vector<int> shape = src.shape;
        s.add("teacher/" + name, std::move(shape), /*trainable=*/false);
        s.at("teacher/" + name).data = src.data;
    }
    for (const char* h : {"pix", "obj", "img", "qsacl"})
        s.add(std::string("teacher/head/") + h + "/center", {1, hc.out},
              /*trainable=*/false);

    return s;
}

nn::Var ParamCtx::operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    const Param& p = state_.at(prefix_ + name);
    if (access_log_) access_log_->insert(prefix_ + name);
    Tensor t = p.as_tensor();
    if (t.ndim() != 2)
        t = t.reshaped({p.shape[0], static_cast<int>(p.numel() / p.shape[0])});
    nn::Var v = (track_grad_ && p.trainable) ? nn::leaf(std::move(t))
                                             : nn::constant(std::move(t));
    cache_[name] = v;
    return v;
}

void ParamCtx::collect_gradients(std::map<std::string, Tensor>& grads) const {
    for (const auto& [name, var] : cache_) {
        if (!var->requires_grad) continue;
        const std::string full = prefix_ + name;
        Tensor g = var->has_grad ? var->grad : Tensor::zeros(var->value.shape());
        auto it = grads.find(full);
        if (it == grads.end())
            grads.emplace(full, std::move(g));
        else
            it->second.add_(g);
    }
}

}  // namespace geossl::model
