#include "geossl/config.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <set>

namespace geossl::model {

using json = nlohmann::json;

void FullConfig::validate() const {
    auto check = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    check(dataset.num_classes >= 2, "dataset.classes must be >= 2");
    check(dataset.h_ms > 0 && dataset.w_ms > 0, "dataset sizes must be positive");
    check(dataset.t_ms >= 1 && dataset.t_sar >= 1, "dataset series lengths must be >= 1");
    check(backbone.base_dim >= 1, "backbone.base_dim must be >= 1");
    check(backbone.top_k >= 1 && backbone.top_k <= backbone.n_experts,
          "backbone.top_k must lie in [1, n_experts]");
    check(backbone.moe_last >= 0 && backbone.moe_last <= backbone.total_blocks(),
          "backbone.moe_last must not exceed the total block count");
    check(backbone.window >= 1, "backbone.window must be >= 1");
    for (int d : backbone.depths) check(d >= 1, "backbone.depths entries must be >= 1");
    check(aug.n_local >= 1, "aug.n_local must be >= 1");
    check(aug.global_area_min > 0 && aug.global_area_max <= 1.0 &&
              aug.global_area_min <= aug.global_area_max,
          "aug.global_area range must lie in (0, 1]");
    check(aug.local_area_min > 0 && aug.local_area_max <= 1.0 &&
              aug.local_area_min <= aug.local_area_max,
          "aug.local_area range must lie in (0, 1]");
    check(fusion.depth >= 0, "fusion.depth must be >= 0");
    check(gcpl.rows == 64 && gcpl.cols == 64, "gcpl grid is fixed at 64x64");
    check(gcpl.n_prototypes >= 1, "gcpl.prototypes must be >= 1");
    check(gcpl.momentum >= 0.0 && gcpl.momentum < 1.0, "gcpl.momentum must lie in [0,1)");
    check(objectives.n_queries >= 1, "objectives.queries must be >= 1");
    check(objectives.n_clusters >= 1, "objectives.clusters must be >= 1");
    check(objectives.head.tau_student > 0 && objectives.head.tau_teacher > 0,
          "head temperatures must be positive");
    check(objectives.ita_tau > 0, "objectives.ita_tau must be positive");
    check(objectives.sinkhorn_eps > 0 && objectives.sinkhorn_iters >= 1,
          "sinkhorn settings must be positive");
    check(trainer.total_iters >= 1, "trainer.total_iters must be >= 1");
    check(trainer.batch_size >= 1, "trainer.batch_size must be >= 1");
    check(trainer.lr_start > 0 && trainer.lr_end > 0, "learning rates must be positive");
    check(trainer.ema_start > 0 && trainer.ema_start <= 1.0 && trainer.ema_end > 0 &&
              trainer.ema_end <= 1.0,
          "ema momenta must lie in (0, 1]");
    check(trainer.clip_norm > 0, "trainer.clip_norm must be positive");
}

namespace {

class Walker {
public:
    Walker(json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError("config section '" + path_ + "' must be a JSON object");
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError("unknown config key '" + path_ + it.key() + "'");
    }

    template <typename T>
    void num(const char* key, T& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        if (!it->is_number())
            throw ConfigError("config key '" + path_ + key + "' must be a number");
        out = it->get<T>();
    }

    void boolean(const char* key, bool& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        if (!it->is_boolean())
            throw ConfigError("config key '" + path_ + key + "' must be a boolean");
        out = it->get<bool>();
    }

    void flags3(const char* key, std::array<bool, 3>& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        if (!it->is_array() || it->size() != 3)
            throw ConfigError("config key '" + path_ + key +
                              "' must be an array of 3 booleans");
        for (int i = 0; i < 3; ++i) {
            if (!(*it)[static_cast<size_t>(i)].is_boolean())
                throw ConfigError("config key '" + path_ + key +
                                  "' must be an array of 3 booleans");
            out[static_cast<size_t>(i)] = (*it)[static_cast<size_t>(i)].get<bool>();
        }
    }

    void depths4(const char* key, std::array<int, 4>& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        if (!it->is_array() || it->size() != 4)
            throw ConfigError("config key '" + path_ + key +
                              "' must be an array of 4 integers");
        for (int i = 0; i < 4; ++i) {
            if (!(*it)[static_cast<size_t>(i)].is_number_integer())
                throw ConfigError("config key '" + path_ + key +
                                  "' must be an array of 4 integers");
            out[static_cast<size_t>(i)] = (*it)[static_cast<size_t>(i)].get<int>();
        }
    }

    json section(const char* key) {
        auto it = j_.find(key);
        seen_.insert(key);
        return it == j_.end() ? json::object() : *it;
    }

private:
    json j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace

FullConfig apply_config_json(FullConfig cfg, const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    Walker root(j, "");
    {
        Walker w(root.section("dataset"), "dataset.");
        w.num("count", cfg.dataset.count);
        w.num("classes", cfg.dataset.num_classes);
        w.num("h_ms", cfg.dataset.h_ms);
        w.num("w_ms", cfg.dataset.w_ms);
        w.num("t_ms", cfg.dataset.t_ms);
        w.num("t_sar", cfg.dataset.t_sar);
        w.num("seed", cfg.dataset.seed);
        w.finish();
    }
    {
        Walker w(root.section("aug"), "aug.");
        w.num("n_local", cfg.aug.n_local);
        w.num("global_ms_size", cfg.aug.global_ms_size);
        w.num("local_ms_size", cfg.aug.local_ms_size);
        w.num("global_area_min", cfg.aug.global_area_min);
        w.num("global_area_max", cfg.aug.global_area_max);
        w.num("local_area_min", cfg.aug.local_area_min);
        w.num("local_area_max", cfg.aug.local_area_max);
        w.num("ms_frames", cfg.aug.ms_frames);
        w.num("sar_frames", cfg.aug.sar_frames);
        w.num("day_jitter", cfg.aug.day_jitter);
        w.num("blur_prob", cfg.aug.blur_prob);
        w.num("blur_sigma_min", cfg.aug.blur_sigma_min);
        w.num("blur_sigma_max", cfg.aug.blur_sigma_max);
        w.num("solarize_prob", cfg.aug.solarize_prob);
        w.num("solarize_threshold", cfg.aug.solarize_threshold);
        w.num("jitter_prob", cfg.aug.jitter_prob);
        w.num("jitter_strength", cfg.aug.jitter_strength);
        w.num("flip_prob", cfg.aug.flip_prob);
        w.boolean("random_rotation", cfg.aug.random_rotation);
        w.finish();
    }
    {
        Walker w(root.section("backbone"), "backbone.");
        w.num("base_dim", cfg.backbone.base_dim);
        w.depths4("depths", cfg.backbone.depths);
        w.num("window", cfg.backbone.window);
        w.num("head_dim", cfg.backbone.head_dim);
        w.num("mlp_ratio", cfg.backbone.mlp_ratio);
        w.num("prompts", cfg.backbone.n_prompts);
        w.num("moe_last", cfg.backbone.moe_last);
        w.num("experts", cfg.backbone.n_experts);
        w.num("top_k", cfg.backbone.top_k);
        w.flags3("merge_hr", cfg.backbone.merge_hr);
        w.flags3("merge_ms", cfg.backbone.merge_ms);
        w.flags3("merge_sar", cfg.backbone.merge_sar);
        w.finish();
    }
    {
        Walker w(root.section("fusion"), "fusion.");
        w.num("depth", cfg.fusion.depth);
        w.num("heads", cfg.fusion.n_heads);
        w.num("head_dim", cfg.fusion.head_dim);
        w.num("mlp_ratio", cfg.fusion.mlp_ratio);
        w.finish();
    }
    {
        Walker w(root.section("gcpl"), "gcpl.");
        w.num("prototypes", cfg.gcpl.n_prototypes);
        w.num("momentum", cfg.gcpl.momentum);
        w.num("eps", cfg.gcpl.eps);
        w.num("iters", cfg.gcpl.iters);
        w.num("heads", cfg.gcpl.n_heads);
        w.num("head_dim", cfg.gcpl.head_dim);
        w.finish();
    }
    {
        Walker w(root.section("objectives"), "objectives.");
        w.num("head_hidden", cfg.objectives.head.hidden);
        w.num("head_out", cfg.objectives.head.out);
        w.num("tau_student", cfg.objectives.head.tau_student);
        w.num("tau_teacher", cfg.objectives.head.tau_teacher);
        w.num("center_momentum", cfg.objectives.head.center_momentum);
        w.num("clusters", cfg.objectives.n_clusters);
        w.num("queries", cfg.objectives.n_queries);
        w.num("query_heads", cfg.objectives.query_heads);
        w.num("query_head_dim", cfg.objectives.query_head_dim);
        w.num("decoder_mlp_ratio", cfg.objectives.decoder_mlp_ratio);
        w.num("text_dim", cfg.objectives.text_dim);
        w.num("ita_tau", cfg.objectives.ita_tau);
        w.num("lambda_mgcl", cfg.objectives.lambda_mgcl);
        w.num("lambda_ita", cfg.objectives.lambda_ita);
        w.num("lambda_qsacl", cfg.objectives.lambda_qsacl);
        w.num("aux_weight", cfg.objectives.aux_weight);
        w.num("sinkhorn_eps", cfg.objectives.sinkhorn_eps);
        w.num("sinkhorn_iters", cfg.objectives.sinkhorn_iters);
        w.finish();
    }
    {
        Walker w(root.section("trainer"), "trainer.");
        w.num("total_iters", cfg.trainer.total_iters);
        w.num("batch_size", cfg.trainer.batch_size);
        w.num("lr_start", cfg.trainer.lr_start);
        w.num("lr_end", cfg.trainer.lr_end);
        w.num("wd_start", cfg.trainer.wd_start);
        w.num("wd_end", cfg.trainer.wd_end);
        w.num("ema_start", cfg.trainer.ema_start);
        w.num("ema_end", cfg.trainer.ema_end);
        w.num("clip_norm", cfg.trainer.clip_norm);
        w.num("beta1", cfg.trainer.beta1);
        w.num("beta2", cfg.trainer.beta2);
        w.num("adam_eps", cfg.trainer.adam_eps);
        w.num("seed", cfg.trainer.seed);
        w.num("workers", cfg.trainer.n_workers);
        w.finish();
    }
    root.finish();
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

std::string config_to_json(const FullConfig& cfg) {
    json j;
    j["dataset"] = {{"count", cfg.dataset.count},
                    {"classes", cfg.dataset.num_classes},
                    {"h_ms", cfg.dataset.h_ms},
                    {"w_ms", cfg.dataset.w_ms},
                    {"t_ms", cfg.dataset.t_ms},
                    {"t_sar", cfg.dataset.t_sar},
                    {"seed", cfg.dataset.seed}};
    j["aug"] = {{"n_local", cfg.aug.n_local},
                {"global_ms_size", cfg.aug.global_ms_size},
                {"local_ms_size", cfg.aug.local_ms_size},
                {"global_area_min", cfg.aug.global_area_min},
                {"global_area_max", cfg.aug.global_area_max},
                {"local_area_min", cfg.aug.local_area_min},
                {"local_area_max", cfg.aug.local_area_max},
                {"ms_frames", cfg.aug.ms_frames},
                {"sar_frames", cfg.aug.sar_frames},
                {"day_jitter", cfg.aug.day_jitter},
                {"blur_prob", cfg.aug.blur_prob},
                {"blur_sigma_min", cfg.aug.blur_sigma_min},
                {"blur_sigma_max", cfg.aug.blur_sigma_max},
                {"solarize_prob", cfg.aug.solarize_prob},
                {"solarize_threshold", cfg.aug.solarize_threshold},
                {"jitter_prob", cfg.aug.jitter_prob},
                {"jitter_strength", cfg.aug.jitter_strength},
                {"flip_prob", cfg.aug.flip_prob},
                {"random_rotation", cfg.aug.random_rotation}};
    j["backbone"] = {{"base_dim", cfg.backbone.base_dim},
                     {"depths", cfg.backbone.depths},
                     {"window", cfg.backbone.window},
                     {"head_dim", cfg.backbone.head_dim},
                     {"mlp_ratio", cfg.backbone.mlp_ratio},
                     {"prompts", cfg.backbone.n_prompts},
                     {"moe_last", cfg.backbone.moe_last},
                     {"experts", cfg.backbone.n_experts},
                     {"top_k", cfg.backbone.top_k},
                     {"merge_hr", cfg.backbone.merge_hr},
                     {"merge_ms", cfg.backbone.merge_ms},
                     {"merge_sar", cfg.backbone.merge_sar}};
    j["fusion"] = {{"depth", cfg.fusion.depth},
                   {"heads", cfg.fusion.n_heads},
                   {"head_dim", cfg.fusion.head_dim},
                   {"mlp_ratio", cfg.fusion.mlp_ratio}};
    j["gcpl"] = {{"prototypes", cfg.gcpl.n_prototypes},
                 {"momentum", cfg.gcpl.momentum},
                 {"eps", cfg.gcpl.eps},
                 {"iters", cfg.gcpl.iters},
                 {"heads", cfg.gcpl.n_heads},
                 {"head_dim", cfg.gcpl.head_dim}};
    j["objectives"] = {{"head_hidden", cfg.objectives.head.hidden},
                       {"head_out", cfg.objectives.head.out},
                       {"tau_student", cfg.objectives.head.tau_student},
                       {"tau_teacher", cfg.objectives.head.tau_teacher},
                       {"center_momentum", cfg.objectives.head.center_momentum},
                       {"clusters", cfg.objectives.n_clusters},
                       {"queries", cfg.objectives.n_queries},
                       {"query_heads", cfg.objectives.query_heads},
                       {"query_head_dim", cfg.objectives.query_head_dim},
                       {"decoder_mlp_ratio", cfg.objectives.decoder_mlp_ratio},
                       {"text_dim", cfg.objectives.text_dim},
                       {"ita_tau", cfg.objectives.ita_tau},
                       {"lambda_mgcl", cfg.objectives.lambda_mgcl},
                       {"lambda_ita", cfg.objectives.lambda_ita},
                       {"lambda_qsacl", cfg.objectives.lambda_qsacl},
                       {"aux_weight", cfg.objectives.aux_weight},
                       {"sinkhorn_eps", cfg.objectives.sinkhorn_eps},
                       {"sinkhorn_iters", cfg.objectives.sinkhorn_iters}};
    j["trainer"] = {{"total_iters", cfg.trainer.total_iters},
                    {"batch_size", cfg.trainer.batch_size},
                    {"lr_start", cfg.trainer.lr_start},
                    {"lr_end", cfg.trainer.lr_end},
                    {"wd_start", cfg.trainer.wd_start},
                    {"wd_end", cfg.trainer.wd_end},
                    {"ema_start", cfg.trainer.ema_start},
                    {"ema_end", cfg.trainer.ema_end},
                    {"clip_norm", cfg.trainer.clip_norm},
                    {"beta1", cfg.trainer.beta1},
                    {"beta2", cfg.trainer.beta2},
                    {"adam_eps", cfg.trainer.adam_eps},
                    {"seed", cfg.trainer.seed},
                    {"workers", cfg.trainer.n_workers}};
    return j.dump();
}

void apply_apm_preset(BackboneConfig& cfg, const std::string& preset) {
    if (preset == "1/8")
        cfg.merge_hr = {true, true, true};
    else if (preset == "1/4")
        cfg.merge_hr = {true, true, false};
    else if (preset == "1/2")
        cfg.merge_hr = {true, false, false};
    else if (preset == "none")
        cfg.merge_hr = {false, false, false};
    else
        throw ConfigError("unknown downsample preset '" + preset +
                          "' (expected 1/8, 1/4, 1/2 or none)");
}

}  // namespace geossl::model
