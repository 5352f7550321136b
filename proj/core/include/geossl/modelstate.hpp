#pragma once

#include "geossl/config.hpp"
#include "geossl/nn.hpp"
#include "geossl/rng.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace geossl::model {

struct TeacherLogitStats;

/// One named parameter. Values live in float32 so checkpoints roundtrip
/// losslessly; compute lifts them to doubles.
struct Param {
    std::vector<float> data;
    std::vector<int> shape;
    bool trainable = true;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    Tensor as_tensor() const;
    void set_from(const Tensor& t);
};

/// All learnable state, addressable by name. Teacher copies live under the
/// "teacher/" prefix; the prototype bank and the frozen class-embedding
/// table are non-trainable entries.
class ModelState {
public:
    void add(const std::string& name, std::vector<int> shape, bool trainable = true);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    const std::map<std::string, Param>& all() const { return params_; }
    std::map<std::string, Param>& all() { return params_; }

    std::vector<std::string> names() const;
    std::int64_t total_parameters() const;

private:
    std::map<std::string, Param> params_;
};

/// Builds student + teacher parameters for a config, deterministically
/// initialized from `seed` (teacher starts as an exact copy).
ModelState build_model_state(const FullConfig& cfg, std::uint64_t seed);

/// Name predicates used by the trainer.
bool is_teacher_name(const std::string& name);
bool is_teacher_visible(const std::string& name);   // has an EMA copy
bool no_weight_decay(const std::string& name);      // prompts and gate weights

/// Lifts named parameters of one branch into autograd variables, caching per
/// name. `track_grad` distinguishes the student tape from the teacher's
/// constant pass; `access_log`, when set, records every touched name.
class ParamCtx {
public:
    ParamCtx(const ModelState& state, std::string prefix, bool track_grad)
        : state_(state), prefix_(std::move(prefix)), track_grad_(track_grad) {}

    nn::Var operator()(const std::string& name);

    const std::map<std::string, nn::Var>& lifted() const { return cache_; }
    bool track_grad() const { return track_grad_; }
    void set_access_log(std::set<std::string>* log) { access_log_ = log; }

    /// When set on a teacher context, head_forward records raw logits here.
    TeacherLogitStats* teacher_logit_stats = nullptr;

    /// Accumulates d(loss)/d(param) for every lifted trainable leaf.
    void collect_gradients(std::map<std::string, Tensor>& grads) const;

private:
    const ModelState& state_;
    std::string prefix_;
    bool track_grad_;
    std::map<std::string, nn::Var> cache_;
    std::set<std::string>* access_log_ = nullptr;
};

}  // namespace geossl::model
