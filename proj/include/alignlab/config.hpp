#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "alignlab/errors.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/objectives.hpp"
#include "alignlab/optimizer.hpp"
#include "alignlab/rl.hpp"

namespace alignlab {

inline constexpr const char* kConfigMagic = "ALIGNLAB-CONFIG-v1";
inline constexpr const char* kTaskMagic = "ALIGNLAB-TASK-v1";
inline constexpr const char* kPolicyMagic = "ALIGNLAB-POLICY-v1";
inline constexpr const char* kCacheMagic = "ALIGNLAB-ACACHE-v1";

namespace jsonutil {

using nlohmann::json;

inline std::string join_path(const std::string& prefix, const std::string& field) {
    return prefix.empty() ? field : prefix + "." + field;
}

inline const json& require(const json& j, const std::string& field, const std::string& prefix) {
    if (!j.is_object() || !j.contains(field))
        throw ConfigError("missing required field: " + join_path(prefix, field));
    return j.at(field);
}

inline int get_int(const json& j, const std::string& field, int fallback,
                   const std::string& prefix) {
    if (!j.is_object() || !j.contains(field)) return fallback;
    const json& v = j.at(field);
    if (!v.is_number_integer())
        throw ConfigError("field is not an integer: " + join_path(prefix, field));
    return v.get<int>();
}

inline int require_int(const json& j, const std::string& field, const std::string& prefix) {
    const json& v = require(j, field, prefix);
    if (!v.is_number_integer())
        throw ConfigError("field is not an integer: " + join_path(prefix, field));
    return v.get<int>();
}

inline double get_double(const json& j, const std::string& field, double fallback,
                         const std::string& prefix) {
    if (!j.is_object() || !j.contains(field)) return fallback;
    const json& v = j.at(field);
    if (!v.is_number())
        throw ConfigError("field is not a number: " + join_path(prefix, field));
    return v.get<double>();
}

inline bool get_bool(const json& j, const std::string& field, bool fallback,
                     const std::string& prefix) {
    if (!j.is_object() || !j.contains(field)) return fallback;
    const json& v = j.at(field);
    if (!v.is_boolean())
        throw ConfigError("field is not a boolean: " + join_path(prefix, field));
    return v.get<bool>();
}

inline std::string get_string(const json& j, const std::string& field,
                              const std::string& fallback, const std::string& prefix) {
    if (!j.is_object() || !j.contains(field)) return fallback;
    const json& v = j.at(field);
    if (!v.is_string())
        throw ConfigError("field is not a string: " + join_path(prefix, field));
    return v.get<std::string>();
}

} // namespace jsonutil

/// Task synthesis config from JSON. vocab_size and horizon are required;
/// prompts may be explicit (a list of token lists) or generated.
inline TaskSpec task_spec_from_json(const nlohmann::json& j, const std::string& prefix = "") {
    using namespace jsonutil;
    TaskSpec spec;
    spec.vocab_size = require_int(j, "vocab_size", prefix);
    spec.horizon = require_int(j, "horizon", prefix);
    spec.eos_id = get_int(j, "eos_id", 0, prefix);
    spec.num_prompts = get_int(j, "num_prompts", spec.num_prompts, prefix);
    spec.prompt_len = get_int(j, "prompt_len", spec.prompt_len, prefix);
    spec.max_prompt_len = get_int(j, "max_prompt_len", spec.max_prompt_len, prefix);
    spec.seed = static_cast<std::uint64_t>(get_int(j, "seed", 1, prefix));
    if (j.contains("prompts")) {
        const auto& ps = j.at("prompts");
        if (!ps.is_array()) throw ConfigError("field is not an array: " + join_path(prefix, "prompts"));
        for (const auto& p : ps) {
            if (!p.is_array())
                throw ConfigError("field is not an array: " + join_path(prefix, "prompts[i]"));
            TokenSeq seq;
            for (const auto& t : p) seq.push_back(t.get<int>());
            spec.prompts.push_back(std::move(seq));
        }
    }
    if (j.contains("reward")) {
        const auto& r = j.at("reward");
        spec.reward_dist = get_string(r, "distribution", spec.reward_dist,
                                      join_path(prefix, "reward"));
        spec.reward_scale = get_double(r, "scale", spec.reward_scale,
                                       join_path(prefix, "reward"));
        spec.final_bonus_scale = get_double(r, "final_bonus_scale", spec.final_bonus_scale,
                                            join_path(prefix, "reward"));
    }
    validate_task_spec(spec);
    return spec;
}

inline nlohmann::json task_spec_to_json(const TaskSpec& spec) {
    nlohmann::json j;
    j["vocab_size"] = spec.vocab_size;
    j["eos_id"] = spec.eos_id;
    j["horizon"] = spec.horizon;
    j["num_prompts"] = spec.num_prompts;
    j["prompt_len"] = spec.prompt_len;
    j["max_prompt_len"] = spec.max_prompt_len;
    j["reward"] = {{"distribution", spec.reward_dist},
                   {"scale", spec.reward_scale},
                   {"final_bonus_scale", spec.final_bonus_scale}};
    j["seed"] = spec.seed;
    if (!spec.prompts.empty()) j["prompts"] = spec.prompts;
    return j;
}

enum class StateSource { student, preferred, dispreferred, teacher };

inline StateSource state_source_from_string(const std::string& s) {
    if (s == "student") return StateSource::student;
    if (s == "preferred") return StateSource::preferred;
    if (s == "dispreferred") return StateSource::dispreferred;
    if (s == "teacher") return StateSource::teacher;
    throw ConfigError("state_source: unknown value '" + s + "'");
}

inline std::string to_string(StateSource s) {
    switch (s) {
        case StateSource::student: return "student";
        case StateSource::preferred: return "preferred";
        case StateSource::dispreferred: return "dispreferred";
        case StateSource::teacher: return "teacher";
    }
    return "student";
}

struct PhaseSpec {
    int epochs = 0;
    double lr = 0.0;
};

struct AblationFlags {
    bool no_dpo_teacher = false;
    bool no_dispreferred = false;
    bool no_reference_teacher = false;
};

struct CacheConfig {
    bool enabled = false;
    int k = 50;
    bool prob_space_subtraction = false;
};

struct DataConfig {
    int n_pref_pairs = 64;
    int n_eval_pairs = 192;
    std::string sampler = "uniform"; // or "teacher-sft" or "mixed"
    std::string it_decode = "greedy"; // or "optimal"
    int samples_per_prompt = 1;
};

struct EvalConfig {
    int cadence = 1;
    int n_samples = 32;
};

/// Full experiment configuration (method, data sizes, per-phase budgets).
struct TrainConfig {
    std::uint64_t seed = 1;
    std::string method = "adpa";
    DistillHyperparams hp{1.0, 0.5, 1.5};
    DataConfig data;
    PhaseSpec teacher_sft{160, 0.5};
    PhaseSpec student_sft{10, 0.5};
    PhaseSpec teacher_dpo{300, 2.0};
    PhaseSpec student{60, 0.5}; // matched budget for all student methods
    double student_dpo_lr = 2.0;
    PpoConfig ppo;
    OptimizerKind optimizer = OptimizerKind::gd;
    StateSource state_source = StateSource::student;
    AblationFlags ablation;
    CacheConfig cache;
    EvalConfig eval;
    bool adpa_length_normalize = false;
    bool dry_run = false;

    void validate() const {
        hp.validate();
        if (teacher_sft.epochs < 0 || student_sft.epochs < 0 || teacher_dpo.epochs < 0 ||
            student.epochs < 0)
            throw ConfigError("phases: epochs must be >= 0");
        if (teacher_sft.lr <= 0.0 || student_sft.lr <= 0.0 || teacher_dpo.lr <= 0.0 ||
            student.lr <= 0.0 || student_dpo_lr <= 0.0)
            throw ConfigError("phases: lr must be > 0");
        if (data.n_pref_pairs < 1) throw ConfigError("data.n_pref_pairs: must be >= 1");
        if (data.samples_per_prompt < 1)
            throw ConfigError("data.samples_per_prompt: must be >= 1");
        if (eval.cadence < 1) throw ConfigError("eval.cadence: must be >= 1");
        if (cache.k < 1) throw ConfigError("cache.k: must be >= 1");
        if (data.sampler != "uniform" && data.sampler != "teacher-sft" &&
            data.sampler != "mixed" && data.sampler != "foreign-pair")
            throw ConfigError("data.sampler: unknown value '" + data.sampler + "'");
        if (data.it_decode != "greedy" && data.it_decode != "optimal")
            throw ConfigError("data.it_decode: unknown value '" + data.it_decode + "'");
    }
};

inline PhaseSpec phase_from_json(const nlohmann::json& j, const std::string& name,
                                 PhaseSpec fallback) {
    using namespace jsonutil;
    if (!j.contains(name)) return fallback;
    const auto& p = j.at(name);
    PhaseSpec out;
    out.epochs = get_int(p, "epochs", fallback.epochs, "phases." + name);
    out.lr = get_double(p, "lr", fallback.lr, "phases." + name);
    return out;
}

/// Parses an experiment config; the embedded or referenced task is resolved by
/// the caller. Throws ConfigError with the offending field path.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    using namespace jsonutil;
    if (get_string(j, "magic", "", "") != kConfigMagic)
        throw ConfigError("magic: expected \"" + std::string(kConfigMagic) + "\"");
    TrainConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(get_int(j, "seed", 1, ""));
    cfg.method = get_string(j, "method", cfg.method, "");
    if (j.contains("hyperparams")) {
        const auto& h = j.at("hyperparams");
        cfg.hp.alpha = get_double(h, "alpha", cfg.hp.alpha, "hyperparams");
        cfg.hp.beta = get_double(h, "beta", cfg.hp.beta, "hyperparams");
        cfg.hp.gamma = get_double(h, "gamma", cfg.hp.gamma, "hyperparams");
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        cfg.data.n_pref_pairs = get_int(d, "n_pref_pairs", cfg.data.n_pref_pairs, "data");
        cfg.data.n_eval_pairs = get_int(d, "n_eval_pairs", cfg.data.n_eval_pairs, "data");
        cfg.data.sampler = get_string(d, "sampler", cfg.data.sampler, "data");
        cfg.data.it_decode = get_string(d, "it_decode", cfg.data.it_decode, "data");
        cfg.data.samples_per_prompt =
            get_int(d, "samples_per_prompt", cfg.data.samples_per_prompt, "data");
    }
    if (j.contains("phases")) {
        const auto& p = j.at("phases");
        cfg.teacher_sft = phase_from_json(p, "teacher_sft", cfg.teacher_sft);
        cfg.student_sft = phase_from_json(p, "student_sft", cfg.student_sft);
        cfg.teacher_dpo = phase_from_json(p, "teacher_dpo", cfg.teacher_dpo);
        cfg.student = phase_from_json(p, "student", cfg.student);
        cfg.student_dpo_lr = get_double(p, "student_dpo_lr", cfg.student_dpo_lr, "phases");
    }
    if (j.contains("ppo")) {
        const auto& p = j.at("ppo");
        cfg.ppo.rollouts_per_epoch =
            get_int(p, "rollouts_per_epoch", cfg.ppo.rollouts_per_epoch, "ppo");
        cfg.ppo.inner_epochs = get_int(p, "inner_epochs", cfg.ppo.inner_epochs, "ppo");
        cfg.ppo.clip_eps = get_double(p, "clip_eps", cfg.ppo.clip_eps, "ppo");
        cfg.ppo.critic_lr = get_double(p, "critic_lr", cfg.ppo.critic_lr, "ppo");
        cfg.ppo.critic_steps = get_int(p, "critic_steps", cfg.ppo.critic_steps, "ppo");
        cfg.ppo.sft_weight = get_double(p, "sft_weight", cfg.ppo.sft_weight, "ppo");
        cfg.ppo.lr = get_double(p, "lr", cfg.student.lr, "ppo");
        cfg.ppo.epochs = get_int(p, "epochs", cfg.student.epochs, "ppo");
    } else {
        cfg.ppo.lr = cfg.student.lr;
        cfg.ppo.epochs = cfg.student.epochs; // matched budget with the offline trainers
    }
    if (j.contains("optimizer"))
        cfg.optimizer =
            optimizer_kind_from_string(get_string(j.at("optimizer"), "kind", "gd", "optimizer"));
    cfg.state_source = state_source_from_string(get_string(j, "state_source", "student", ""));
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        cfg.ablation.no_dpo_teacher = get_bool(a, "no_dpo_teacher", false, "ablation");
        cfg.ablation.no_dispreferred = get_bool(a, "no_dispreferred", false, "ablation");
        cfg.ablation.no_reference_teacher =
            get_bool(a, "no_reference_teacher", false, "ablation");
    }
    if (j.contains("cache")) {
        const auto& c = j.at("cache");
        cfg.cache.enabled = get_bool(c, "enabled", false, "cache");
        cfg.cache.k = get_int(c, "k", cfg.cache.k, "cache");
        cfg.cache.prob_space_subtraction =
            get_bool(c, "prob_space_subtraction", false, "cache");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        cfg.eval.cadence = get_int(e, "cadence", cfg.eval.cadence, "eval");
        cfg.eval.n_samples = get_int(e, "n_samples", cfg.eval.n_samples, "eval");
    }
    cfg.adpa_length_normalize = get_bool(j, "adpa_length_normalize", false, "");
    cfg.dry_run = get_bool(j, "dry_run", false, "");
    cfg.validate();
    // matched budget also when the ppo block omitted epochs/lr explicitly
    if (cfg.ppo.epochs == 0) cfg.ppo.epochs = cfg.student.epochs;
    if (cfg.ppo.lr == 0.0) cfg.ppo.lr = cfg.student.lr;
    cfg.ppo.eval_cadence = cfg.eval.cadence;
    return cfg;
}

} // namespace alignlab
