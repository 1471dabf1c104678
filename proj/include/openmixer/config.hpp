// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "openmixer/backend.hpp"
#include "openmixer/common.hpp"
#include "openmixer/criterion.hpp"
#include "openmixer/dfa.hpp"
#include "openmixer/eval.hpp"
#include "openmixer/head.hpp"
#include "openmixer/prior.hpp"

namespace openmixer::config {

enum class TrainingMode { e2e, zsr_tl };

inline const char* training_mode_name(TrainingMode m) {
    return m == TrainingMode::e2e ? "e2e" : "zsr_tl";
}

inline TrainingMode parse_training_mode(const std::string& s) {
    if (s == "e2e") return TrainingMode::e2e;
    if (s == "zsr_tl") return TrainingMode::zsr_tl;
    throw ConfigError("training_mode must be e2e or zsr_tl, got '" + s + "'");
}

inline const char* prior_source_name(prior::PriorSource s) {
    switch (s) {
        case prior::PriorSource::attention: return "attention";
        case prior::PriorSource::ground_truth: return "gt";
        case prior::PriorSource::random: return "random";
        case prior::PriorSource::external: return "external";
    }
    throw ConfigError("prior_source_name: unknown source");
}

inline prior::PriorSource parse_prior_source(const std::string& s) {
    if (s == "attention") return prior::PriorSource::attention;
    if (s == "gt" || s == "ground_truth") return prior::PriorSource::ground_truth;
    if (s == "random") return prior::PriorSource::random;
    if (s == "external") return prior::PriorSource::external;
    throw ConfigError("prior source must be attention, gt, random or external, got '" + s + "'");
}

inline const char* sample_mode_name(prior::SampleMode m) {
    return m == prior::SampleMode::deterministic ? "deterministic" : "stochastic";
}

inline prior::SampleMode parse_sample_mode(const std::string& s) {
    if (s == "deterministic") return prior::SampleMode::deterministic;
    if (s == "stochastic") return prior::SampleMode::stochastic;
    throw ConfigError("prior sample mode must be deterministic or stochastic, got '" + s + "'");
}

inline const char* fusion_mode_name(dfa::FusionMode m) {
    return m == dfa::FusionMode::dynamic ? "dynamic" : "fixed";
}

inline dfa::FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "dynamic") return dfa::FusionMode::dynamic;
    if (s == "fixed") return dfa::FusionMode::fixed;
    throw ConfigError("fusion_mode must be dynamic or fixed, got '" + s + "'");
}

inline const char* protocol_name(eval::ProtocolMode m) {
    switch (m) {
        case eval::ProtocolMode::base_only: return "base";
        case eval::ProtocolMode::novel_only: return "novel";
        case eval::ProtocolMode::generalized: return "generalized";
    }
    throw ConfigError("protocol_name: unknown protocol");
}

inline eval::ProtocolMode parse_protocol(const std::string& s) {
    if (s == "base") return eval::ProtocolMode::base_only;
    if (s == "novel") return eval::ProtocolMode::novel_only;
    if (s == "generalized") return eval::ProtocolMode::generalized;
    throw ConfigError("protocol must be base, novel or generalized, got '" + s + "'");
}

struct DatasetPaths {
    std::string annotations;
    std::string clips_dir;
    std::string prompts;
    std::string split;
};

struct TrainSettings {
    int epochs = 12;
    int batch_size = 16;
    int frames = 16;        // window length T
    int frame_stride = 1;   // sampling stride within the window
};

struct OptimizerSettings {
    double lr = 1e-5;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;
};

struct EvalSettings {
    eval::ProtocolMode protocol = eval::ProtocolMode::generalized;
    double iou_threshold = 0.5;
    double frame_iou_threshold = 0.5;
    double person_threshold = 0.6;
    double continuity_iou = 0.1;
    int keyframe_step = 1;  // hop between sliding-window keyframes at inference

    eval::EvalProtocol to_protocol() const {
        eval::EvalProtocol p;
        p.mode = protocol;
        p.iou_threshold = iou_threshold;
        p.frame_iou_threshold = frame_iou_threshold;
        p.person_threshold = person_threshold;
        p.continuity_iou = continuity_iou;
        return p;
    }
};

struct PriorSettings {
    prior::PriorSource source = prior::PriorSource::attention;
    prior::SampleMode sample_mode = prior::SampleMode::deterministic;
    double temperature = 1.0;  // stochastic softmax temperature
};

struct FusionSettings {
    dfa::FusionMode mode = dfa::FusionMode::dynamic;
    double fixed_lambda = 1.0;
};

// Everything a run needs. training_mode zsr_tl trains localization only: the
// model is assembled with fusion pinned to fixed lambda = 1 and the training
// loop freezes the alignment parameters.
struct RunConfig {
    DatasetPaths dataset;
    backend::BackendConfig backend;
    backend::PyramidConfig pyramid;
    head::HeadConfig head;
    FusionSettings fusion;
    PriorSettings prior;
    criterion::LossWeights loss;
    criterion::CostWeights cost;
    OptimizerSettings optimizer;
    TrainSettings train;
    EvalSettings eval;
    std::uint64_t seed = 1;
    bool deterministic = true;  // single-threaded data order
    TrainingMode training_mode = TrainingMode::e2e;

    void validate() const {
        backend.validate();
        head.validate();
        if (pyramid.dp < 1) throw ConfigError("pyramid.dp must be positive");
        if (pyramid.strides.empty()) throw ConfigError("pyramid.strides must be non-empty");
        for (double s : pyramid.strides)
            if (s <= 0.0) throw ConfigError("pyramid.strides must be positive");
        if (fusion.fixed_lambda < 0.0 || fusion.fixed_lambda > 1.0)
            throw ConfigError("fusion.fixed_lambda must be in [0,1]");
        if (prior.temperature <= 0.0) throw ConfigError("prior.temperature must be positive");
        if (loss.w1 <= 0.0 || loss.w2 <= 0.0) throw ConfigError("loss weights must be positive");
        if (cost.score <= 0.0 || cost.l1 <= 0.0 || cost.giou <= 0.0)
            throw ConfigError("cost weights must be positive");
        if (optimizer.lr <= 0.0 || optimizer.weight_decay < 0.0)
            throw ConfigError("optimizer.lr must be positive, weight_decay non-negative");
        if (train.epochs < 1 || train.batch_size < 1 || train.frames < 1 || train.frame_stride < 1)
            throw ConfigError("train settings must be positive");
        if (eval.iou_threshold <= 0.0 || eval.iou_threshold > 1.0)
            throw ConfigError("eval.iou_threshold must be in (0,1]");
        if (eval.person_threshold < 0.0 || eval.person_threshold > 1.0)
            throw ConfigError("eval.person_threshold must be in [0,1]");
        if (eval.keyframe_step < 1) throw ConfigError("eval.keyframe_step must be positive");
    }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& where, std::set<std::string> allowed) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("config: unknown key '" + where + "." + k + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
    using detail::get_or;
    RunConfig cfg;
    detail::check_keys(j, "run",
                       {"dataset", "backend", "pyramid", "head", "fusion", "prior", "loss", "cost",
                        "optimizer", "train", "eval", "seed", "deterministic", "training_mode"});
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::check_keys(d, "dataset", {"annotations", "clips_dir", "prompts", "split"});
        cfg.dataset.annotations = get_or<std::string>(d, "annotations", "");
        cfg.dataset.clips_dir = get_or<std::string>(d, "clips_dir", "");
        cfg.dataset.prompts = get_or<std::string>(d, "prompts", "");
        cfg.dataset.split = get_or<std::string>(d, "split", "");
    }
    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        detail::check_keys(b, "backend",
                           {"kind", "patch_size", "feature_dim", "temperature",
                            "reversed_attention", "seed"});
        cfg.backend.kind = get_or<std::string>(b, "kind", cfg.backend.kind);
        cfg.backend.patch_size = get_or<int>(b, "patch_size", cfg.backend.patch_size);
        cfg.backend.feature_dim = get_or<int>(b, "feature_dim", cfg.backend.feature_dim);
        cfg.backend.temperature = get_or<double>(b, "temperature", cfg.backend.temperature);
        cfg.backend.reversed_attention =
            get_or<bool>(b, "reversed_attention", cfg.backend.reversed_attention);
        cfg.backend.seed = get_or<std::uint64_t>(b, "seed", cfg.backend.seed);
    }
    if (j.contains("pyramid")) {
        const auto& p = j.at("pyramid");
        detail::check_keys(p, "pyramid", {"dp", "strides"});
        cfg.pyramid.dp = get_or<int>(p, "dp", cfg.pyramid.dp);
        cfg.pyramid.strides = get_or<std::vector<double>>(p, "strides", cfg.pyramid.strides);
    }
    if (j.contains("head")) {
        const auto& h = j.at("head");
        detail::check_keys(h, "head",
                           {"num_queries", "num_stages", "query_dim", "heads", "qv_points",
                            "condition_mode"});
        cfg.head.num_queries = get_or<int>(h, "num_queries", cfg.head.num_queries);
        cfg.head.num_stages = get_or<int>(h, "num_stages", cfg.head.num_stages);
        cfg.head.query_dim = get_or<int>(h, "query_dim", cfg.head.query_dim);
        cfg.head.heads = get_or<int>(h, "heads", cfg.head.heads);
        cfg.head.qv_points = get_or<int>(h, "qv_points", cfg.head.qv_points);
        if (h.contains("condition_mode"))
            cfg.head.condition_mode =
                head::parse_condition_mode(h.at("condition_mode").get<std::string>());
    }
    if (j.contains("fusion")) {
        const auto& f = j.at("fusion");
        detail::check_keys(f, "fusion", {"mode", "fixed_lambda"});
        if (f.contains("mode")) cfg.fusion.mode = parse_fusion_mode(f.at("mode").get<std::string>());
        cfg.fusion.fixed_lambda = get_or<double>(f, "fixed_lambda", cfg.fusion.fixed_lambda);
    }
    if (j.contains("prior")) {
        const auto& p = j.at("prior");
        detail::check_keys(p, "prior", {"source", "sample_mode", "temperature"});
        if (p.contains("source")) cfg.prior.source = parse_prior_source(p.at("source").get<std::string>());
        if (p.contains("sample_mode"))
            cfg.prior.sample_mode = parse_sample_mode(p.at("sample_mode").get<std::string>());
        cfg.prior.temperature = get_or<double>(p, "temperature", cfg.prior.temperature);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        detail::check_keys(l, "loss", {"w1", "w2"});
        cfg.loss.w1 = get_or<double>(l, "w1", cfg.loss.w1);
        cfg.loss.w2 = get_or<double>(l, "w2", cfg.loss.w2);
    }
    if (j.contains("cost")) {
        const auto& c = j.at("cost");
        detail::check_keys(c, "cost", {"score", "l1", "giou"});
        cfg.cost.score = get_or<double>(c, "score", cfg.cost.score);
        cfg.cost.l1 = get_or<double>(c, "l1", cfg.cost.l1);
        cfg.cost.giou = get_or<double>(c, "giou", cfg.cost.giou);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::check_keys(o, "optimizer", {"lr", "weight_decay", "clip_norm"});
        cfg.optimizer.lr = get_or<double>(o, "lr", cfg.optimizer.lr);
        cfg.optimizer.weight_decay = get_or<double>(o, "weight_decay", cfg.optimizer.weight_decay);
        cfg.optimizer.clip_norm = get_or<double>(o, "clip_norm", cfg.optimizer.clip_norm);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, "train", {"epochs", "batch_size", "frames", "frame_stride"});
        cfg.train.epochs = get_or<int>(t, "epochs", cfg.train.epochs);
        cfg.train.batch_size = get_or<int>(t, "batch_size", cfg.train.batch_size);
        cfg.train.frames = get_or<int>(t, "frames", cfg.train.frames);
        cfg.train.frame_stride = get_or<int>(t, "frame_stride", cfg.train.frame_stride);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::check_keys(e, "eval",
                           {"protocol", "iou_threshold", "frame_iou_threshold", "person_threshold",
                            "continuity_iou", "keyframe_step"});
        if (e.contains("protocol")) cfg.eval.protocol = parse_protocol(e.at("protocol").get<std::string>());
        cfg.eval.iou_threshold = get_or<double>(e, "iou_threshold", cfg.eval.iou_threshold);
        cfg.eval.frame_iou_threshold =
            get_or<double>(e, "frame_iou_threshold", cfg.eval.frame_iou_threshold);
        cfg.eval.person_threshold = get_or<double>(e, "person_threshold", cfg.eval.person_threshold);
        cfg.eval.continuity_iou = get_or<double>(e, "continuity_iou", cfg.eval.continuity_iou);
        cfg.eval.keyframe_step = get_or<int>(e, "keyframe_step", cfg.eval.keyframe_step);
    }
    cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
    cfg.deterministic = get_or<bool>(j, "deterministic", cfg.deterministic);
    if (j.contains("training_mode"))
        cfg.training_mode = parse_training_mode(j.at("training_mode").get<std::string>());
    cfg.validate();
    return cfg;
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["dataset"] = {{"annotations", cfg.dataset.annotations},
                    {"clips_dir", cfg.dataset.clips_dir},
                    {"prompts", cfg.dataset.prompts},
                    {"split", cfg.dataset.split}};
    j["backend"] = {{"kind", cfg.backend.kind},
                    {"patch_size", cfg.backend.patch_size},
                    {"feature_dim", cfg.backend.feature_dim},
                    {"temperature", cfg.backend.temperature},
                    {"reversed_attention", cfg.backend.reversed_attention},
                    {"seed", cfg.backend.seed}};
    j["pyramid"] = {{"dp", cfg.pyramid.dp}, {"strides", cfg.pyramid.strides}};
    j["head"] = {{"num_queries", cfg.head.num_queries},
                 {"num_stages", cfg.head.num_stages},
                 {"query_dim", cfg.head.query_dim},
                 {"heads", cfg.head.heads},
                 {"qv_points", cfg.head.qv_points},
                 {"condition_mode", head::condition_mode_name(cfg.head.condition_mode)}};
    j["fusion"] = {{"mode", fusion_mode_name(cfg.fusion.mode)},
                   {"fixed_lambda", cfg.fusion.fixed_lambda}};
    j["prior"] = {{"source", prior_source_name(cfg.prior.source)},
                  {"sample_mode", sample_mode_name(cfg.prior.sample_mode)},
                  {"temperature", cfg.prior.temperature}};
    j["loss"] = {{"w1", cfg.loss.w1}, {"w2", cfg.loss.w2}};
    j["cost"] = {{"score", cfg.cost.score}, {"l1", cfg.cost.l1}, {"giou", cfg.cost.giou}};
    j["optimizer"] = {{"lr", cfg.optimizer.lr},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"clip_norm", cfg.optimizer.clip_norm}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"frames", cfg.train.frames},
                  {"frame_stride", cfg.train.frame_stride}};
    j["eval"] = {{"protocol", protocol_name(cfg.eval.protocol)},
                 {"iou_threshold", cfg.eval.iou_threshold},
                 {"frame_iou_threshold", cfg.eval.frame_iou_threshold},
                 {"person_threshold", cfg.eval.person_threshold},
                 {"continuity_iou", cfg.eval.continuity_iou},
                 {"keyframe_step", cfg.eval.keyframe_step}};
    j["seed"] = cfg.seed;
    j["deterministic"] = cfg.deterministic;
    j["training_mode"] = training_mode_name(cfg.training_mode);
    return j;
}

inline RunConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: parse failure: ") + e.what());
    }
    return config_from_json(j);
}

inline std::string format_config(const RunConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write config file: " + path);
    out << format_config(cfg);
    if (!out) throw InputError("config write failed: " + path);
}

}  // namespace openmixer::config
