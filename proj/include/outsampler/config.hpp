#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "outsampler/baselines.hpp"
#include "outsampler/checkpoint.hpp"
#include "outsampler/priors.hpp"
#include "outsampler/sampler.hpp"
#include "outsampler/target.hpp"

namespace outsampler {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [k, _] : j.items())
        if (!known.count(k))
            throw ConfigError("config: unknown key '" + k + "' in " + where);
}

}  // namespace detail

struct PriorSpec {
    std::string kind;
    // affine
    Vec A, b;
    // generator / vae / cnf, either a checkpoint or an init recipe
    std::string checkpoint;
    std::vector<int> hidden = {64, 64};
    int d_noise = 2, d_latent = 2, d_data = 2;
    // cnf training recipe
    std::string dataset = "two_moons";
    std::string source = "gaussian";
    int n_euler = 45;
    long train_steps = 20000;
    int train_batch = 64;
    double train_lr = 1e-3;
    double noise_scale = 0.05;
    int data_count = 10000;
};

struct ConstraintSpec {
    std::string kind = "uniform";
    std::vector<Vec> centers;
    Vec weights;
    double var = 0.0025;
    Vec normal;
    double offset = 0.0;
    double sharpness = 1.0;
    std::string checkpoint;
    int label = 0;
};

struct EvalSpec {
    int oracle_n = 100000;
    int grid_bins = 50;
    double mode_radius = 0.15;
    std::vector<Vec> mode_centers;
    int sample_n = 10000;
};

struct RunConfig {
    std::string task = "custom";
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    PriorSpec prior;
    ConstraintSpec constraint;
    TrainConfig sampler;
    HmcConfig hmc;
    RwConfig rw;
    EvalSpec eval;
};

// ---- parsing -------------------------------------------------------------

namespace detail {

inline std::vector<Vec> parse_matrix(const nlohmann::json& j, const std::string& where) {
    std::vector<Vec> out;
    if (!j.is_array()) throw ConfigError("config: " + where + " must be an array of rows");
    for (const auto& row : j) out.push_back(row.get<Vec>());
    return out;
}

inline Vec flatten_matrix(const std::vector<Vec>& m) {
    Vec out;
    for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
    return out;
}

}  // namespace detail

inline PriorSpec parse_prior_spec(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j,
        {"kind", "A", "b", "checkpoint", "hidden", "d_noise", "d_latent", "d_data", "dataset",
         "source", "n_euler", "train_steps", "train_batch", "train_lr", "noise_scale",
         "data_count"},
        "prior");
    PriorSpec p;
    if (!j.contains("kind")) throw ConfigError("config: prior.kind is required");
    p.kind = j.at("kind").get<std::string>();
    static const std::set<std::string> kinds{"affine", "swiss_roll", "mlp_generator",
                                             "vae_decoder", "cnf"};
    if (!kinds.count(p.kind)) throw ConfigError("config: unknown prior kind '" + p.kind + "'");
    if (j.contains("A")) p.A = detail::flatten_matrix(detail::parse_matrix(j.at("A"), "prior.A"));
    if (j.contains("b")) p.b = j.at("b").get<Vec>();
    p.checkpoint = j.value("checkpoint", p.checkpoint);
    if (j.contains("hidden")) p.hidden = j.at("hidden").get<std::vector<int>>();
    p.d_noise = j.value("d_noise", p.d_noise);
    p.d_latent = j.value("d_latent", p.d_latent);
    p.d_data = j.value("d_data", p.d_data);
    p.dataset = j.value("dataset", p.dataset);
    p.source = j.value("source", p.source);
    p.n_euler = j.value("n_euler", p.n_euler);
    p.train_steps = j.value("train_steps", p.train_steps);
    p.train_batch = j.value("train_batch", p.train_batch);
    p.train_lr = j.value("train_lr", p.train_lr);
    p.noise_scale = j.value("noise_scale", p.noise_scale);
    p.data_count = j.value("data_count", p.data_count);
    return p;
}

inline ConstraintSpec parse_constraint_spec(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"kind", "centers", "weights", "var", "normal", "offset", "sharpness", "checkpoint", "label"},
        "constraint");
    ConstraintSpec c;
    c.kind = j.value("kind", c.kind);
    static const std::set<std::string> kinds{"gaussian_mixture", "halfspace_logistic", "classifier",
                                             "uniform"};
    if (!kinds.count(c.kind)) throw ConfigError("config: unknown constraint kind '" + c.kind + "'");
    if (j.contains("centers")) c.centers = detail::parse_matrix(j.at("centers"), "constraint.centers");
    if (j.contains("weights")) c.weights = j.at("weights").get<Vec>();
    c.var = j.value("var", c.var);
    if (j.contains("normal")) c.normal = j.at("normal").get<Vec>();
    c.offset = j.value("offset", c.offset);
    c.sharpness = j.value("sharpness", c.sharpness);
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.label = j.value("label", c.label);
    return c;
}

inline TrainConfig parse_sampler_spec(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j,
        {"T", "gamma_start", "gamma_end", "batch", "lr_drift", "lr_logz", "steps", "buffer_prob",
         "exploration_scale", "beta_start", "beta_final", "anneal_steps", "buffer_capacity",
         "buffer_mode", "buffer_reward_fraction", "hidden", "metrics_every"},
        "sampler");
    TrainConfig c;
    c.T = j.value("T", c.T);
    c.gamma_start = j.value("gamma_start", c.gamma_start);
    c.gamma_end = j.value("gamma_end", c.gamma_end);
    c.batch = j.value("batch", c.batch);
    c.lr_drift = j.value("lr_drift", c.lr_drift);
    c.lr_logz = j.value("lr_logz", c.lr_logz);
    c.steps = j.value("steps", c.steps);
    c.buffer_prob = j.value("buffer_prob", c.buffer_prob);
    c.exploration_scale = j.value("exploration_scale", c.exploration_scale);
    c.temperature.beta_start = j.value("beta_start", c.temperature.beta_start);
    c.temperature.beta_final = j.value("beta_final", c.temperature.beta_final);
    c.temperature.anneal_steps = j.value("anneal_steps", c.temperature.anneal_steps);
    c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
    const std::string mode = j.value("buffer_mode", std::string("uniform"));
    if (mode == "uniform")
        c.buffer_mode = ReplayBuffer::Mode::uniform;
    else if (mode == "mixed_reward")
        c.buffer_mode = ReplayBuffer::Mode::mixed_reward;
    else
        throw ConfigError("config: unknown buffer_mode '" + mode + "'");
    c.buffer_reward_fraction = j.value("buffer_reward_fraction", c.buffer_reward_fraction);
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<int>>();
    c.metrics_every = j.value("metrics_every", c.metrics_every);
    c.validate();
    return c;
}

inline HmcConfig parse_hmc_spec(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"step_size", "leapfrog_steps", "burn_in", "thinning", "chain_length", "chains", "seed"},
        "hmc");
    HmcConfig c;
    c.step_size = j.value("step_size", c.step_size);
    c.leapfrog_steps = j.value("leapfrog_steps", c.leapfrog_steps);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.thinning = j.value("thinning", c.thinning);
    c.chain_length = j.value("chain_length", c.chain_length);
    c.chains = j.value("chains", c.chains);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

inline RwConfig parse_rw_spec(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"proposal_std", "iterations", "chains", "collect_at", "seed"},
                                "rw");
    RwConfig c;
    c.proposal_std = j.value("proposal_std", c.proposal_std);
    c.iterations = j.value("iterations", c.iterations);
    c.chains = j.value("chains", c.chains);
    if (j.contains("collect_at")) c.collect_at = j.at("collect_at").get<std::vector<int>>();
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

inline EvalSpec parse_eval_spec(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"oracle_n", "grid_bins", "mode_radius", "mode_centers", "sample_n"}, "eval");
    EvalSpec e;
    e.oracle_n = j.value("oracle_n", e.oracle_n);
    e.grid_bins = j.value("grid_bins", e.grid_bins);
    e.mode_radius = j.value("mode_radius", e.mode_radius);
    if (j.contains("mode_centers"))
        e.mode_centers = detail::parse_matrix(j.at("mode_centers"), "eval.mode_centers");
    e.sample_n = j.value("sample_n", e.sample_n);
    return e;
}

inline RunConfig parse_config_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"task", "seed", "out", "prior", "constraint", "sampler", "hmc", "rw", "eval"},
        "config root");
    RunConfig c;
    c.task = j.value("task", c.task);
    if (!j.contains("seed")) throw ConfigError("config: seed is mandatory");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out_dir = j.value("out", c.out_dir);
    if (!j.contains("prior")) throw ConfigError("config: prior is required");
    c.prior = parse_prior_spec(j.at("prior"));
    c.constraint = parse_constraint_spec(j.value("constraint", nlohmann::json::object()));
    c.sampler = parse_sampler_spec(j.value("sampler", nlohmann::json::object()));
    // classifier constraints default to annealed tempering unless overridden
    if (c.constraint.kind == "classifier") {
        const nlohmann::json s = j.value("sampler", nlohmann::json::object());
        if (!s.contains("beta_start") && !s.contains("beta_final") && !s.contains("anneal_steps")) {
            c.sampler.temperature.beta_start = 2.0;
            c.sampler.temperature.beta_final = 4.0;
            c.sampler.temperature.anneal_steps = 2000;
        }
    }
    c.hmc = parse_hmc_spec(j.value("hmc", nlohmann::json::object()));
    c.rw = parse_rw_spec(j.value("rw", nlohmann::json::object()));
    c.eval = parse_eval_spec(j.value("eval", nlohmann::json::object()));
    return c;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_config_json(j);
}

// ---- effective config emission (round-trip identity) ---------------------

inline nlohmann::json effective_config(const RunConfig& c) {
    nlohmann::json j;
    j["task"] = c.task;
    j["seed"] = c.seed;
    j["out"] = c.out_dir;
    nlohmann::json p;
    p["kind"] = c.prior.kind;
    if (!c.prior.A.empty()) {
        const int d = static_cast<int>(c.prior.b.size());
        nlohmann::json rows = nlohmann::json::array();
        for (int i = 0; i < d; ++i)
            rows.push_back(Vec(c.prior.A.begin() + static_cast<long>(i) * d,
                               c.prior.A.begin() + static_cast<long>(i + 1) * d));
        p["A"] = rows;
    }
    if (!c.prior.b.empty()) p["b"] = c.prior.b;
    if (!c.prior.checkpoint.empty()) p["checkpoint"] = c.prior.checkpoint;
    p["hidden"] = c.prior.hidden;
    p["d_noise"] = c.prior.d_noise;
    p["d_latent"] = c.prior.d_latent;
    p["d_data"] = c.prior.d_data;
    p["dataset"] = c.prior.dataset;
    p["source"] = c.prior.source;
    p["n_euler"] = c.prior.n_euler;
    p["train_steps"] = c.prior.train_steps;
    p["train_batch"] = c.prior.train_batch;
    p["train_lr"] = c.prior.train_lr;
    p["noise_scale"] = c.prior.noise_scale;
    p["data_count"] = c.prior.data_count;
    j["prior"] = p;
    nlohmann::json k;
    k["kind"] = c.constraint.kind;
    if (!c.constraint.centers.empty()) k["centers"] = c.constraint.centers;
    if (!c.constraint.weights.empty()) k["weights"] = c.constraint.weights;
    k["var"] = c.constraint.var;
    if (!c.constraint.normal.empty()) k["normal"] = c.constraint.normal;
    k["offset"] = c.constraint.offset;
    k["sharpness"] = c.constraint.sharpness;
    if (!c.constraint.checkpoint.empty()) k["checkpoint"] = c.constraint.checkpoint;
    k["label"] = c.constraint.label;
    j["constraint"] = k;
    nlohmann::json s;
    s["T"] = c.sampler.T;
    s["gamma_start"] = c.sampler.gamma_start;
    s["gamma_end"] = c.sampler.gamma_end;
    s["batch"] = c.sampler.batch;
    s["lr_drift"] = c.sampler.lr_drift;
    s["lr_logz"] = c.sampler.lr_logz;
    s["steps"] = c.sampler.steps;
    s["buffer_prob"] = c.sampler.buffer_prob;
    s["exploration_scale"] = c.sampler.exploration_scale;
    s["beta_start"] = c.sampler.temperature.beta_start;
    s["beta_final"] = c.sampler.temperature.beta_final;
    s["anneal_steps"] = c.sampler.temperature.anneal_steps;
    s["buffer_capacity"] = c.sampler.buffer_capacity;
    s["buffer_mode"] =
        c.sampler.buffer_mode == ReplayBuffer::Mode::uniform ? "uniform" : "mixed_reward";
    s["buffer_reward_fraction"] = c.sampler.buffer_reward_fraction;
    s["hidden"] = c.sampler.hidden;
    s["metrics_every"] = c.sampler.metrics_every;
    j["sampler"] = s;
    nlohmann::json h;
    h["step_size"] = c.hmc.step_size;
    h["leapfrog_steps"] = c.hmc.leapfrog_steps;
    h["burn_in"] = c.hmc.burn_in;
    h["thinning"] = c.hmc.thinning;
    h["chain_length"] = c.hmc.chain_length;
    h["chains"] = c.hmc.chains;
    h["seed"] = c.hmc.seed;
    j["hmc"] = h;
    nlohmann::json r;
    r["proposal_std"] = c.rw.proposal_std;
    r["iterations"] = c.rw.iterations;
    r["chains"] = c.rw.chains;
    r["collect_at"] = c.rw.collect_at;
    r["seed"] = c.rw.seed;
    j["rw"] = r;
    nlohmann::json e;
    e["oracle_n"] = c.eval.oracle_n;
    e["grid_bins"] = c.eval.grid_bins;
    e["mode_radius"] = c.eval.mode_radius;
    if (!c.eval.mode_centers.empty()) e["mode_centers"] = c.eval.mode_centers;
    e["sample_n"] = c.eval.sample_n;
    j["eval"] = e;
    return j;
}

inline std::string config_hash(const RunConfig& c) {
    const std::string s = effective_config(c).dump();
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- building runtime objects from specs ----------------------------------

inline PriorMap build_prior(const PriorSpec& spec, std::uint64_t seed) {
    if (spec.kind == "affine") {
        if (spec.A.empty() || spec.b.empty()) throw ConfigError("config: affine prior needs A and b");
        return affine_prior(spec.A, spec.b);
    }
    if (spec.kind == "swiss_roll") return swiss_roll_prior();
    if (spec.kind == "mlp_generator") {
        if (!spec.checkpoint.empty()) {
            Checkpoint c = load_checkpoint(spec.checkpoint);
            return mlp_generator_prior(get_mlp(c, "gen"));
        }
        RngStream rng(seed, 9000);
        return mlp_generator_prior(
            make_mlp(spec.d_noise, spec.hidden, spec.d_data, Activation::tanh, rng));
    }
    if (spec.kind == "vae_decoder") {
        if (!spec.checkpoint.empty()) {
            Checkpoint c = load_checkpoint(spec.checkpoint);
            return vae_decoder_prior(get_mlp(c, "mu"), get_mlp(c, "log_sigma"));
        }
        RngStream rng(seed, 9001);
        MlpParams mu = make_mlp(spec.d_latent, spec.hidden, spec.d_data, Activation::tanh, rng);
        MlpParams ls = make_mlp(spec.d_latent, {16}, 1, Activation::tanh, rng);
        // center the decoder's log observation noise at -2 (sigma ~ 0.14); a
        // zero-centered random net would put sigma near 1, which no decoder
        // worth outsourcing to actually has
        ls.layers.back().b[0] -= 2.0;
        return vae_decoder_prior(std::move(mu), std::move(ls));
    }
    if (spec.kind == "cnf") {
        if (spec.checkpoint.empty())
            throw ConfigError("config: cnf prior needs a checkpoint (run make-prior first)");
        Checkpoint c = load_checkpoint(spec.checkpoint);
        VelocityField vf;
        vf.net = get_mlp(c, "vf");
        vf.n_euler = c.extra.at("n_euler").get<int>();
        return cnf_prior(std::move(vf));
    }
    throw ConfigError("config: unknown prior kind '" + spec.kind + "'");
}

inline Constraint build_constraint(const ConstraintSpec& spec) {
    if (spec.kind == "uniform") return uniform_constraint();
    if (spec.kind == "gaussian_mixture")
        return gaussian_mixture_constraint(spec.centers, spec.weights, spec.var);
    if (spec.kind == "halfspace_logistic")
        return halfspace_logistic_constraint(spec.normal, spec.offset, spec.sharpness);
    if (spec.kind == "classifier") {
        if (spec.checkpoint.empty()) throw ConfigError("config: classifier constraint needs checkpoint");
        Checkpoint c = load_checkpoint(spec.checkpoint);
        return classifier_constraint(get_mlp(c, "clf"), spec.label);
    }
    throw ConfigError("config: unknown constraint kind '" + spec.kind + "'");
}

inline OutsourcedTarget build_target(const RunConfig& cfg) {
    return make_target(build_prior(cfg.prior, cfg.seed), build_constraint(cfg.constraint),
                       cfg.sampler.temperature, cfg.task);
}

}  // namespace outsampler
