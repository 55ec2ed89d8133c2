#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "outsampler/config.hpp"

using namespace outsampler;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.kind = "sampler";
    c.config_hash = "deadbeefdeadbeef";
    c.step = 123;
    c.extra["note"] = "hi";
    c.tensors["w"] = Tensor{{2, 3}, {0.1, -2.5, 1e-300, 3.141592653589793, -0.0, 7.0}};
    c.tensors["b"] = Tensor{{3}, {1.0 / 3.0, std::nextafter(1.0, 2.0), -1e308}};
    return c;
}

std::string tmp_path(const char* name) {
    return std::string("/tmp/outsampler_test_") + name;
}

nlohmann::json minimal_config_json() {
    nlohmann::json j;
    j["seed"] = 7;
    j["prior"] = {{"kind", "swiss_roll"}};
    return j;
}

}  // namespace

TEST_CASE("checkpoint: hex literals round-trip doubles bit-exactly") {
    for (double v : {0.1, -0.3, 1e-300, -1e308, 4.9406564584124654e-324, 0.0, 2.5}) {
        const std::string s = detail::double_to_hex(v);
        const double back = detail::hex_to_double(s);
        CHECK(std::memcmp(&back, &v, sizeof v) == 0);
    }
    CHECK_THROWS(detail::hex_to_double("not-a-number"));
    CHECK_THROWS(detail::hex_to_double("0x1p3junk"));
}

TEST_CASE("checkpoint: serialize/deserialize is the identity") {
    const Checkpoint c = sample_checkpoint();
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(c));
    CHECK(back == c);
    // and the serialized text itself is stable under a round trip
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(c));
}

TEST_CASE("checkpoint: file save/load round trip") {
    const Checkpoint c = sample_checkpoint();
    const std::string path = tmp_path("ckpt.json");
    save_checkpoint(path, c);
    CHECK(load_checkpoint(path) == c);
    std::remove(path.c_str());
    CHECK_THROWS(load_checkpoint(path));
}

TEST_CASE("checkpoint: shape/data length mismatch is rejected") {
    Checkpoint c = sample_checkpoint();
    std::string text = serialize_checkpoint(c);
    // drop one element from tensor "b" (3 hex literals) by rewriting its shape
    nlohmann::json j = nlohmann::json::parse(text);
    j["tensors"]["b"]["shape"] = std::vector<int>{4};
    CHECK_THROWS(deserialize_checkpoint(j.dump()));
}

TEST_CASE("checkpoint: unsupported format version is rejected") {
    Checkpoint c = sample_checkpoint();
    nlohmann::json j = nlohmann::json::parse(serialize_checkpoint(c));
    CHECK(j["meta"]["format_version"] == 1);
    j["meta"]["format_version"] = 2;
    CHECK_THROWS(deserialize_checkpoint(j.dump()));
}

TEST_CASE("checkpoint: mlp parameters survive a round trip exactly") {
    RngStream rng(5, 0);
    MlpParams p = make_mlp(3, {8, 8}, 2, Activation::gelu, rng);
    Checkpoint c;
    c.kind = "test";
    put_mlp(c, "net", p);
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(c));
    MlpParams q = get_mlp(back, "net");
    REQUIRE(q.layers.size() == p.layers.size());
    CHECK(q.act == p.act);
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        CHECK(q.layers[k].W == p.layers[k].W);
        CHECK(q.layers[k].b == p.layers[k].b);
    }
    const Vec x{0.3, -0.7, 1.1};
    CHECK(mlp_forward(q, x) == mlp_forward(p, x));
}

TEST_CASE("config: minimal document parses and fills defaults") {
    const RunConfig c = parse_config_json(minimal_config_json());
    CHECK(c.seed == 7);
    CHECK(c.task == "custom");
    CHECK(c.prior.kind == "swiss_roll");
    CHECK(c.constraint.kind == "uniform");
    CHECK(c.sampler.T == 25);
    CHECK(c.out_dir == "out");
}

TEST_CASE("config: unknown keys are rejected everywhere") {
    nlohmann::json j = minimal_config_json();
    j["stepz"] = 10;
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);

    j = minimal_config_json();
    j["sampler"] = {{"stepz", 10}};
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);

    j = minimal_config_json();
    j["prior"]["kine"] = "affine";
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);

    j = minimal_config_json();
    j["hmc"] = {{"stepsize", 0.1}};
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);
}

TEST_CASE("config: missing seed or prior is an error") {
    nlohmann::json j = minimal_config_json();
    j.erase("seed");
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);
    j = minimal_config_json();
    j.erase("prior");
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);
}

TEST_CASE("config: invalid enum values are rejected") {
    nlohmann::json j = minimal_config_json();
    j["prior"]["kind"] = "banana";
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);

    j = minimal_config_json();
    j["constraint"] = {{"kind", "banana"}};
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);

    j = minimal_config_json();
    j["sampler"] = {{"buffer_mode", "banana"}};
    CHECK_THROWS_AS(parse_config_json(j), ConfigError);
}

TEST_CASE("config: effective config re-parses to an identical effective config") {
    nlohmann::json j = minimal_config_json();
    j["task"] = "demo";
    j["out"] = "/tmp/outsampler_demo";
    j["sampler"] = {{"T", 10}, {"gamma_start", 9.0}, {"gamma_end", 0.2}, {"steps", 5},
                    {"hidden", std::vector<int>{16}}, {"buffer_mode", "mixed_reward"}};
    j["constraint"] = {{"kind", "gaussian_mixture"},
                       {"centers", std::vector<std::vector<double>>{{0.5, 0.3}, {-0.5, -0.3}}},
                       {"weights", std::vector<double>{0.5, 0.5}},
                       {"var", 0.0025}};
    j["rw"] = {{"collect_at", std::vector<int>{500, 1000}}};
    j["eval"] = {{"mode_centers", std::vector<std::vector<double>>{{0.5, 0.3}}}};
    const RunConfig c = parse_config_json(j);
    const nlohmann::json eff = effective_config(c);
    const RunConfig c2 = parse_config_json(eff);
    CHECK(effective_config(c2) == eff);
    CHECK(config_hash(c2) == config_hash(c));
}

TEST_CASE("config: hash is stable and sensitive") {
    const RunConfig a = parse_config_json(minimal_config_json());
    const RunConfig b = parse_config_json(minimal_config_json());
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    nlohmann::json j = minimal_config_json();
    j["seed"] = 8;
    CHECK(config_hash(parse_config_json(j)) != config_hash(a));
}

TEST_CASE("config: affine prior round trip builds a working map") {
    nlohmann::json j = minimal_config_json();
    j["prior"] = {{"kind", "affine"},
                  {"A", std::vector<std::vector<double>>{{2.0, 0.0}, {0.0, 1.0}}},
                  {"b", std::vector<double>{1.0, -1.0}}};
    const RunConfig c = parse_config_json(j);
    PriorMap p = build_prior(c.prior, c.seed);
    const Vec x = p.apply({1.0, 1.0});
    CHECK(x[0] == doctest::Approx(3.0));
    CHECK(x[1] == doctest::Approx(0.0));
    // the matrix survives effective-config emission
    const RunConfig c2 = parse_config_json(effective_config(c));
    CHECK(c2.prior.A == c.prior.A);
    CHECK(c2.prior.b == c.prior.b);
}

TEST_CASE("config: defaults match the documented run recipe") {
    const RunConfig c = parse_config_json(minimal_config_json());
    CHECK(c.sampler.T == 25);
    CHECK(c.sampler.buffer_prob == doctest::Approx(0.2));
    CHECK(c.hmc.step_size == doctest::Approx(1e-2));
    CHECK(c.hmc.leapfrog_steps == 5);
    CHECK(c.hmc.burn_in == 100);
    CHECK(c.rw.proposal_std == doctest::Approx(0.01));
    CHECK(c.rw.iterations == 1000);
    CHECK(c.rw.chains == 32);
    CHECK(c.sampler.temperature.beta_start == doctest::Approx(1.0));
    CHECK(c.sampler.temperature.beta_final == doctest::Approx(1.0));
    CHECK(c.sampler.temperature.anneal_steps == 0);
    nlohmann::json j = minimal_config_json();
    j["sampler"] = {{"beta_start", 2.0}, {"beta_final", 4.0}, {"anneal_steps", 2000}};
    const RunConfig a = parse_config_json(j);
    CHECK(a.sampler.temperature.beta(0) == doctest::Approx(2.0));
    CHECK(a.sampler.temperature.beta(1000) == doctest::Approx(3.0));
    CHECK(a.sampler.temperature.beta(3000) == doctest::Approx(4.0));
    // classifier constraints pull in the annealed-tempering default
    j = minimal_config_json();
    j["constraint"] = {{"kind", "classifier"}, {"checkpoint", "clf.json"}};
    const RunConfig b = parse_config_json(j);
    CHECK(b.sampler.temperature.beta_start == doctest::Approx(2.0));
    CHECK(b.sampler.temperature.beta_final == doctest::Approx(4.0));
    CHECK(b.sampler.temperature.anneal_steps == 2000);
    // explicit values win over the classifier default
    j["sampler"] = {{"beta_final", 1.5}};
    CHECK(parse_config_json(j).sampler.temperature.anneal_steps == 0);
    // and the default survives an effective-config round trip
    CHECK(parse_config_json(effective_config(b)).sampler.temperature.beta_start ==
          doctest::Approx(2.0));
}

TEST_CASE("config: build_target assembles prior and constraint") {
    nlohmann::json j = minimal_config_json();
    j["prior"] = {{"kind", "affine"}, {"A", std::vector<std::vector<double>>{{1.0}}},
                  {"b", std::vector<double>{0.0}}};
    j["constraint"] = {{"kind", "gaussian_mixture"},
                       {"centers", std::vector<std::vector<double>>{{1.0}}},
                       {"weights", std::vector<double>{1.0}},
                       {"var", 1.0}};
    const RunConfig c = parse_config_json(j);
    OutsourcedTarget t = build_target(c);
    // log R(0) = log N(0;0,1) + beta_final * log N(1;0+1... ) checked elsewhere;
    // here only that the pieces are wired: prior is identity, constraint is active
    CHECK(t.prior.apply({0.5})[0] == doctest::Approx(0.5));
    CHECK(t.constraint.log_r({1.0}) > t.constraint.log_r({3.0}));
}

TEST_CASE("config: malformed file and missing file raise ConfigError") {
    const std::string path = tmp_path("cfg.json");
    std::remove(path.c_str());
    CHECK_THROWS_AS(parse_config(path), ConfigError);
    {
        std::ofstream f(path);
        f << "{ not json";
    }
    CHECK_THROWS_AS(parse_config(path), ConfigError);
    std::remove(path.c_str());
}
