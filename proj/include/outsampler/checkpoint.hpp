#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "outsampler/mlp.hpp"
#include "outsampler/tape.hpp"

namespace outsampler {

struct Tensor {
    std::vector<int> shape;
    Vec data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (int s : shape) n *= static_cast<std::size_t>(s);
        return n;
    }
};

/// Named-tensor checkpoint. Serialized as JSON with doubles stored as
/// hex-float strings, so load(save(c)) == c bit-exactly; tensor keys are
/// emitted in lexicographic order (std::map ordering).
struct Checkpoint {
    std::string kind;
    std::string config_hash;
    long step = 0;
    int format_version = 1;
    nlohmann::json extra = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;

    bool operator==(const Checkpoint& o) const {
        return kind == o.kind && config_hash == o.config_hash && step == o.step &&
               format_version == o.format_version && extra == o.extra &&
               [&] {
                   if (tensors.size() != o.tensors.size()) return false;
                   for (const auto& [k, t] : tensors) {
                       auto it = o.tensors.find(k);
                       if (it == o.tensors.end() || it->second.shape != t.shape ||
                           it->second.data != t.data)
                           return false;
                   }
                   return true;
               }();
    }
};

namespace detail {

inline std::string double_to_hex(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double hex_to_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw std::runtime_error("checkpoint: malformed float literal '" + s + "'");
    return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
    nlohmann::json j;
    j["meta"]["kind"] = c.kind;
    j["meta"]["config_hash"] = c.config_hash;
    j["meta"]["step"] = c.step;
    j["meta"]["format_version"] = c.format_version;
    j["meta"]["extra"] = c.extra;
    j["tensors"] = nlohmann::json::object();
    for (const auto& [name, t] : c.tensors) {
        nlohmann::json jt;
        jt["shape"] = t.shape;
        std::vector<std::string> data;
        data.reserve(t.data.size());
        for (double v : t.data) data.push_back(detail::double_to_hex(v));
        jt["data"] = data;
        j["tensors"][name] = jt;
    }
    return j.dump(2) + "\n";
}

inline Checkpoint deserialize_checkpoint(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Checkpoint c;
    const auto& meta = j.at("meta");
    c.kind = meta.at("kind").get<std::string>();
    c.config_hash = meta.at("config_hash").get<std::string>();
    c.step = meta.at("step").get<long>();
    c.format_version = meta.at("format_version").get<int>();
    if (c.format_version != 1)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(c.format_version));
    c.extra = meta.value("extra", nlohmann::json::object());
    for (const auto& [name, jt] : j.at("tensors").items()) {
        Tensor t;
        t.shape = jt.at("shape").get<std::vector<int>>();
        for (const auto& s : jt.at("data")) t.data.push_back(detail::hex_to_double(s.get<std::string>()));
        if (t.numel() != t.data.size())
            throw std::runtime_error("checkpoint: tensor '" + name + "' shape/data length mismatch");
        c.tensors.emplace(name, std::move(t));
    }
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    f << serialize_checkpoint(c);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(text);
}

// ---- MLP <-> tensor map helpers -----------------------------------------

inline void put_mlp(Checkpoint& c, const std::string& prefix, const MlpParams& p) {
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        const Layer& l = p.layers[k];
        c.tensors[prefix + "." + std::to_string(k) + ".W"] = Tensor{{l.out, l.in}, l.W};
        c.tensors[prefix + "." + std::to_string(k) + ".b"] = Tensor{{l.out}, l.b};
    }
    c.extra[prefix + "_layers"] = static_cast<int>(p.layers.size());
    c.extra[prefix + "_act"] = p.act == Activation::tanh    ? "tanh"
                               : p.act == Activation::gelu  ? "gelu"
                                                            : "identity";
}

inline MlpParams get_mlp(const Checkpoint& c, const std::string& prefix) {
    MlpParams p;
    const int n = c.extra.at(prefix + "_layers").get<int>();
    const std::string act = c.extra.at(prefix + "_act").get<std::string>();
    p.act = act == "tanh" ? Activation::tanh : act == "gelu" ? Activation::gelu : Activation::identity;
    for (int k = 0; k < n; ++k) {
        const Tensor& W = c.tensors.at(prefix + "." + std::to_string(k) + ".W");
        const Tensor& b = c.tensors.at(prefix + "." + std::to_string(k) + ".b");
        Layer l;
        l.out = W.shape.at(0);
        l.in = W.shape.at(1);
        l.W = W.data;
        l.b = b.data;
        p.layers.push_back(std::move(l));
    }
    p.validate();
    return p;
}

}  // namespace outsampler
