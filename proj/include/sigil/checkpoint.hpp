#pragma once

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "sigil/denoiser.hpp"

namespace sigil {

struct CheckpointMeta {
    std::string system   = "symbiotic";
    std::string position = "decoder";
    double lambda        = 0.6;
    uint64_t train_seed  = 0;
    int64_t steps_trained = 0;
};

inline nlohmann::json config_to_json(const DenoiserConfig& cfg) {
    return nlohmann::json{
        {"image_size", cfg.image_size},     {"latent_channels", cfg.latent_channels},
        {"base_channels", cfg.base_channels}, {"num_scales", cfg.num_scales},
        {"self_attn", cfg.sites_text()},    {"token_count", cfg.token_count},
        {"gn_groups", cfg.gn_groups},       {"time_dim", cfg.time_dim},
    };
}

inline DenoiserConfig config_from_json(const nlohmann::json& j) {
    DenoiserConfig cfg;
    cfg.image_size      = j.at("image_size").get<int>();
    cfg.latent_channels = j.at("latent_channels").get<int>();
    cfg.base_channels   = j.at("base_channels").get<int>();
    cfg.num_scales      = j.at("num_scales").get<int>();
    cfg.self_attn_sites = parse_sites(j.at("self_attn").get<std::string>());
    cfg.token_count     = j.at("token_count").get<int>();
    cfg.gn_groups       = j.at("gn_groups").get<int>();
    cfg.time_dim        = j.at("time_dim").get<int>();
    return cfg;
}

// Single binary file: magic, version, JSON header (config + meta), then the
// named parameter arrays as little-endian raw data.
constexpr char kCheckpointMagic[8] = {'S', 'G', 'I', 'L', 'C', 'K', 'P', '1'};

template <class T>
void save_checkpoint(const std::string& path, const Denoiser<T>& model, const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path);
    }
    out.write(kCheckpointMagic, 8);
    uint32_t version = 1;
    out.write((const char*)&version, 4);

    nlohmann::json header = {
        {"config", config_to_json(model.cfg)},
        {"meta",
         {{"system", meta.system},
          {"position", meta.position},
          {"lambda", meta.lambda},
          {"train_seed", meta.train_seed},
          {"steps_trained", meta.steps_trained}}},
    };
    std::string htext = header.dump();
    uint64_t hlen     = htext.size();
    out.write((const char*)&hlen, 8);
    out.write(htext.data(), (std::streamsize)hlen);

    uint64_t count = model.params.names.size();
    out.write((const char*)&count, 8);
    for (auto& name : model.params.names) {
        const auto& a = model.params.at(name);
        uint32_t nlen = (uint32_t)name.size();
        out.write((const char*)&nlen, 4);
        out.write(name.data(), nlen);
        uint8_t dtype = sizeof(T);
        out.write((const char*)&dtype, 1);
        uint8_t ndim = (uint8_t)a.shape.size();
        out.write((const char*)&ndim, 1);
        for (int64_t d : a.shape) {
            out.write((const char*)&d, 8);
        }
        out.write((const char*)a.data(), (std::streamsize)(a.numel() * (int64_t)sizeof(T)));
    }
    if (!out) {
        throw std::runtime_error("short write on checkpoint " + path);
    }
}

template <class T>
Denoiser<T> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + path);
    }
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw std::runtime_error("bad checkpoint magic in " + path);
    }
    uint32_t version = 0;
    in.read((char*)&version, 4);
    if (version != 1) {
        throw std::runtime_error("unsupported checkpoint version");
    }
    uint64_t hlen = 0;
    in.read((char*)&hlen, 8);
    std::string htext(hlen, '\0');
    in.read(htext.data(), (std::streamsize)hlen);
    auto header = nlohmann::json::parse(htext);

    Denoiser<T> model;
    model.cfg = config_from_json(header.at("config"));
    model.cfg.canonicalize_sites();
    model.cfg.validate();
    if (meta_out) {
        auto& m             = header.at("meta");
        meta_out->system    = m.at("system").get<std::string>();
        meta_out->position  = m.at("position").get<std::string>();
        meta_out->lambda    = m.at("lambda").get<double>();
        meta_out->train_seed = m.at("train_seed").get<uint64_t>();
        meta_out->steps_trained = m.at("steps_trained").get<int64_t>();
    }

    uint64_t count = 0;
    in.read((char*)&count, 8);
    for (uint64_t i = 0; i < count; i++) {
        uint32_t nlen = 0;
        in.read((char*)&nlen, 4);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        uint8_t dtype = 0, ndim = 0;
        in.read((char*)&dtype, 1);
        in.read((char*)&ndim, 1);
        if (dtype != sizeof(T)) {
            throw std::runtime_error("checkpoint dtype mismatch for " + name);
        }
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) {
            in.read((char*)&d, 8);
        }
        ArrayND<T> a(shape);
        in.read((char*)a.data(), (std::streamsize)(a.numel() * (int64_t)sizeof(T)));
        model.params.add(name, std::move(a));
    }
    if (!in) {
        throw std::runtime_error("truncated checkpoint " + path);
    }
    return model;
}

}  // namespace sigil
