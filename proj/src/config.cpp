#include "sigil/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sigil {

const std::map<std::string, KeySpec>& RunConfig::schema() {
    static const std::map<std::string, KeySpec> s = {
        {"data.dir", {KeyType::text, "runs/data", "dataset directory"}},
        {"data.count", {KeyType::integer, "512", "training sample count"}},
        {"data.benchmark_count", {KeyType::integer, "48", "frozen benchmark sample count"}},
        {"data.image_size", {KeyType::integer, "64", "generated image size"}},
        {"data.seed", {KeyType::integer, "1", "dataset seed"}},
        {"data.category_weights", {KeyType::reals, "0.4,0.35,0.25", "glyph_text,shape_logo,tryon_patch weights"}},
        {"data.mask_area_min", {KeyType::real, "0.05", "min mask area fraction"}},
        {"data.mask_area_max", {KeyType::real, "0.35", "max mask area fraction"}},

        {"model.image_size", {KeyType::integer, "64", "model input size"}},
        {"model.latent_channels", {KeyType::integer, "3", "latent channels"}},
        {"model.base_channels", {KeyType::integer, "12", "channels at full resolution"}},
        {"model.num_scales", {KeyType::integer, "3", "down/up scale count"}},
        {"model.self_attn", {KeyType::text, "mid,dec2,dec1,dec0", "self-attention site list"}},
        {"model.token_count", {KeyType::integer, "16", "semantic tokens per group"}},
        {"model.groups", {KeyType::integer, "4", "groupnorm groups"}},
        {"model.time_dim", {KeyType::integer, "32", "timestep embedding dim"}},
        {"model.seed", {KeyType::integer, "3407", "parameter init seed"}},

        {"sched.train_steps", {KeyType::integer, "1000", "diffusion T"}},
        {"sched.beta_start", {KeyType::real, "1e-4", "linear beta start"}},
        {"sched.beta_end", {KeyType::real, "0.02", "linear beta end"}},

        {"train.steps", {KeyType::integer, "600", "optimizer steps"}},
        {"train.batch", {KeyType::integer, "8", "batch size"}},
        {"train.lr", {KeyType::real, "2e-4", "learning rate"}},
        {"train.lambda", {KeyType::real, "0.6", "sparse recycling threshold"}},
        {"train.cfg_drop", {KeyType::real, "0.1", "condition drop probability"}},
        {"train.system", {KeyType::text, "symbiotic", "symbiotic|controlnet|referencenet|blocked|scorer"}},
        {"train.position", {KeyType::text, "decoder", "delivery position: encoder|decoder|both"}},
        {"train.seed", {KeyType::integer, "7", "training seed"}},
        {"train.ckpt_every", {KeyType::integer, "200", "checkpoint cadence"}},
        {"train.threads", {KeyType::integer, "0", "worker threads (0 = hardware)"}},
        {"train.log_every", {KeyType::integer, "25", "loss log cadence"}},

        {"infer.steps", {KeyType::integer, "20", "sampler steps"}},
        {"infer.guidance", {KeyType::real, "1.5", "guidance scale w"}},
        {"infer.lambda_inf", {KeyType::real, "1.0", "inference delivery threshold"}},
        {"infer.seed", {KeyType::integer, "11", "inference seed"}},

        {"eval.pairs", {KeyType::integer, "32", "benchmark pairs to evaluate"}},
        {"eval.diversity_subjects", {KeyType::integer, "6", "subjects for diversity"}},
        {"eval.diversity_seeds", {KeyType::integer, "8", "seeds per subject for diversity"}},

        {"ablate.lambdas", {KeyType::reals, "0,0.2,0.4,0.6,0.8,1.0", "sparse sweep grid"}},
        {"ablate.interp_lambdas", {KeyType::reals, "0,0.25,0.5,0.75,1.0", "signature interpolation grid"}},
        {"ablate.budget_minutes", {KeyType::real, "0", "wall-clock budget, 0 = unlimited"}},

        {"out.dir", {KeyType::text, "runs/out", "output directory"}},
    };
    return s;
}

static void check_value(const std::string& key, KeyType type, const std::string& value) {
    try {
        size_t pos = 0;
        switch (type) {
            case KeyType::integer:
                (void)std::stoll(value, &pos);
                if (pos != value.size()) {
                    throw std::invalid_argument("trailing");
                }
                break;
            case KeyType::real:
                (void)std::stod(value, &pos);
                if (pos != value.size()) {
                    throw std::invalid_argument("trailing");
                }
                break;
            case KeyType::reals:
                for (auto& part : split_csv(value)) {
                    (void)std::stod(part);
                }
                break;
            case KeyType::text:
                break;
        }
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = schema().find(key);
    if (it == schema().end()) {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    check_value(key, it->second.type, value);
    kv[key] = value;
}

static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("config: cannot open " + path);
    }
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " has no '='");
        }
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string RunConfig::gets(const std::string& key) const {
    auto it = kv.find(key);
    if (it != kv.end()) {
        return it->second;
    }
    auto s = schema().find(key);
    if (s == schema().end()) {
        throw std::out_of_range("config: unknown key '" + key + "'");
    }
    return s->second.default_value;
}

int64_t RunConfig::geti(const std::string& key) const { return std::stoll(gets(key)); }
double RunConfig::getd(const std::string& key) const { return std::stod(gets(key)); }

std::vector<double> RunConfig::getds(const std::string& key) const {
    std::vector<double> out;
    for (auto& part : split_csv(gets(key))) {
        out.push_back(std::stod(part));
    }
    return out;
}

std::string RunConfig::resolved_text() const {
    std::ostringstream os;
    for (auto& [key, spec] : schema()) {
        os << key << " = " << gets(key) << "\n";
    }
    return os.str();
}

uint64_t RunConfig::config_hash() const {
    // FNV-1a over the canonical resolved text
    uint64_t h = 1469598103934665603ULL;
    for (char c : resolved_text()) {
        h ^= (uint64_t)(uint8_t)c;
        h *= 1099511628211ULL;
    }
    return h;
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("config: cannot write " + path);
    }
    out << "# resolved configuration (hash " << std::hex << config_hash() << std::dec << ")\n";
    out << resolved_text();
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !out.empty()) {
        out.push_back(trim(cur));
    }
    return out;
}

}  // namespace sigil
