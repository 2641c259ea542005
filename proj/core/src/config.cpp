#include "avlae/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace avlae {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& section) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.contains(it.key())) {
            throw ConfigError("unknown key \"" + it.key() + "\" in section \"" + section + "\"");
        }
    }
}

const json* section(const json& root, const char* name) {
    auto it = root.find(name);
    if (it == root.end()) return nullptr;
    if (!it->is_object()) throw ConfigError(std::string("section \"") + name + "\" must be an object");
    return &*it;
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("key \"") + key + "\" has the wrong type");
    }
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown_keys(root, {"model", "optim", "flow", "data", "ablation", "io"}, "<root>");

    RunConfig cfg;
    if (const json* m = section(root, "model")) {
        reject_unknown_keys(*m, {"d", "T", "H", "W", "channels"}, "model");
        read(*m, "d", cfg.model.d);
        read(*m, "T", cfg.model.T);
        read(*m, "H", cfg.model.H);
        read(*m, "W", cfg.model.W);
        if (auto it = m->find("channels"); it != m->end()) {
            if (!it->is_object()) throw ConfigError("model.channels must be an object");
            reject_unknown_keys(*it, {"generator", "encoder", "discriminator", "hidden"},
                                "model.channels");
            read(*it, "generator", cfg.model.channels.generator);
            read(*it, "encoder", cfg.model.channels.encoder);
            read(*it, "discriminator", cfg.model.channels.discriminator);
            read(*it, "hidden", cfg.model.channels.hidden);
        }
    }
    if (const json* o = section(root, "optim")) {
        reject_unknown_keys(
            *o, {"alpha", "beta1", "beta2", "k1", "k2", "batch", "steps", "seed", "gen_loss", "rec_norm"},
            "optim");
        read(*o, "alpha", cfg.optim.alpha);
        read(*o, "beta1", cfg.optim.beta1);
        read(*o, "beta2", cfg.optim.beta2);
        read(*o, "k1", cfg.optim.k1);
        read(*o, "k2", cfg.optim.k2);
        read(*o, "batch", cfg.optim.batch);
        read(*o, "steps", cfg.optim.steps);
        read(*o, "seed", cfg.optim.seed);
        read(*o, "gen_loss", cfg.optim.gen_loss);
        read(*o, "rec_norm", cfg.optim.rec_norm);
    }
    if (const json* f = section(root, "flow")) {
        reject_unknown_keys(*f, {"iterations", "smoothness", "scale"}, "flow");
        read(*f, "iterations", cfg.flow.iterations);
        read(*f, "smoothness", cfg.flow.smoothness);
        read(*f, "scale", cfg.flow.scale);
    }
    if (const json* d = section(root, "data")) {
        reject_unknown_keys(
            *d, {"source", "directory", "n_videos", "palette", "background", "seed", "flip"}, "data");
        read(*d, "source", cfg.data.source);
        read(*d, "directory", cfg.data.directory);
        read(*d, "n_videos", cfg.data.n_videos);
        read(*d, "palette", cfg.data.palette);
        read(*d, "background", cfg.data.background);
        read(*d, "seed", cfg.data.seed);
        read(*d, "flip", cfg.data.flip);
    }
    if (const json* a = section(root, "ablation")) {
        reject_unknown_keys(*a, {"k1_zero", "k2_zero", "no_motion_encoder"}, "ablation");
        read(*a, "k1_zero", cfg.ablation.k1_zero);
        read(*a, "k2_zero", cfg.ablation.k2_zero);
        read(*a, "no_motion_encoder", cfg.ablation.no_motion_encoder);
    }
    if (const json* i = section(root, "io")) {
        reject_unknown_keys(*i, {"out_dir", "checkpoint_every", "log_every"}, "io");
        read(*i, "out_dir", cfg.io.out_dir);
        read(*i, "checkpoint_every", cfg.io.checkpoint_every);
        read(*i, "log_every", cfg.io.log_every);
    }
    validate_config(cfg);
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string dump_config(const RunConfig& cfg) {
    json root;
    root["model"] = {
        {"d", cfg.model.d},
        {"T", cfg.model.T},
        {"H", cfg.model.H},
        {"W", cfg.model.W},
        {"channels",
         {{"generator", cfg.model.channels.generator},
          {"encoder", cfg.model.channels.encoder},
          {"discriminator", cfg.model.channels.discriminator},
          {"hidden", cfg.model.channels.hidden}}},
    };
    root["optim"] = {
        {"alpha", cfg.optim.alpha},   {"beta1", cfg.optim.beta1}, {"beta2", cfg.optim.beta2},
        {"k1", cfg.optim.k1},         {"k2", cfg.optim.k2},       {"batch", cfg.optim.batch},
        {"steps", cfg.optim.steps},   {"seed", cfg.optim.seed},   {"gen_loss", cfg.optim.gen_loss},
        {"rec_norm", cfg.optim.rec_norm},
    };
    root["flow"] = {
        {"iterations", cfg.flow.iterations},
        {"smoothness", cfg.flow.smoothness},
        {"scale", cfg.flow.scale},
    };
    root["data"] = {
        {"source", cfg.data.source},     {"directory", cfg.data.directory},
        {"n_videos", cfg.data.n_videos}, {"palette", cfg.data.palette},
        {"background", cfg.data.background}, {"seed", cfg.data.seed},
        {"flip", cfg.data.flip},
    };
    root["ablation"] = {
        {"k1_zero", cfg.ablation.k1_zero},
        {"k2_zero", cfg.ablation.k2_zero},
        {"no_motion_encoder", cfg.ablation.no_motion_encoder},
    };
    root["io"] = {
        {"out_dir", cfg.io.out_dir},
        {"checkpoint_every", cfg.io.checkpoint_every},
        {"log_every", cfg.io.log_every},
    };
    return root.dump(2);
}

std::uint64_t config_fingerprint(const RunConfig& cfg) {
    // FNV-1a 64 over the canonical dump (nlohmann objects iterate key-sorted).
    const std::string text = dump_config(cfg);
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void validate_config(const RunConfig& cfg) {
    const auto& m = cfg.model;
    if (m.d < 1) throw ConfigError("model.d must be >= 1");
    if (m.T < 2) throw ConfigError("model.T must be >= 2");
    if (m.H < 8 || m.W < 8) throw ConfigError("model.H and model.W must be >= 8");
    if (m.channels.generator < 1 || m.channels.encoder < 1 || m.channels.discriminator < 1) {
        throw ConfigError("model.channels entries must be >= 1");
    }
    if (m.channels.hidden < 0) throw ConfigError("model.channels.hidden must be >= 0");

    const auto& o = cfg.optim;
    if (!(o.alpha > 0)) throw ConfigError("optim.alpha must be positive");
    if (!(o.beta1 >= 0 && o.beta1 < 1)) throw ConfigError("optim.beta1 must lie in [0, 1)");
    if (!(o.beta2 >= 0 && o.beta2 < 1)) throw ConfigError("optim.beta2 must lie in [0, 1)");
    if (o.k1 < 0 || o.k2 < 0) throw ConfigError("optim.k1 and optim.k2 must be >= 0");
    if (o.batch < 1) throw ConfigError("optim.batch must be >= 1");
    if (o.steps < 0) throw ConfigError("optim.steps must be >= 0");
    if (o.gen_loss != "saturating" && o.gen_loss != "non_saturating") {
        throw ConfigError("optim.gen_loss must be \"saturating\" or \"non_saturating\"");
    }
    if (o.rec_norm != "l2" && o.rec_norm != "l1") {
        throw ConfigError("optim.rec_norm must be \"l2\" or \"l1\"");
    }

    const auto& f = cfg.flow;
    if (f.iterations < 1) throw ConfigError("flow.iterations must be >= 1");
    if (!(f.smoothness > 0)) throw ConfigError("flow.smoothness must be positive");
    if (f.scale < 1) throw ConfigError("flow.scale must be >= 1");
    if (m.H % f.scale != 0 || m.W % f.scale != 0) {
        throw ConfigError("flow.scale must divide model.H and model.W");
    }

    const auto& d = cfg.data;
    if (d.source != "synthetic" && d.source != "directory") {
        throw ConfigError("data.source must be \"synthetic\" or \"directory\"");
    }
    if (d.source == "directory" && d.directory.empty()) {
        throw ConfigError("data.source is \"directory\" but data.directory is empty");
    }
    if (d.n_videos < 1) throw ConfigError("data.n_videos must be >= 1");
    if (d.palette < 1 || d.palette > 6) throw ConfigError("data.palette must lie in [1, 6]");
    if (d.background != "solid" && d.background != "gradient") {
        throw ConfigError("data.background must be \"solid\" or \"gradient\"");
    }

    if (cfg.io.checkpoint_every < 1) throw ConfigError("io.checkpoint_every must be >= 1");
    if (cfg.io.log_every < 1) throw ConfigError("io.log_every must be >= 1");
}

}  // namespace avlae
