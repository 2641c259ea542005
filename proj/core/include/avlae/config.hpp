#pragma once

// Run configuration. Mirrors the JSON config file consumed by the CLI:
// sections model / optim / flow / data / ablation / io, unknown keys
// rejected, flags > file > defaults precedence handled by the CLI layer.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "avlae/flow.hpp"

namespace avlae {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& message) : std::runtime_error(message) {}
};

struct ModelChannels {
    std::int64_t generator = 8;       // seed tensor carries 8x this many channels
    std::int64_t encoder = 16;        // appearance/motion encoder trunk base width
    std::int64_t discriminator = 16;  // video discriminator trunk base width
    std::int64_t hidden = 0;          // FC head width of D_I / D_V; 0 = 2*d
};

struct ModelConfig {
    std::int64_t d = 128;
    std::int64_t T = 16;
    std::int64_t H = 128;
    std::int64_t W = 128;
    ModelChannels channels;

    std::int64_t head_width() const { return channels.hidden > 0 ? channels.hidden : 2 * d; }
};

struct OptimConfig {
    double alpha = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double k1 = 1.0;
    double k2 = 1.0;
    std::int64_t batch = 8;
    std::int64_t steps = 2000;
    std::uint64_t seed = 1;
    std::string gen_loss = "saturating";  // or "non_saturating"
    std::string rec_norm = "l2";          // or "l1"
};

struct DataConfig {
    std::string source = "synthetic";  // or "directory"
    std::string directory;
    std::int64_t n_videos = 512;
    std::int64_t palette = 2;          // colors per shape, at most 6
    std::string background = "solid";  // or "gradient"
    std::uint64_t seed = 7;
    bool flip = false;                 // horizontal-flip augmentation on ingest
};

struct AblationConfig {
    bool k1_zero = false;
    bool k2_zero = false;
    bool no_motion_encoder = false;
};

struct IoConfig {
    std::string out_dir = "runs/default";
    std::int64_t checkpoint_every = 500;
    std::int64_t log_every = 10;
};

struct RunConfig {
    ModelConfig model;
    OptimConfig optim;
    FlowParams flow;
    DataConfig data;
    AblationConfig ablation;
    IoConfig io;

    // The motion-reconstruction weight is meaningless without a motion
    // encoder, so the ablation that removes E_M forces it to zero.
    double effective_k1() const {
        return (ablation.k1_zero || ablation.no_motion_encoder) ? 0.0 : optim.k1;
    }
    double effective_k2() const { return ablation.k2_zero ? 0.0 : optim.k2; }
    bool use_motion_encoder() const { return !ablation.no_motion_encoder; }
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config_file(const std::string& path);
std::string dump_config(const RunConfig& cfg);

/// FNV-1a over the canonical JSON serialization; identifies a checkpoint's config.
std::uint64_t config_fingerprint(const RunConfig& cfg);

/// Cross-field checks shared by every entry point.
void validate_config(const RunConfig& cfg);

}  // namespace avlae
