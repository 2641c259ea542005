#pragma once

// Synthetic factorized video dataset plus frame-sequence import/export.
//
// Every video shows one softly antialiased object (square, circle or cross in
// a palette color) translating at a constant velocity over a static or
// slowly drifting background. Appearance labels (shape x color) and motion
// labels (8 compass headings x speed 1 or 2 px/frame) are drawn independently
// and the trajectory is clipped by construction so the object never leaves
// the frame.

#include <cstdint>
#include <string>
#include <vector>

#include "avlae/tensor.hpp"

namespace avlae {

constexpr int kShapeCount = 3;      // square, circle, cross
constexpr int kDirectionCount = 8;  // compass headings, 0 = east, counterclockwise
constexpr int kSpeedCount = 2;      // 1 or 2 px/frame

struct SyntheticSpec {
    std::int64_t n_videos = 512;
    std::int64_t T = 8, H = 32, W = 32;
    std::int64_t palette = 2;          // colors per shape, at most 6
    std::string background = "solid";  // or "gradient"
    std::uint64_t seed = 7;
};

struct VideoLabel {
    int shape = 0;
    int color = 0;
    int direction = 0;  // heading index
    int speed = 0;      // 0 -> 1 px/frame, 1 -> 2 px/frame
    int appearance_class = 0;
    int motion_class = 0;
    double start_x = 0, start_y = 0;
};

struct Dataset {
    std::vector<TensorPtr<float>> videos;
    std::vector<VideoLabel> labels;  // empty for ingested external data
    std::int64_t n_appearance_classes = 0;
    std::int64_t n_motion_classes = 0;

    std::size_t size() const { return videos.size(); }
};

/// Deterministic from the spec's seed; labels independent by construction.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Unit direction vector of a compass heading (dx, dy), y growing downward.
void heading_vector(int direction, double& dx, double& dy);

// --- frame images (binary PPM, lossless) ------------------------------------

/// Maps [-1, 1] to [0, 255] via round((v + 1) * 127.5) and writes one PPM per
/// frame into dir as frame_000.ppm, frame_001.ppm, ...
void export_frames(const TensorPtr<float>& video, const std::string& dir);

/// All T frames tiled left to right in a single PPM.
void export_frame_grid(const TensorPtr<float>& video, const std::string& path);

void write_ppm(const std::string& path, std::int64_t h, std::int64_t w,
               const std::vector<std::uint8_t>& rgb);
void read_ppm(const std::string& path, std::int64_t& h, std::int64_t& w,
              std::vector<std::uint8_t>& rgb);

// --- external ingest ---------------------------------------------------------

struct IngestReport {
    std::int64_t accepted = 0;
    std::int64_t skipped_short = 0;  // fewer frames than T
};

/// Pre-crop resize width for a target width, from the 170:128 recipe.
/// Frames already at target geometry skip the resample entirely.
std::int64_t ingest_resize_width(std::int64_t target_w);

/// Reads per-video frame directories, resizes each frame so the width maps
/// 170:128 against the target, center crops, scales to [-1, 1] and samples a
/// fixed T-frame window at a seeded random offset. flip appends horizontally
/// mirrored copies.
Dataset ingest_external(const std::string& root_dir, std::int64_t T, std::int64_t H, std::int64_t W,
                        bool flip, std::uint64_t seed, IngestReport* report = nullptr);

}  // namespace avlae
