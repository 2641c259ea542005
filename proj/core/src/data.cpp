#include "avlae/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "avlae/random.hpp"

namespace fs = std::filesystem;

namespace avlae {

namespace {

constexpr double kSqrtHalf = 0.7071067811865476;

// Palette in [-1, 1] RGB; saturated enough that the mean-color readout
// separates classes cleanly.
constexpr double kPalette[6][3] = {
    {0.8, -0.6, -0.6},  // red
    {-0.6, 0.8, -0.6},  // green
    {-0.6, -0.6, 0.8},  // blue
    {0.8, 0.8, -0.6},   // yellow
    {0.8, -0.6, 0.8},   // magenta
    {-0.6, 0.8, 0.8},   // cyan
};

constexpr double kBackgroundLevel = -0.85;

// Signed coverage of a pixel center against the shape boundary, ~1 px soft edge.
double shape_coverage(int shape, double px, double py, double cx, double cy, double half) {
    const double dx = px - cx, dy = py - cy;
    double dist;
    switch (shape) {
        case 0:  // square
            dist = std::max(std::abs(dx), std::abs(dy));
            break;
        case 1:  // circle
            dist = std::sqrt(dx * dx + dy * dy);
            break;
        default: {  // cross: union of two bars
            const double bar = half * 0.45;
            const double dh = std::max(std::abs(dx) - half, std::abs(dy) - bar);
            const double dv = std::max(std::abs(dx) - bar, std::abs(dy) - half);
            return std::clamp(0.5 - std::min(dh, dv), 0.0, 1.0);
        }
    }
    return std::clamp(half + 0.5 - dist, 0.0, 1.0);
}

}  // namespace

void heading_vector(int direction, double& dx, double& dy) {
    // 0=E, 1=NE, 2=N, 3=NW, 4=W, 5=SW, 6=S, 7=SE; y grows downward.
    static const double table[8][2] = {
        {1, 0},          {kSqrtHalf, -kSqrtHalf}, {0, -1},         {-kSqrtHalf, -kSqrtHalf},
        {-1, 0},         {-kSqrtHalf, kSqrtHalf}, {0, 1},          {kSqrtHalf, kSqrtHalf},
    };
    if (direction < 0 || direction >= kDirectionCount) {
        throw std::invalid_argument("heading_vector: bad direction " + std::to_string(direction));
    }
    dx = table[direction][0];
    dy = table[direction][1];
}

Dataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.T < 2) throw std::invalid_argument("make_synthetic: T must be >= 2");
    if (spec.palette < 1 || spec.palette > 6) {
        throw std::invalid_argument("make_synthetic: palette must lie in [1, 6]");
    }
    const std::int64_t T = spec.T, H = spec.H, W = spec.W;
    const double half = static_cast<double>(H) / 8.0;  // object half-extent
    const double margin = half + 1.5;
    const double max_travel = 2.0 * static_cast<double>(T - 1);
    if (static_cast<double>(std::min(H, W)) - 2.0 * margin < max_travel * kSqrtHalf) {
        throw std::invalid_argument("make_synthetic: geometry cannot contain the object plus its travel");
    }

    Rng rng(spec.seed);
    Dataset ds;
    ds.n_appearance_classes = kShapeCount * spec.palette;
    ds.n_motion_classes = kDirectionCount * kSpeedCount;
    ds.videos.reserve(static_cast<std::size_t>(spec.n_videos));
    ds.labels.reserve(static_cast<std::size_t>(spec.n_videos));

    const bool gradient = spec.background == "gradient";

    for (std::int64_t n = 0; n < spec.n_videos; ++n) {
        VideoLabel lab;
        lab.shape = static_cast<int>(rng.uniform_int(kShapeCount));
        lab.color = static_cast<int>(rng.uniform_int(spec.palette));
        lab.direction = static_cast<int>(rng.uniform_int(kDirectionCount));
        lab.speed = static_cast<int>(rng.uniform_int(kSpeedCount));
        lab.appearance_class = lab.shape * static_cast<int>(spec.palette) + lab.color;
        lab.motion_class = lab.direction * kSpeedCount + lab.speed;

        double dx, dy;
        heading_vector(lab.direction, dx, dy);
        const double speed = lab.speed + 1;
        const double tx = dx * speed * static_cast<double>(T - 1);
        const double ty = dy * speed * static_cast<double>(T - 1);

        // Start so that the whole trajectory stays inside [margin, extent - margin].
        auto pick_start = [&](double lo, double hi, double travel) {
            const double a = travel >= 0 ? lo : lo - travel;
            const double b = travel >= 0 ? hi - travel : hi;
            return rng.uniform(a, b);
        };
        lab.start_x = pick_start(margin, static_cast<double>(W - 1) - margin, tx);
        lab.start_y = pick_start(margin, static_cast<double>(H - 1) - margin, ty);

        const double* color = kPalette[lab.color];
        std::vector<float> data(static_cast<std::size_t>(3 * T * H * W));
        for (std::int64_t t = 0; t < T; ++t) {
            const double cx = lab.start_x + dx * speed * static_cast<double>(t);
            const double cy = lab.start_y + dy * speed * static_cast<double>(t);
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t x = 0; x < W; ++x) {
                    double bg = kBackgroundLevel;
                    if (gradient) {
                        bg += 0.12 * std::sin(2.0 * M_PI *
                                              (static_cast<double>(x) + 0.25 * static_cast<double>(t)) /
                                              static_cast<double>(W));
                    }
                    const double cov =
                        shape_coverage(lab.shape, static_cast<double>(x), static_cast<double>(y), cx, cy, half);
                    for (int c = 0; c < 3; ++c) {
                        const double v = bg + cov * (color[c] - bg);
                        data[static_cast<std::size_t>(((c * T + t) * H + y) * W + x)] =
                            static_cast<float>(std::clamp(v, -1.0, 1.0));
                    }
                }
            }
        }
        ds.videos.push_back(TensorT<float>::make({3, T, H, W}, std::move(data)));
        ds.labels.push_back(lab);
    }
    return ds;
}

// --- PPM ---------------------------------------------------------------------

void write_ppm(const std::string& path, std::int64_t h, std::int64_t w,
               const std::vector<std::uint8_t>& rgb) {
    if (static_cast<std::int64_t>(rgb.size()) != 3 * h * w) {
        throw std::invalid_argument("write_ppm: payload size mismatch");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

void read_ppm(const std::string& path, std::int64_t& h, std::int64_t& w,
              std::vector<std::uint8_t>& rgb) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("read_ppm: not a binary PPM: " + path);
    auto next_token = [&]() {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        throw std::runtime_error("read_ppm: truncated header in " + path);
    };
    w = std::stoll(next_token());
    h = std::stoll(next_token());
    const long long maxval = std::stoll(next_token());
    if (maxval != 255) throw std::runtime_error("read_ppm: unsupported maxval in " + path);
    in.get();  // single whitespace after maxval
    rgb.resize(static_cast<std::size_t>(3 * h * w));
    in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(rgb.size())) {
        throw std::runtime_error("read_ppm: truncated payload in " + path);
    }
}

namespace {

std::uint8_t to_byte(float v) {
    const double mapped = std::round((static_cast<double>(v) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(mapped, 0.0, 255.0));
}

std::vector<std::uint8_t> frame_rgb(const TensorPtr<float>& video, std::int64_t t) {
    const std::int64_t T = video->shape[1], H = video->shape[2], W = video->shape[3];
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3 * H * W));
    for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                rgb[static_cast<std::size_t>(3 * (y * W + x) + c)] =
                    to_byte(video->data[static_cast<std::size_t>(((c * T + t) * H + y) * W + x)]);
            }
        }
    }
    return rgb;
}

}  // namespace

void export_frames(const TensorPtr<float>& video, const std::string& dir) {
    if (video->shape.size() != 4 || video->shape[0] != 3) {
        throw std::invalid_argument("export_frames: video must be [3, T, H, W]");
    }
    fs::create_directories(dir);
    const std::int64_t T = video->shape[1];
    for (std::int64_t t = 0; t < T; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03lld.ppm", static_cast<long long>(t));
        write_ppm((fs::path(dir) / name).string(), video->shape[2], video->shape[3], frame_rgb(video, t));
    }
}

void export_frame_grid(const TensorPtr<float>& video, const std::string& path) {
    if (video->shape.size() != 4 || video->shape[0] != 3) {
        throw std::invalid_argument("export_frame_grid: video must be [3, T, H, W]");
    }
    const std::int64_t T = video->shape[1], H = video->shape[2], W = video->shape[3];
    std::vector<std::uint8_t> grid(static_cast<std::size_t>(3 * H * W * T));
    for (std::int64_t t = 0; t < T; ++t) {
        const auto rgb = frame_rgb(video, t);
        for (std::int64_t y = 0; y < H; ++y) {
            std::copy_n(rgb.data() + 3 * y * W, 3 * W, grid.data() + 3 * (y * W * T + t * W));
        }
    }
    write_ppm(path, H, W * T, grid);
}

// --- ingest --------------------------------------------------------------------

namespace {

// Bilinear resample of an 8-bit RGB image to (oh, ow), result in [0, 255] doubles.
std::vector<double> resize_bilinear(const std::vector<std::uint8_t>& src, std::int64_t h,
                                    std::int64_t w, std::int64_t oh, std::int64_t ow) {
    std::vector<double> dst(static_cast<std::size_t>(3 * oh * ow));
    const double sy = oh > 1 ? static_cast<double>(h - 1) / static_cast<double>(oh - 1) : 0.0;
    const double sx = ow > 1 ? static_cast<double>(w - 1) / static_cast<double>(ow - 1) : 0.0;
    for (std::int64_t y = 0; y < oh; ++y) {
        const double fy = static_cast<double>(y) * sy;
        const std::int64_t y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < ow; ++x) {
            const double fx = static_cast<double>(x) * sx;
            const std::int64_t x0 = static_cast<std::int64_t>(fx);
            const std::int64_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (int c = 0; c < 3; ++c) {
                const double v00 = src[static_cast<std::size_t>(3 * (y0 * w + x0) + c)];
                const double v01 = src[static_cast<std::size_t>(3 * (y0 * w + x1) + c)];
                const double v10 = src[static_cast<std::size_t>(3 * (y1 * w + x0) + c)];
                const double v11 = src[static_cast<std::size_t>(3 * (y1 * w + x1) + c)];
                dst[static_cast<std::size_t>(3 * (y * ow + x) + c)] =
                    (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return dst;
}

}  // namespace

std::int64_t ingest_resize_width(std::int64_t target_w) {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(target_w) * 170.0 / 128.0));
}

Dataset ingest_external(const std::string& root_dir, std::int64_t T, std::int64_t H, std::int64_t W,
                        bool flip, std::uint64_t seed, IngestReport* report) {
    if (!fs::is_directory(root_dir)) {
        throw std::runtime_error("ingest_external: not a directory: " + root_dir);
    }
    std::vector<fs::path> video_dirs;
    for (const auto& e : fs::directory_iterator(root_dir)) {
        if (e.is_directory()) video_dirs.push_back(e.path());
    }
    std::sort(video_dirs.begin(), video_dirs.end());

    // Resize to the 170:128 recipe width, then center crop the width.
    const std::int64_t resize_w = ingest_resize_width(W);
    const std::int64_t crop_x = (resize_w - W) / 2;

    Rng rng(seed);
    Dataset ds;
    IngestReport rep;
    for (const auto& vdir : video_dirs) {
        std::vector<fs::path> frames;
        for (const auto& e : fs::directory_iterator(vdir)) {
            if (e.is_regular_file() && e.path().extension() == ".ppm") frames.push_back(e.path());
        }
        std::sort(frames.begin(), frames.end());
        if (static_cast<std::int64_t>(frames.size()) < T) {
            ++rep.skipped_short;
            continue;
        }
        const std::int64_t offset = rng.uniform_int(static_cast<std::int64_t>(frames.size()) - T + 1);
        std::vector<float> data(static_cast<std::size_t>(3 * T * H * W));
        for (std::int64_t t = 0; t < T; ++t) {
            std::int64_t fh, fw;
            std::vector<std::uint8_t> rgb;
            read_ppm(frames[static_cast<std::size_t>(offset + t)].string(), fh, fw, rgb);
            if (fh == H && fw == W) {
                // Already at target geometry: no resampling, only the value mapping.
                for (std::int64_t y = 0; y < H; ++y) {
                    for (std::int64_t x = 0; x < W; ++x) {
                        for (int c = 0; c < 3; ++c) {
                            const double v = rgb[static_cast<std::size_t>(3 * (y * W + x) + c)];
                            data[static_cast<std::size_t>(((c * T + t) * H + y) * W + x)] =
                                static_cast<float>(v / 127.5 - 1.0);
                        }
                    }
                }
                continue;
            }
            const auto resized = resize_bilinear(rgb, fh, fw, H, resize_w);
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t x = 0; x < W; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        const double v = resized[static_cast<std::size_t>(3 * (y * resize_w + x + crop_x) + c)];
                        data[static_cast<std::size_t>(((c * T + t) * H + y) * W + x)] =
                            static_cast<float>(v / 127.5 - 1.0);
                    }
                }
            }
        }
        ds.videos.push_back(TensorT<float>::make({3, T, H, W}, std::move(data)));
        ++rep.accepted;
    }

    if (flip) {
        const std::size_t n = ds.videos.size();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& v = ds.videos[i];
            std::vector<float> data(v->data.size());
            for (std::int64_t c = 0; c < 3; ++c) {
                for (std::int64_t t = 0; t < T; ++t) {
                    for (std::int64_t y = 0; y < H; ++y) {
                        for (std::int64_t x = 0; x < W; ++x) {
                            data[static_cast<std::size_t>(((c * T + t) * H + y) * W + x)] =
                                v->data[static_cast<std::size_t>(((c * T + t) * H + y) * W + (W - 1 - x))];
                        }
                    }
                }
            }
            ds.videos.push_back(TensorT<float>::make({3, T, H, W}, std::move(data)));
        }
    }
    if (report) *report = rep;
    return ds;
}

}  // namespace avlae
