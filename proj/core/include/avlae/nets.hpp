#pragma once

// The seven networks: two latent mappers, the video generator, the
// appearance and motion encoders, and the image/video discriminators.
// Parameter ownership is explicit and the seven collections are pairwise
// disjoint; the flow estimator inside the motion encoder owns nothing.
//
// Geometry is planned from the config: the generator grows a [8g, 1, 4, 4]
// seed by alternating temporal x2 / spatial x2 transpose-conv stages until it
// reaches [3, T, H, W]; encoder and discriminator trunks run the mirrored
// downsampling schedule.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "avlae/config.hpp"
#include "avlae/flow.hpp"
#include "avlae/random.hpp"
#include "avlae/tensor.hpp"

namespace avlae {

enum class NetId { kMapperA = 0, kMapperM, kGenerator, kEncoderA, kEncoderM, kDiscImage, kDiscVideo };

inline constexpr std::size_t kNetCount = 7;

inline const char* net_name(NetId id) {
    switch (id) {
        case NetId::kMapperA: return "F_A";
        case NetId::kMapperM: return "F_M";
        case NetId::kGenerator: return "G";
        case NetId::kEncoderA: return "E_A";
        case NetId::kEncoderM: return "E_M_star";
        case NetId::kDiscImage: return "D_I";
        case NetId::kDiscVideo: return "D_V";
    }
    return "?";
}

inline const std::vector<NetId>& all_net_ids() {
    static const std::vector<NetId> ids = {NetId::kMapperA,  NetId::kMapperM, NetId::kGenerator,
                                           NetId::kEncoderA, NetId::kEncoderM, NetId::kDiscImage,
                                           NetId::kDiscVideo};
    return ids;
}

inline constexpr double kLeakySlope = 0.2;

template <typename T>
using NamedParams = std::vector<std::pair<std::string, TensorPtr<T>>>;

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct DenseT {
    TensorPtr<T> weight;  // [out, in]
    TensorPtr<T> bias;    // [out]

    static DenseT init(Rng& rng, std::int64_t in, std::int64_t out) {
        DenseT d;
        d.weight = fan_in_uniform<T>(rng, {out, in}, in);
        d.bias = TensorT<T>::zeros({out}, true);
        return d;
    }

    TensorPtr<T> forward(const TensorPtr<T>& x) const { return linear(x, weight, bias); }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

/// Stack of dense layers with leaky-relu between them, none after the last.
template <typename T>
struct MlpT {
    std::vector<DenseT<T>> layers;

    static MlpT init(Rng& rng, const std::vector<std::int64_t>& widths) {
        MlpT m;
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            m.layers.push_back(DenseT<T>::init(rng, widths[i], widths[i + 1]));
        }
        return m;
    }

    TensorPtr<T> forward(TensorPtr<T> x) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            x = layers[i].forward(x);
            if (i + 1 < layers.size()) x = leaky_relu(x, T(kLeakySlope));
        }
        return x;
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].collect(out, prefix + ".fc" + std::to_string(i));
        }
    }
};

// ---------------------------------------------------------------------------
// Stage planning
// ---------------------------------------------------------------------------

struct ConvStagePlan {
    std::int64_t in_ch = 0, mid_ch = 0, out_ch = 0;
    std::int64_t ks = 3, ss = 1, ps = 1;  // spatial kernel / stride / pad
    std::int64_t kt = 3, st = 1, pt = 1;  // temporal kernel / stride / pad
};

namespace detail {

inline bool is_pow2(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

inline std::int64_t halved_temporal_kernel(std::int64_t t) {
    // k3/s2/p1 halves odd extents exactly, k4/s2/p1 halves even ones.
    return t % 2 == 0 ? 4 : 3;
}

}  // namespace detail

/// Upsampling schedule for the generator: alternating temporal x2 / spatial
/// x2 transpose stages from [8g, 1, 4, 4] to [3, T, H, W].
inline std::vector<ConvStagePlan> plan_generator_stages(std::int64_t T_out, std::int64_t H,
                                                        std::int64_t W, std::int64_t base) {
    if (H != W) throw ConfigError("generator geometry: H must equal W");
    if (H % 4 != 0 || !detail::is_pow2(H / 4)) {
        throw ConfigError("generator geometry: H must be 4 * 2^k, got " + std::to_string(H));
    }
    if (!detail::is_pow2(T_out)) {
        throw ConfigError("generator geometry: T must be a power of two, got " + std::to_string(T_out));
    }
    std::int64_t t_doublings = 0, s_doublings = 0;
    for (std::int64_t v = 1; v < T_out; v *= 2) ++t_doublings;
    for (std::int64_t v = 4; v < H; v *= 2) ++s_doublings;
    if (t_doublings + s_doublings == 0) {
        throw ConfigError("generator geometry: nothing to upsample (T = 1, H = 4)");
    }

    std::vector<ConvStagePlan> plan;
    std::int64_t ch = 8 * base;
    std::int64_t td = t_doublings, sd = s_doublings;
    bool temporal_turn = true;
    while (td > 0 || sd > 0) {
        ConvStagePlan st{};
        st.in_ch = ch;
        const bool do_temporal = (temporal_turn && td > 0) || sd == 0;
        if (do_temporal) {
            st.kt = 4;
            st.st = 2;
            st.pt = 1;
            --td;
        } else {
            st.ks = 4;
            st.ss = 2;
            st.ps = 1;
            --sd;
        }
        temporal_turn = !do_temporal;
        const bool last = td == 0 && sd == 0;
        ch = std::max<std::int64_t>(base, ch / 2);
        st.mid_ch = ch;
        st.out_ch = last ? 3 : ch;
        plan.push_back(st);
    }
    return plan;
}

/// Downsampling schedule shared by the motion-encoder and video-discriminator
/// trunks: spatial halving until H <= 4, temporal halving until T <= 2.
inline std::vector<ConvStagePlan> plan_trunk_stages(std::int64_t in_ch, std::int64_t T_in,
                                                    std::int64_t H, std::int64_t W,
                                                    std::int64_t base) {
    if (H != W) throw ConfigError("trunk geometry: H must equal W");
    std::int64_t t = T_in, h = H;
    std::int64_t ch = in_ch;
    std::int64_t width = base;
    std::vector<ConvStagePlan> plan;
    while (h > 4 || t > 2) {
        ConvStagePlan st{};
        st.in_ch = ch;
        if (h > 4) {
            if (h % 2 != 0) throw ConfigError("trunk geometry: odd spatial extent " + std::to_string(h));
            st.ks = 4;
            st.ss = 2;
            st.ps = 1;
            h /= 2;
        }
        if (t > 2) {
            st.kt = detail::halved_temporal_kernel(t);
            st.st = 2;
            st.pt = 1;
            t = (t + 1) / 2;
        }
        st.out_ch = std::min<std::int64_t>(width, 8 * base);
        st.mid_ch = st.out_ch;
        plan.push_back(st);
        ch = st.out_ch;
        width *= 2;
    }
    return plan;
}

/// Flattened size after running a trunk plan over [C, T, H, W].
inline std::int64_t trunk_output_size(const std::vector<ConvStagePlan>& plan, std::int64_t T_in,
                                      std::int64_t H, std::int64_t W, std::int64_t in_ch) {
    std::int64_t t = T_in, h = H, w = W, c = in_ch;
    for (const auto& st : plan) {
        h = (h + 2 * st.ps - st.ks) / st.ss + 1;
        w = (w + 2 * st.ps - st.ks) / st.ss + 1;
        t = (t + 2 * st.pt - st.kt) / st.st + 1;
        c = st.out_ch;
    }
    return c * t * h * w;
}

// ---------------------------------------------------------------------------
// Factorized conv stages
// ---------------------------------------------------------------------------

template <typename T>
struct ConvStageT {
    ConvStagePlan plan;
    TensorPtr<T> spatial;   // forward: [mid, in, ks, ks]   transpose: [in, mid? ] see init
    TensorPtr<T> temporal;  // forward: [out, mid, kt]      transpose: [in, mid, kt]
    TensorPtr<T> bias;      // [out]

    static ConvStageT init_forward(Rng& rng, const ConvStagePlan& p) {
        ConvStageT s;
        s.plan = p;
        s.spatial = fan_in_uniform<T>(rng, {p.mid_ch, p.in_ch, p.ks, p.ks}, p.in_ch * p.ks * p.ks);
        s.temporal = fan_in_uniform<T>(rng, {p.out_ch, p.mid_ch, p.kt}, p.mid_ch * p.kt);
        s.bias = TensorT<T>::zeros({p.out_ch}, true);
        return s;
    }

    static ConvStageT init_transpose(Rng& rng, const ConvStagePlan& p) {
        ConvStageT s;
        s.plan = p;
        s.temporal = fan_in_uniform<T>(rng, {p.in_ch, p.mid_ch, p.kt}, p.in_ch * p.kt);
        s.spatial = fan_in_uniform<T>(rng, {p.mid_ch, p.out_ch, p.ks, p.ks}, p.mid_ch * p.ks * p.ks);
        s.bias = TensorT<T>::zeros({p.out_ch}, true);
        return s;
    }

    TensorPtr<T> forward(const TensorPtr<T>& x) const {
        return add_channel_bias(
            conv_1p2d(x, spatial, temporal, plan.ss, plan.ps, plan.st, plan.pt), bias);
    }

    TensorPtr<T> forward_transpose(const TensorPtr<T>& x) const {
        return add_channel_bias(
            conv_transpose_1p2d(x, spatial, temporal, plan.ss, plan.ps, plan.st, plan.pt), bias);
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".spatial_kernel", spatial);
        out.emplace_back(prefix + ".temporal_kernel", temporal);
        out.emplace_back(prefix + ".bias", bias);
    }
};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

/// F_A / F_M: five stacked fully connected layers mapping an input latent to
/// the intermediate latent space.
template <typename T>
struct LatentMapperT {
    MlpT<T> net;
    std::int64_t d = 0;

    static LatentMapperT init(Rng& rng, std::int64_t d) {
        LatentMapperT m;
        m.d = d;
        m.net = MlpT<T>::init(rng, {d, d, d, d, d, d});  // 5 layers
        return m;
    }

    TensorPtr<T> forward(const TensorPtr<T>& z) const {
        if (z->shape != Shape{d}) {
            throw std::invalid_argument("mapper: latent must be [" + std::to_string(d) + "], got " +
                                        shape_str(z->shape));
        }
        return net.forward(z);
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const { net.collect(out, prefix); }
};

template <typename T>
struct GeneratorT {
    std::int64_t d = 0, T_out = 0, H = 0, W = 0, seed_ch = 0;
    DenseT<T> seed_proj;
    std::vector<ConvStageT<T>> stages;

    static GeneratorT init(Rng& rng, std::int64_t d, std::int64_t T_out, std::int64_t H,
                           std::int64_t W, std::int64_t base) {
        GeneratorT g;
        g.d = d;
        g.T_out = T_out;
        g.H = H;
        g.W = W;
        g.seed_ch = 8 * base;
        g.seed_proj = DenseT<T>::init(rng, 2 * d, g.seed_ch * 4 * 4);
        for (const auto& p : plan_generator_stages(T_out, H, W, base)) {
            g.stages.push_back(ConvStageT<T>::init_transpose(rng, p));
        }
        return g;
    }

    /// From the concatenated intermediate latent [2d] to a video [3, T, H, W].
    /// Both halves travel the same path: there is no stream-specific structure.
    TensorPtr<T> forward_latent(const TensorPtr<T>& w) const {
        if (w->shape != Shape{2 * d}) {
            throw std::invalid_argument("generator: latent must be [" + std::to_string(2 * d) +
                                        "], got " + shape_str(w->shape));
        }
        auto x = reshape(leaky_relu(seed_proj.forward(w), T(kLeakySlope)), {seed_ch, 1, 4, 4});
        for (std::size_t i = 0; i < stages.size(); ++i) {
            x = stages[i].forward_transpose(x);
            x = i + 1 < stages.size() ? leaky_relu(x, T(kLeakySlope)) : tanh_op(x);
        }
        return x;
    }

    TensorPtr<T> forward(const TensorPtr<T>& w_a, const TensorPtr<T>& w_m) const {
        return forward_latent(concat<T>({w_a, w_m}, 0));
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        seed_proj.collect(out, prefix + ".seed");
        for (std::size_t i = 0; i < stages.size(); ++i) {
            stages[i].collect(out, prefix + ".stage" + std::to_string(i));
        }
    }
};

/// E_A: strided 2D convolution trunk over one frame, flattened and projected
/// to the latent dimension.
template <typename T>
struct AppearanceEncoderT {
    std::int64_t d = 0, H = 0, W = 0;
    struct Stage {
        TensorPtr<T> kernel;  // [out, in, k, k]
        TensorPtr<T> bias;
    };
    std::vector<Stage> stages;
    DenseT<T> proj;

    static AppearanceEncoderT init(Rng& rng, std::int64_t d, std::int64_t H, std::int64_t W,
                                   std::int64_t base) {
        AppearanceEncoderT e;
        e.d = d;
        e.H = H;
        e.W = W;
        std::int64_t h = H, ch = 3, width = base;
        while (h > 4) {
            if (h % 2 != 0) throw ConfigError("appearance encoder: odd spatial extent");
            Stage s;
            const std::int64_t out_ch = std::min<std::int64_t>(width, 8 * base);
            s.kernel = fan_in_uniform<T>(rng, {out_ch, ch, 4, 4}, ch * 16);
            s.bias = TensorT<T>::zeros({out_ch}, true);
            e.stages.push_back(s);
            ch = out_ch;
            width *= 2;
            h /= 2;
        }
        e.proj = DenseT<T>::init(rng, ch * h * h, d);
        return e;
    }

    TensorPtr<T> forward(const TensorPtr<T>& frame) const {
        if (frame->shape != Shape{3, H, W}) {
            throw std::invalid_argument("appearance encoder: frame must be [3, " + std::to_string(H) +
                                        ", " + std::to_string(W) + "], got " + shape_str(frame->shape));
        }
        auto x = reshape(frame, {3, 1, H, W});
        for (const auto& s : stages) {
            x = leaky_relu(add_channel_bias(conv2d(x, s.kernel, 2, 1), s.bias), T(kLeakySlope));
        }
        return proj.forward(flatten(x));
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            out.emplace_back(prefix + ".conv" + std::to_string(i) + ".kernel", stages[i].kernel);
            out.emplace_back(prefix + ".conv" + std::to_string(i) + ".bias", stages[i].bias);
        }
        proj.collect(out, prefix + ".proj");
    }
};

/// E_M: frozen differentiable flow front end, then a factorized
/// spatio-temporal trunk projected to the latent dimension. The network
/// sees the video pixels only through the flow fields.
template <typename T>
struct MotionEncoderT {
    std::int64_t d = 0, T_in = 0, H = 0, W = 0;
    FlowParams flow;
    std::vector<ConvStageT<T>> stages;
    DenseT<T> proj;

    static MotionEncoderT init(Rng& rng, std::int64_t d, std::int64_t T_in, std::int64_t H,
                               std::int64_t W, std::int64_t base, const FlowParams& flow) {
        MotionEncoderT e;
        e.d = d;
        e.T_in = T_in;
        e.H = H;
        e.W = W;
        e.flow = flow;
        const std::int64_t h = H / flow.scale, w = W / flow.scale;
        const auto plan = plan_trunk_stages(2, T_in - 1, h, w, base);
        for (const auto& p : plan) e.stages.push_back(ConvStageT<T>::init_forward(rng, p));
        e.proj = DenseT<T>::init(rng, trunk_output_size(plan, T_in - 1, h, w, 2), d);
        return e;
    }

    TensorPtr<T> forward_from_flow(const TensorPtr<T>& flow_seq) const {
        auto x = flow_seq;
        for (const auto& s : stages) x = leaky_relu(s.forward(x), T(kLeakySlope));
        return proj.forward(flatten(x));
    }

    TensorPtr<T> forward(const TensorPtr<T>& video) const {
        return forward_from_flow(estimate_flow(video, flow));
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            stages[i].collect(out, prefix + ".stage" + std::to_string(i));
        }
        proj.collect(out, prefix + ".proj");
    }
};

/// D_I: three stacked fully connected layers over the encoded frame latent.
template <typename T>
struct ImageDiscriminatorT {
    MlpT<T> head;
    std::int64_t d = 0;

    static ImageDiscriminatorT init(Rng& rng, std::int64_t d, std::int64_t hidden) {
        ImageDiscriminatorT di;
        di.d = d;
        di.head = MlpT<T>::init(rng, {d, hidden, hidden, 1});
        return di;
    }

    TensorPtr<T> forward(const TensorPtr<T>& w_prime_a) const {
        return reshape(head.forward(w_prime_a), {});
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        head.collect(out, prefix + ".head");
    }
};

/// D_V: factorized spatio-temporal trunk over the raw video; the flattened
/// features are concatenated with the encoded motion latent ahead of three
/// fully connected layers. Without a motion encoder the head widens by d.
template <typename T>
struct VideoDiscriminatorT {
    std::int64_t d = 0, T_in = 0, H = 0, W = 0;
    bool use_motion_input = true;
    std::vector<ConvStageT<T>> stages;
    MlpT<T> head;

    static VideoDiscriminatorT init(Rng& rng, std::int64_t d, std::int64_t T_in, std::int64_t H,
                                    std::int64_t W, std::int64_t base, std::int64_t hidden,
                                    bool use_motion_input) {
        VideoDiscriminatorT dv;
        dv.d = d;
        dv.T_in = T_in;
        dv.H = H;
        dv.W = W;
        dv.use_motion_input = use_motion_input;
        const auto plan = plan_trunk_stages(3, T_in, H, W, base);
        for (const auto& p : plan) dv.stages.push_back(ConvStageT<T>::init_forward(rng, p));
        const std::int64_t flat = trunk_output_size(plan, T_in, H, W, 3);
        const std::int64_t head_in = use_motion_input ? flat + d : flat;
        const std::int64_t head_width = use_motion_input ? hidden : hidden + d;
        dv.head = MlpT<T>::init(rng, {head_in, head_width, head_width, 1});
        return dv;
    }

    TensorPtr<T> forward(const TensorPtr<T>& video, const TensorPtr<T>& w_prime_m) const {
        if (video->shape != Shape{3, T_in, H, W}) {
            throw std::invalid_argument("video discriminator: bad video shape " + shape_str(video->shape));
        }
        auto x = video;
        for (const auto& s : stages) x = leaky_relu(s.forward(x), T(kLeakySlope));
        auto feat = flatten(x);
        if (use_motion_input) {
            if (!w_prime_m) throw std::invalid_argument("video discriminator: missing motion latent");
            feat = concat<T>({feat, w_prime_m}, 0);
        }
        return reshape(head.forward(feat), {});
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            stages[i].collect(out, prefix + ".stage" + std::to_string(i));
        }
        head.collect(out, prefix + ".head");
    }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
struct ModelT {
    std::int64_t d = 0, T_len = 0, H = 0, W = 0;
    bool use_motion_encoder = true;
    LatentMapperT<T> mapper_a, mapper_m;
    GeneratorT<T> generator;
    AppearanceEncoderT<T> encoder_a;
    MotionEncoderT<T> encoder_m;
    ImageDiscriminatorT<T> disc_image;
    VideoDiscriminatorT<T> disc_video;

    /// Networks are initialized in a fixed order so a seed fully determines
    /// every parameter.
    static ModelT build(const RunConfig& cfg, Rng& rng) {
        const auto& m = cfg.model;
        ModelT model;
        model.d = m.d;
        model.T_len = m.T;
        model.H = m.H;
        model.W = m.W;
        model.use_motion_encoder = cfg.use_motion_encoder();
        model.mapper_a = LatentMapperT<T>::init(rng, m.d);
        model.mapper_m = LatentMapperT<T>::init(rng, m.d);
        model.generator = GeneratorT<T>::init(rng, m.d, m.T, m.H, m.W, m.channels.generator);
        model.encoder_a = AppearanceEncoderT<T>::init(rng, m.d, m.H, m.W, m.channels.encoder);
        model.encoder_m = MotionEncoderT<T>::init(rng, m.d, m.T, m.H, m.W, m.channels.encoder, cfg.flow);
        model.disc_image = ImageDiscriminatorT<T>::init(rng, m.d, m.head_width());
        model.disc_video = VideoDiscriminatorT<T>::init(rng, m.d, m.T, m.H, m.W,
                                                        m.channels.discriminator, m.head_width(),
                                                        model.use_motion_encoder);
        return model;
    }

    TensorPtr<T> generate(const TensorPtr<T>& z_a, const TensorPtr<T>& z_m) const {
        return generator.forward(mapper_a.forward(z_a), mapper_m.forward(z_m));
    }

    /// Frame index is 1-based to match the [1, T] contract.
    TensorPtr<T> frame(const TensorPtr<T>& video, std::int64_t t) const {
        if (t < 1 || t > T_len) {
            throw std::out_of_range("frame index " + std::to_string(t) + " outside [1, " +
                                    std::to_string(T_len) + "]");
        }
        return select(video, 1, t - 1);
    }

    /// G(E_A(x_t), E_M(x)).
    TensorPtr<T> reconstruct_video(const TensorPtr<T>& x, std::int64_t t) const {
        if (!use_motion_encoder) {
            throw std::logic_error("reconstruct_video: model was built without a motion encoder");
        }
        return generator.forward(encoder_a.forward(frame(x, t)), encoder_m.forward(x));
    }

    NamedParams<T> named_params(NetId id) const {
        NamedParams<T> out;
        const std::string prefix = net_name(id);
        switch (id) {
            case NetId::kMapperA: mapper_a.collect(out, prefix); break;
            case NetId::kMapperM: mapper_m.collect(out, prefix); break;
            case NetId::kGenerator: generator.collect(out, prefix); break;
            case NetId::kEncoderA: encoder_a.collect(out, prefix); break;
            case NetId::kEncoderM:
                if (use_motion_encoder) encoder_m.collect(out, prefix);
                break;
            case NetId::kDiscImage: disc_image.collect(out, prefix); break;
            case NetId::kDiscVideo: disc_video.collect(out, prefix); break;
        }
        return out;
    }

    std::vector<TensorPtr<T>> params(NetId id) const {
        std::vector<TensorPtr<T>> out;
        for (auto& [name, p] : named_params(id)) out.push_back(p);
        return out;
    }

    std::vector<TensorPtr<T>> params_of(std::initializer_list<NetId> ids) const {
        std::vector<TensorPtr<T>> out;
        for (NetId id : ids) {
            auto ps = params(id);
            out.insert(out.end(), ps.begin(), ps.end());
        }
        return out;
    }

    NamedParams<T> all_named_params() const {
        NamedParams<T> out;
        for (NetId id : all_net_ids()) {
            auto ps = named_params(id);
            out.insert(out.end(), ps.begin(), ps.end());
        }
        return out;
    }

    void zero_all_grads() const {
        for (auto& [name, p] : all_named_params()) p->zero_grad();
    }
};

}  // namespace avlae
