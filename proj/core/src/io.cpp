#include "avlae/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace avlae {

namespace {

constexpr std::uint32_t kContainerVersion = 1;

// Extent sanity bound: rejects obviously corrupt headers before any
// allocation is attempted.
constexpr std::uint64_t kMaxElements = std::uint64_t(1) << 33;
constexpr std::uint32_t kMaxRank = 16;
constexpr std::uint64_t kMaxNameLen = 1 << 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(out, bits);
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size()) {
            throw ParseError("truncated", pos,
                             std::string("unexpected end of data while reading ") + what);
        }
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }

    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }

    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    std::string str(const char* what, std::uint64_t max_len) {
        const std::size_t at = pos;
        const std::uint32_t len = u32(what);
        if (len > max_len) {
            throw ParseError("name", at, std::string("unreasonable string length for ") + what);
        }
        need(len, what);
        std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        return s;
    }

    void magic(const char* expect) {
        const std::size_t at = pos;
        need(4, "magic");
        if (std::memcmp(bytes.data() + pos, expect, 4) != 0) {
            throw ParseError("magic", at, std::string("bad magic, expected \"") + expect + "\"");
        }
        pos += 4;
    }
};

void encode_tensor_into(std::vector<std::uint8_t>& out, const Shape& shape,
                        const std::vector<float>& data) {
    out.push_back('A');
    out.push_back('V');
    out.push_back('T');
    out.push_back('1');
    put_u32(out, kContainerVersion);
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) put_u64(out, static_cast<std::uint64_t>(e));
    for (float v : data) put_f32(out, v);
}

void decode_tensor_at(Reader& r, Shape& shape, std::vector<float>& data) {
    r.magic("AVT1");
    const std::size_t ver_at = r.pos;
    const std::uint32_t version = r.u32("version");
    if (version != kContainerVersion) {
        throw ParseError("version", ver_at, "unsupported container version " + std::to_string(version));
    }
    const std::size_t rank_at = r.pos;
    const std::uint32_t rank = r.u32("rank");
    if (rank > kMaxRank) {
        throw ParseError("extent", rank_at, "rank " + std::to_string(rank) + " exceeds limit");
    }
    shape.clear();
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::size_t ext_at = r.pos;
        const std::uint64_t e = r.u64("extent");
        if (e == 0 || e > kMaxElements || count > kMaxElements / e) {
            throw ParseError("extent", ext_at, "extent " + std::to_string(e) + " out of range");
        }
        count *= e;
        shape.push_back(static_cast<std::int64_t>(e));
    }
    r.need(static_cast<std::size_t>(count) * 4, "payload");
    data.resize(static_cast<std::size_t>(count));
    for (auto& v : data) v = r.f32("payload");
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Shape& shape, const std::vector<float>& data) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
        throw std::invalid_argument("encode_tensor: payload length does not match shape");
    }
    std::vector<std::uint8_t> out;
    out.reserve(16 + shape.size() * 8 + data.size() * 4);
    encode_tensor_into(out, shape, data);
    return out;
}

void decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& pos, Shape& shape,
                   std::vector<float>& data) {
    Reader r{bytes, pos};
    decode_tensor_at(r, shape, data);
    pos = r.pos;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

void save_tensor(const std::string& path, const Shape& shape, const std::vector<float>& data) {
    write_file_bytes(path, encode_tensor(shape, data));
}

TensorPtr<float> load_tensor(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    Shape shape;
    std::vector<float> data;
    decode_tensor(bytes, pos, shape, data);
    if (pos != bytes.size()) {
        throw ParseError("trailing", pos, "trailing bytes after tensor payload");
    }
    return TensorT<float>::make(shape, std::move(data));
}

void save_video(const std::string& path, const TensorPtr<float>& video) {
    if (video->shape.size() != 4) {
        throw std::invalid_argument("save_video: video must be rank 4, got " + shape_str(video->shape));
    }
    for (float v : video->data) {
        if (!(v >= -1.0f && v <= 1.0f)) {
            throw std::invalid_argument("save_video: value " + std::to_string(v) + " outside [-1, 1]");
        }
    }
    save_tensor(path, video->shape, video->data);
}

TensorPtr<float> load_video(const std::string& path) {
    auto t = load_tensor(path);
    if (t->shape.size() != 4) {
        throw ParseError("rank", 8, "video payload must be rank 4, got rank " +
                                        std::to_string(t->shape.size()));
    }
    for (float v : t->data) {
        if (!(v >= -1.0f && v <= 1.0f)) {
            throw ParseError("range", 0, "video payload value " + std::to_string(v) + " outside [-1, 1]");
        }
    }
    return t;
}

const TensorPtr<float>& CheckpointData::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw std::out_of_range("checkpoint: missing tensor \"" + name + "\"");
}

bool CheckpointData::has_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return true;
    }
    return false;
}

std::uint64_t CheckpointData::counter(const std::string& name) const {
    for (const auto& [n, v] : counters) {
        if (n == name) return v;
    }
    throw std::out_of_range("checkpoint: missing counter \"" + name + "\"");
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& ckpt) {
    std::vector<std::uint8_t> out;
    out.push_back('A');
    out.push_back('V');
    out.push_back('C');
    out.push_back('1');
    put_u32(out, kContainerVersion);
    put_u64(out, ckpt.fingerprint);
    put_u64(out, ckpt.step);
    put_u64(out, ckpt.epoch);
    put_u64(out, ckpt.cursor);
    put_string(out, ckpt.rng_state);
    put_u32(out, static_cast<std::uint32_t>(ckpt.counters.size()));
    for (const auto& [name, value] : ckpt.counters) {
        put_string(out, name);
        put_u64(out, value);
    }
    put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_string(out, name);
        encode_tensor_into(out, t->shape, t->data);
    }
    return out;
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes, 0};
    r.magic("AVC1");
    const std::size_t ver_at = r.pos;
    const std::uint32_t version = r.u32("version");
    if (version != kContainerVersion) {
        throw ParseError("version", ver_at, "unsupported checkpoint version " + std::to_string(version));
    }
    CheckpointData ckpt;
    ckpt.fingerprint = r.u64("fingerprint");
    ckpt.step = r.u64("step");
    ckpt.epoch = r.u64("epoch");
    ckpt.cursor = r.u64("cursor");
    ckpt.rng_state = r.str("rng state", kMaxNameLen);
    const std::uint32_t n_counters = r.u32("counter count");
    for (std::uint32_t i = 0; i < n_counters; ++i) {
        std::string name = r.str("counter name", kMaxNameLen);
        const std::uint64_t value = r.u64("counter value");
        ckpt.counters.emplace_back(std::move(name), value);
    }
    const std::uint32_t n_tensors = r.u32("tensor count");
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str("tensor name", kMaxNameLen);
        Shape shape;
        std::vector<float> data;
        decode_tensor_at(r, shape, data);
        ckpt.tensors.emplace_back(std::move(name), TensorT<float>::make(shape, std::move(data)));
    }
    if (r.pos != bytes.size()) {
        throw ParseError("trailing", r.pos, "trailing bytes after checkpoint");
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
    write_file_bytes(path, encode_checkpoint(ckpt));
}

CheckpointData load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file_bytes(path));
}

}  // namespace avlae
