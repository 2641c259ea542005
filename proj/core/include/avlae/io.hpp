#pragma once

// Binary containers.
//
// AVT1 tensor record:
//   magic "AVT1" | u32 version = 1 | u32 rank | u64 extent per dimension |
//   payload of little-endian 32-bit floats, row-major.
//
// AVC1 checkpoint:
//   magic "AVC1" | u32 version = 1 | u64 config fingerprint | u64 step |
//   u64 epoch | u64 cursor | rng state string | named u64 counters |
//   named AVT1 records.
//
// All parsing is total: malformed input raises ParseError carrying the byte
// offset of the violation, never a crash.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "avlae/tensor.hpp"

namespace avlae {

struct ParseError : std::runtime_error {
    std::string kind;      // e.g. "magic", "version", "truncated", "extent", "name"
    std::uint64_t offset;  // byte position where the violation was detected

    ParseError(std::string k, std::uint64_t off, const std::string& message)
        : std::runtime_error(message + " (at byte " + std::to_string(off) + ")"),
          kind(std::move(k)),
          offset(off) {}
};

// --- AVT1 ------------------------------------------------------------------

std::vector<std::uint8_t> encode_tensor(const Shape& shape, const std::vector<float>& data);
void decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& pos, Shape& shape,
                   std::vector<float>& data);

void save_tensor(const std::string& path, const Shape& shape, const std::vector<float>& data);
TensorPtr<float> load_tensor(const std::string& path);

/// AVT1 write restricted to rank-4 video payloads in [-1, 1].
void save_video(const std::string& path, const TensorPtr<float>& video);
/// AVT1 read validating the video invariants (rank 4, values in [-1, 1]).
TensorPtr<float> load_video(const std::string& path);

// --- AVC1 ------------------------------------------------------------------

struct CheckpointData {
    std::uint64_t fingerprint = 0;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::uint64_t cursor = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, std::uint64_t>> counters;
    std::vector<std::pair<std::string, TensorPtr<float>>> tensors;

    /// Tensor lookup by exact name; throws naming the missing entry.
    const TensorPtr<float>& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
    std::uint64_t counter(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& ckpt);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const CheckpointData& ckpt);
CheckpointData load_checkpoint(const std::string& path);

// --- helpers ---------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace avlae
