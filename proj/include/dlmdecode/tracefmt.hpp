#pragma once

// Binary container for recorded per-step logits.
//
// Layout, little-endian, no padding:
//
//   header (30 bytes)
//     magic           8 bytes  "DLMTRACE"
//     version         u16      1
//     vocab_size      u32
//     prompt_len      u32
//     gen_len         u32
//     recorded_steps  u32      number of step blocks that follow
//     flags           u32      bit 0 set: every block lists all generated positions
//
//   step block (repeated recorded_steps times)
//     step_index      u32      strictly increasing
//     n_positions     u32
//     positions       n_positions x u32, absolute, strictly increasing
//     logits          n_positions x vocab_size x f32
//     crc32           u32      zlib crc32 of the block bytes above, seeded
//                              with the crc32 of the 30 header bytes
//
// Seeding every block checksum with the header checksum means a damaged
// header is caught by the first block.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dlmdecode/error.hpp"

namespace dlm::trace {

static_assert(std::endian::native == std::endian::little, "trace I/O assumes a little-endian host");

inline constexpr std::array<char, 8> kMagic = {'D', 'L', 'M', 'T', 'R', 'A', 'C', 'E'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 30;
inline constexpr std::uint32_t kFlagAllPositions = 1u;

struct TraceHeader {
    std::uint32_t vocab_size = 0;
    std::uint32_t prompt_len = 0;
    std::uint32_t gen_len = 0;
    std::uint32_t recorded_steps = 0;
    std::uint32_t flags = 0;

    bool all_positions() const noexcept { return (flags & kFlagAllPositions) != 0; }

    friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct StepBlock {
    std::uint32_t step_index = 0;
    std::vector<std::uint32_t> positions;
    std::vector<float> logits; // positions.size() * vocab_size, row-major by position

    std::span<const float> row(std::size_t k, std::uint32_t vocab_size) const {
        return std::span<const float>(logits).subspan(k * vocab_size, vocab_size);
    }

    friend bool operator==(const StepBlock&, const StepBlock&) = default;
};

struct TraceFile {
    TraceHeader header;
    std::vector<StepBlock> blocks;

    friend bool operator==(const TraceFile&, const TraceFile&) = default;
};

namespace detail {

inline std::uint32_t crc32_update(std::uint32_t crc, std::span<const unsigned char> bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(std::span<const unsigned char> bytes, std::size_t offset) {
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return v;
}

inline std::vector<unsigned char> encode_header(const TraceHeader& h) {
    std::vector<unsigned char> out(kMagic.begin(), kMagic.end());
    put(out, kVersion);
    put(out, h.vocab_size);
    put(out, h.prompt_len);
    put(out, h.gen_len);
    put(out, h.recorded_steps);
    put(out, h.flags);
    return out;
}

inline void check_block(const TraceHeader& h, const StepBlock& b, std::optional<std::uint32_t> prev_step,
                        ErrorCode code) {
    const std::uint64_t lo = h.prompt_len;
    const std::uint64_t hi = std::uint64_t{h.prompt_len} + h.gen_len;
    if (prev_step && b.step_index <= *prev_step)
        throw Error(code, "step_index must be strictly increasing");
    if (b.logits.size() != b.positions.size() * std::size_t{h.vocab_size})
        throw Error(code, "logit count does not match n_positions x vocab_size");
    if (h.all_positions() && b.positions.size() != h.gen_len)
        throw Error(code, "all-positions block must list every generated position");
    for (std::size_t k = 0; k < b.positions.size(); ++k) {
        if (b.positions[k] < lo || b.positions[k] >= hi)
            throw Error(code, "position outside the generated region");
        if (k > 0 && b.positions[k] <= b.positions[k - 1])
            throw Error(code, "positions must be strictly increasing");
    }
    for (float f : b.logits)
        if (!std::isfinite(f)) throw Error(code, "non-finite logit");
}

inline void check_header(const TraceHeader& h, ErrorCode code) {
    if (h.vocab_size < 2) throw Error(code, "vocab_size must be >= 2");
    if (h.gen_len < 1) throw Error(code, "gen_len must be >= 1");
    if ((h.flags & ~kFlagAllPositions) != 0) throw Error(code, "unknown flag bits set");
}

} // namespace detail

/// Serializes header and blocks to `sink`. Returns bytes written.
inline std::size_t write_trace(const TraceHeader& header, std::span<const StepBlock> blocks,
                               std::ostream& sink) {
    detail::check_header(header, ErrorCode::TraceBuildError);
    if (blocks.size() != header.recorded_steps)
        throw Error(ErrorCode::TraceBuildError, "recorded_steps does not match the block count");

    const auto head = detail::encode_header(header);
    const std::uint32_t seed = detail::crc32_update(0, head);
    std::size_t written = head.size();
    sink.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));

    std::optional<std::uint32_t> prev;
    std::vector<unsigned char> buf;
    for (const auto& b : blocks) {
        detail::check_block(header, b, prev, ErrorCode::TraceBuildError);
        prev = b.step_index;
        buf.clear();
        detail::put(buf, b.step_index);
        detail::put(buf, static_cast<std::uint32_t>(b.positions.size()));
        for (auto p : b.positions) detail::put(buf, p);
        for (float f : b.logits) detail::put(buf, f);
        detail::put(buf, detail::crc32_update(seed, buf));
        sink.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        written += buf.size();
    }
    if (!sink) throw Error(ErrorCode::TraceBuildError, "write failed");
    return written;
}

inline std::size_t write_trace(const TraceFile& t, std::ostream& sink) {
    return write_trace(t.header, t.blocks, sink);
}

/// Streaming reader: validates the header on construction and each block's
/// checksum as it is pulled.
class TraceReader {
public:
    explicit TraceReader(std::istream& source) : in_(source) {
        std::array<unsigned char, kHeaderBytes> raw{};
        read_exact(raw.data(), raw.size(), "header");
        const std::span<const unsigned char> bytes(raw);
        if (std::memcmp(raw.data(), kMagic.data(), kMagic.size()) != 0)
            throw Error(ErrorCode::TraceCorrupt, "bad magic");
        if (const auto v = detail::get<std::uint16_t>(bytes, 8); v != kVersion)
            throw Error(ErrorCode::UnsupportedVersion, "trace version " + std::to_string(v));
        header_.vocab_size = detail::get<std::uint32_t>(bytes, 10);
        header_.prompt_len = detail::get<std::uint32_t>(bytes, 14);
        header_.gen_len = detail::get<std::uint32_t>(bytes, 18);
        header_.recorded_steps = detail::get<std::uint32_t>(bytes, 22);
        header_.flags = detail::get<std::uint32_t>(bytes, 26);
        detail::check_header(header_, ErrorCode::TraceCorrupt);
        seed_ = detail::crc32_update(0, bytes);

        // Bound block sizes by what the stream can still deliver, so a damaged
        // vocab_size cannot trigger a huge allocation.
        const auto here = in_.tellg();
        if (here != std::streampos(-1) && in_.seekg(0, std::ios::end)) {
            const auto end = in_.tellg();
            in_.seekg(here);
            if (end != std::streampos(-1) && end >= here)
                remaining_ = static_cast<std::uint64_t>(end - here);
        }
        in_.clear();
        if (remaining_ && std::uint64_t{header_.recorded_steps} * 12 > *remaining_)
            throw Error(ErrorCode::TraceCorrupt, "recorded_steps exceeds what the file can hold");
    }

    const TraceHeader& header() const noexcept { return header_; }

    /// Next block in file order, or nullopt after the last one. Trailing
    /// bytes past the declared blocks are reported as corruption.
    std::optional<StepBlock> next() {
        if (read_ == header_.recorded_steps) {
            if (in_.peek() != std::char_traits<char>::eof())
                throw Error(ErrorCode::TraceCorrupt, "trailing bytes after the last block");
            return std::nullopt;
        }
        std::vector<unsigned char> buf(8);
        read_exact(buf.data(), 8, "block prefix");
        StepBlock b;
        b.step_index = detail::get<std::uint32_t>(buf, 0);
        const auto n = detail::get<std::uint32_t>(buf, 4);
        if (n > header_.gen_len) throw Error(ErrorCode::TraceCorrupt, "n_positions exceeds gen_len");

        const std::uint64_t body64 = std::uint64_t{n} * 4 + std::uint64_t{n} * header_.vocab_size * 4;
        if (remaining_ && body64 + 12 > *remaining_)
            throw Error(ErrorCode::TraceCorrupt, "truncated block body");
        const auto body = static_cast<std::size_t>(body64);
        buf.resize(8 + body + 4);
        read_exact(buf.data() + 8, body + 4, "block body");
        const std::span<const unsigned char> bytes(buf);
        const auto stored = detail::get<std::uint32_t>(bytes, 8 + body);
        if (detail::crc32_update(seed_, bytes.first(8 + body)) != stored)
            throw Error(ErrorCode::TraceCorrupt, "checksum mismatch in block " + std::to_string(read_));

        b.positions.resize(n);
        std::memcpy(b.positions.data(), buf.data() + 8, std::size_t{n} * 4);
        b.logits.resize(std::size_t{n} * header_.vocab_size);
        std::memcpy(b.logits.data(), buf.data() + 8 + std::size_t{n} * 4, b.logits.size() * 4);

        detail::check_block(header_, b, prev_, ErrorCode::TraceCorrupt);
        prev_ = b.step_index;
        ++read_;
        if (remaining_) *remaining_ -= buf.size();
        return b;
    }

private:
    void read_exact(unsigned char* dst, std::size_t n, const char* what) {
        in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw Error(ErrorCode::TraceCorrupt, std::string("truncated ") + what);
    }

    std::istream& in_;
    TraceHeader header_;
    std::uint32_t seed_ = 0;
    std::uint32_t read_ = 0;
    std::optional<std::uint32_t> prev_;
    std::optional<std::uint64_t> remaining_;
};

inline TraceFile read_trace(std::istream& source) {
    TraceReader reader(source);
    TraceFile out{reader.header(), {}};
    out.blocks.reserve(std::min<std::uint32_t>(reader.header().recorded_steps, 4096));
    while (auto b = reader.next()) out.blocks.push_back(std::move(*b));
    return out;
}

inline TraceFile load_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::DenoiserFailure, "cannot open trace file " + path);
    return read_trace(in);
}

inline void save_trace(const TraceFile& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::TraceBuildError, "cannot open " + path + " for writing");
    write_trace(t, out);
}

} // namespace dlm::trace
