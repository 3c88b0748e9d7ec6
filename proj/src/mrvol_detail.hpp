#pragma once

// Shared MRVOL001 container plumbing for volume.cpp and atlas.cpp.
//
// Layout: bytes 0-7 magic "MRVOL001"; u32 LE nx, ny, nz; f32 LE sx, sy, sz;
// u8 payload code (0 = f32 intensities, 1 = u16 labels, 2 = f32 probability
// planes, class-major); codes 1 and 2 are followed by u16 LE num_classes;
// then the raw payload, row-major with x varying fastest.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "patchseg/errors.hpp"
#include "patchseg/volume.hpp"

namespace patchseg::mrvol {

inline constexpr char kMagicPrefix[6] = {'M', 'R', 'V', 'O', 'L', '\0'};
inline constexpr char kVersion[4] = {'0', '0', '1', '\0'};

enum class PayloadCode : std::uint8_t { intensities = 0, labels = 1, probabilities = 2 };

static_assert(std::endian::native == std::endian::little,
              "MRVOL I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    Reader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open file: " + path_);
        f.seekg(0, std::ios::end);
        bytes_.resize(static_cast<std::size_t>(f.tellg()));
        f.seekg(0, std::ios::beg);
        f.read(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
        if (!f) throw IoError("read failure: " + path_);
    }

    template <typename T>
    T take() {
        if (pos_ + sizeof(T) > bytes_.size())
            throw IoError("truncated payload: " + path_);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    void take_raw(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw IoError("truncated payload: " + path_);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

struct Header {
    Dims dims;
    Spacing spacing;
    PayloadCode code;
    std::uint16_t num_classes = 0; // codes 1 and 2 only
};

inline void write_header(std::string& out, const Header& h) {
    out.append(kMagicPrefix, 5);
    out.append(kVersion, 3);
    for (std::uint32_t d : h.dims) put(out, d);
    for (float s : h.spacing) put(out, s);
    put(out, static_cast<std::uint8_t>(h.code));
    if (h.code != PayloadCode::intensities) put(out, h.num_classes);
}

inline Header read_header(Reader& r) {
    char magic[8];
    r.take_raw(magic, 8);
    if (std::memcmp(magic, kMagicPrefix, 5) != 0)
        throw IoError("bad magic: " + r.path());
    if (std::memcmp(magic + 5, kVersion, 3) != 0)
        throw IoError("unsupported version: " + r.path());
    Header h;
    for (auto& d : h.dims) d = r.take<std::uint32_t>();
    for (auto& s : h.spacing) s = r.take<float>();
    const auto code = r.take<std::uint8_t>();
    if (code > 2) throw IoError("unknown payload code: " + r.path());
    h.code = static_cast<PayloadCode>(code);
    if (h.code != PayloadCode::intensities) h.num_classes = r.take<std::uint16_t>();
    for (auto d : h.dims)
        if (d == 0) throw IoError("invalid header (zero dimension): " + r.path());
    for (auto s : h.spacing)
        if (!(s > 0.0f)) throw IoError("invalid header (nonpositive spacing): " + r.path());
    return h;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failure: " + path.string());
}

} // namespace patchseg::mrvol
