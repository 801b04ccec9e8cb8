#include "mpda/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mpda {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', 'K'};
constexpr uint8_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw std::runtime_error("checkpoint: truncated");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

const CheckpointSection* Checkpoint::find(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    os.put(static_cast<char>(ck.dtype));
    put_u32(os, static_cast<uint32_t>(ck.meta.size()));
    os.write(ck.meta.data(), static_cast<std::streamsize>(ck.meta.size()));
    put_u32(os, static_cast<uint32_t>(ck.sections.size()));
    for (const auto& s : ck.sections) {
        put_u16(os, static_cast<uint16_t>(s.name.size()));
        os.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
        os.put(static_cast<char>(s.shape.size()));
        int64_t count = 1;
        for (int d : s.shape) {
            put_u32(os, static_cast<uint32_t>(d));
            count *= d;
        }
        if (count != static_cast<int64_t>(s.data.size()))
            throw std::runtime_error("checkpoint: section " + s.name + " shape/data mismatch");
        if (ck.dtype == 0) {
            for (double v : s.data) {
                const float f = static_cast<float>(v);
                os.write(reinterpret_cast<const char*>(&f), 4);
            }
        } else {
            os.write(reinterpret_cast<const char*>(s.data.data()),
                     static_cast<std::streamsize>(s.data.size() * 8));
        }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const int version = is.get();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.dtype = is.get();
    if (ck.dtype != 0 && ck.dtype != 1)
        throw std::runtime_error("checkpoint: unsupported dtype " + std::to_string(ck.dtype));
    const uint32_t meta_len = get_u32(is);
    ck.meta.resize(meta_len);
    is.read(ck.meta.data(), meta_len);
    const uint32_t n = get_u32(is);
    ck.sections.resize(n);
    for (auto& s : ck.sections) {
        const uint16_t name_len = get_u16(is);
        s.name.resize(name_len);
        is.read(s.name.data(), name_len);
        const int rank = is.get();
        if (rank <= 0 || rank > 8) throw std::runtime_error("checkpoint: bad section rank");
        s.shape.resize(static_cast<size_t>(rank));
        int64_t count = 1;
        for (auto& d : s.shape) {
            d = static_cast<int>(get_u32(is));
            if (d <= 0) throw std::runtime_error("checkpoint: bad dimension");
            count *= d;
        }
        s.data.resize(static_cast<size_t>(count));
        if (ck.dtype == 0) {
            for (auto& v : s.data) {
                float f;
                is.read(reinterpret_cast<char*>(&f), 4);
                v = static_cast<double>(f);
            }
        } else {
            is.read(reinterpret_cast<char*>(s.data.data()),
                    static_cast<std::streamsize>(count * 8));
        }
        if (!is) throw std::runtime_error("checkpoint: truncated section " + s.name);
    }
    return ck;
}

}  // namespace mpda
