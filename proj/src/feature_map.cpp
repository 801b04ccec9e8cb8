#include "mpda/feature_map.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mpda/kernels.hpp"

namespace mpda {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'A', 'P'};
constexpr uint8_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;
constexpr uint64_t kMaxElems = uint64_t(1) << 31;

static_assert(sizeof(float) == 4, "f32 payload assumes 4-byte float");

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FmapError(FmapErrc::truncated, "truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

template <typename T>
void FeatureMap<T>::validate() const {
    require(data.shape.size() == 4, "feature map must be rank 4, got " + shape_str(data.shape));
    require(agent_ids.size() == static_cast<size_t>(data.shape[0]),
            "agent_ids length must equal the agent axis");
    require(data.all_finite(), "feature map contains NaN/Inf");
}

void write_fmap(const FeatureMap<float>& fm, const std::string& path) {
    fm.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FmapError(FmapErrc::io, "cannot open for writing: " + path);
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    os.put(static_cast<char>(kDtypeF32));
    put_u32(os, fm.domain_id);
    for (int d : fm.data.shape) put_u32(os, static_cast<uint32_t>(d));
    for (uint32_t id : fm.agent_ids) put_u32(os, id);
    os.write(reinterpret_cast<const char*>(fm.data.data.data()),
             static_cast<std::streamsize>(fm.data.size() * 4));
    if (!os) throw FmapError(FmapErrc::io, "write failed: " + path);
}

FeatureMap<float> read_fmap(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FmapError(FmapErrc::io, "cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is) throw FmapError(FmapErrc::truncated, "file shorter than the magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FmapError(FmapErrc::bad_magic, "bad magic in " + path);
    const int version = is.get();
    const int dtype = is.get();
    if (version == EOF || dtype == EOF)
        throw FmapError(FmapErrc::truncated, "truncated header");
    if (version != kVersion)
        throw FmapError(FmapErrc::bad_version, "unsupported version " + std::to_string(version));
    if (dtype != kDtypeF32)
        throw FmapError(FmapErrc::bad_version, "unsupported dtype " + std::to_string(dtype));

    FeatureMap<float> fm;
    fm.domain_id = get_u32(is);
    uint32_t dims[4];
    uint64_t count = 1;
    for (auto& d : dims) {
        d = get_u32(is);
        if (d == 0) throw FmapError(FmapErrc::dim_overflow, "zero dimension");
        count *= d;
        if (count > kMaxElems) throw FmapError(FmapErrc::dim_overflow, "dimensions overflow");
    }
    fm.agent_ids.resize(dims[0]);
    for (auto& id : fm.agent_ids) id = get_u32(is);
    fm.data = Tensor<float>({static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                             static_cast<int>(dims[2]), static_cast<int>(dims[3])});
    is.read(reinterpret_cast<char*>(fm.data.data.data()),
            static_cast<std::streamsize>(count * 4));
    if (static_cast<uint64_t>(is.gcount()) != count * 4)
        throw FmapError(FmapErrc::truncated, "truncated payload");
    return fm;
}

template <typename T>
FeatureMap<T> bilinear_resize(const FeatureMap<T>& fm, int out_h, int out_w) {
    fm.validate();
    require(out_h >= 1 && out_w >= 1, "resize dims must be positive");
    FeatureMap<T> out;
    out.domain_id = fm.domain_id;
    out.agent_ids = fm.agent_ids;
    out.data = Tensor<T>({fm.agents(), out_h, out_w, fm.channels()});
    kernels::bilinear_fwd(fm.data.data.data(), out.data.data.data(), fm.agents(), fm.height(),
                          fm.width(), out_h, out_w, fm.channels());
    return out;
}

template <typename T>
Tensor<T> abs_channel_sum(const FeatureMap<T>& fm) {
    fm.validate();
    const int a = fm.agents(), h = fm.height(), w = fm.width(), c = fm.channels();
    Tensor<T> out({a, h, w});
    const T* src = fm.data.data.data();
    T* dst = out.data.data();
    const int64_t px = static_cast<int64_t>(a) * h * w;
    for (int64_t p = 0; p < px; ++p) {
        T acc = 0;
        for (int ch = 0; ch < c; ++ch) acc += std::abs(src[p * c + ch]);
        dst[p] = acc;
    }
    return out;
}

namespace {
std::string agent_path(const std::string& path, int agent) {
    const size_t dot = path.rfind('.');
    if (dot == std::string::npos) return path + "_a" + std::to_string(agent);
    return path.substr(0, dot) + "_a" + std::to_string(agent) + path.substr(dot);
}
}  // namespace

template <typename T>
std::vector<std::string> viz_export(const FeatureMap<T>& fm, const std::string& path) {
    const Tensor<T> sums = abs_channel_sum(fm);
    const int a = fm.agents(), h = fm.height(), w = fm.width();
    const int64_t plane = static_cast<int64_t>(h) * w;
    std::vector<std::string> written;
    for (int ag = 0; ag < a; ++ag) {
        const T* s = sums.data.data() + ag * plane;
        T mn = s[0], mx = s[0];
        for (int64_t p = 1; p < plane; ++p) {
            mn = std::min(mn, s[p]);
            mx = std::max(mx, s[p]);
        }
        std::vector<unsigned char> pix(plane, 0);
        if (mx > mn) {
            const double span = static_cast<double>(mx - mn);
            for (int64_t p = 0; p < plane; ++p)
                pix[p] = static_cast<unsigned char>(
                    std::lround((static_cast<double>(s[p] - mn) / span) * 255.0));
        }
        const std::string out = (a == 1) ? path : agent_path(path, ag);
        std::ofstream os(out, std::ios::binary);
        if (!os) throw FmapError(FmapErrc::io, "cannot open for writing: " + out);
        os << "P5\n" << w << " " << h << "\n255\n";
        os.write(reinterpret_cast<const char*>(pix.data()),
                 static_cast<std::streamsize>(pix.size()));
        if (!os) throw FmapError(FmapErrc::io, "write failed: " + out);
        written.push_back(out);
    }
    return written;
}

template struct FeatureMap<float>;
template struct FeatureMap<double>;
template FeatureMap<float> bilinear_resize<float>(const FeatureMap<float>&, int, int);
template FeatureMap<double> bilinear_resize<double>(const FeatureMap<double>&, int, int);
template Tensor<float> abs_channel_sum<float>(const FeatureMap<float>&);
template Tensor<double> abs_channel_sum<double>(const FeatureMap<double>&);
template std::vector<std::string> viz_export<float>(const FeatureMap<float>&, const std::string&);
template std::vector<std::string> viz_export<double>(const FeatureMap<double>&,
                                                     const std::string&);

}  // namespace mpda
