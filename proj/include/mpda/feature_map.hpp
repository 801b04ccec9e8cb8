#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpda/tensor.hpp"

namespace mpda {

// Rank-4 feature stack [agents, height, width, channels] plus provenance.
// Immutable by convention: operations below return new maps.
template <typename T>
struct FeatureMap {
    Tensor<T> data;  // [A,H,W,C]
    uint32_t domain_id = 0;
    std::vector<uint32_t> agent_ids;

    int agents() const { return data.shape[0]; }
    int height() const { return data.shape[1]; }
    int width() const { return data.shape[2]; }
    int channels() const { return data.shape[3]; }

    void validate() const;

    template <typename U>
    FeatureMap<U> cast() const {
        FeatureMap<U> out;
        out.data = data.template cast<U>();
        out.domain_id = domain_id;
        out.agent_ids = agent_ids;
        return out;
    }
};

enum class FmapErrc {
    bad_magic,
    bad_version,  // also covers an unknown dtype byte
    truncated,
    dim_overflow,
    io,
};

class FmapError : public std::runtime_error {
public:
    FmapError(FmapErrc c, const std::string& msg) : std::runtime_error(msg), code(c) {}
    FmapErrc code;
};

// Binary format (little-endian): magic "FMAP", version u8 = 1, dtype u8
// (0 = f32), domain_id u32, A u32, H u32, W u32, C u32, A agent ids (u32),
// then A*H*W*C f32 values in row-major [A,H,W,C] order.
void write_fmap(const FeatureMap<float>& fm, const std::string& path);
FeatureMap<float> read_fmap(const std::string& path);

// corner-aligned bilinear resize to [A, out_h, out_w, C]
template <typename T>
FeatureMap<T> bilinear_resize(const FeatureMap<T>& fm, int out_h, int out_w);

// out[a,i,j] = sum_c |data[a,i,j,c]|
template <typename T>
Tensor<T> abs_channel_sum(const FeatureMap<T>& fm);

// One 8-bit PGM (P5) per agent, abs_channel_sum min-max scaled to [0,255]
// (round half up; constant planes map to 0). A single-agent map writes to
// `path` exactly; with A > 1 agent k goes to `stem_a<k>.pgm`. Returns the
// paths written.
template <typename T>
std::vector<std::string> viz_export(const FeatureMap<T>& fm, const std::string& path);

}  // namespace mpda
