#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mpda {

// On-disk model state. Little-endian, like the feature-map format:
//   magic "MPCK" (4 bytes), version u8 = 1, dtype u8 (0 = f32, 1 = f64),
//   meta_len u32 + meta bytes (JSON), n_sections u32, then per section:
//   name_len u16 + name bytes, rank u8, rank x u32 dims, then the payload
//   (dtype-sized values, row-major).
// Values stage through double in memory; f32 -> double -> f32 is lossless,
// so f32 round trips are bit-exact.
struct CheckpointSection {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
};

struct Checkpoint {
    int dtype = 0;  // 0 = f32, 1 = f64
    std::string meta;
    std::vector<CheckpointSection> sections;

    const CheckpointSection* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace mpda
