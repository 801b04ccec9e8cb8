#pragma once

#include <string>
#include <vector>

#include "mpda/detection.hpp"
#include "mpda/feature_map.hpp"

namespace mpda {

// A pseudo-backbone: fixed seeded conv stack over an occupancy raster.
// Domains differ along the three gap axes: spatial resolution, channel
// count, and response pattern (polarity and kernel seed).
struct DomainSpec {
    std::string name;
    uint32_t id = 0;
    int h = 32, w = 88, c = 64;
    int polarity = 1;
    uint64_t kernel_seed = 0;
    double noise_sigma = 0.02;
};

enum class Scenario { normal, hetero1, hetero2 };

Scenario parse_scenario(const std::string& s);
std::string to_string(Scenario s);

// ego domain plus the collaborator domains used for training and held-out
// evaluation; in the hetero scenarios the two collaborator domains differ
struct ScenarioDomains {
    DomainSpec ego;
    DomainSpec collab_train;
    DomainSpec collab_test;
};

ScenarioDomains scenario_domains(Scenario s);

struct SceneGenConfig {
    int canvas_h = 32, canvas_w = 88;
    int min_boxes = 2, max_boxes = 8;
    double min_size = 3.0, max_size = 6.5;
    double min_sep = 6.0;  // center-to-center, cells
    int max_collab = 3;
    double ego_vis = 0.65, collab_vis = 0.55;
};

// Ground truth plus who sees what. visibility[0] is the ego view; every
// object is visible to at least one agent.
struct SceneSpec {
    uint64_t seed = 0;
    int canvas_h = 32, canvas_w = 88;
    BoxSet boxes;
    int n_collab = 0;
    std::vector<std::vector<uint8_t>> visibility;  // [1+n_collab][boxes]
};

SceneSpec gen_scene(uint64_t seed, const SceneGenConfig& cfg = {});

// boxes visible to agent_view rasterized onto the domain's grid (1 inside,
// 0 outside), shape [1, dom.h, dom.w, 1]
Tensor<float> rasterize_occupancy(const SceneSpec& scene, const DomainSpec& dom, int agent_view);

// occupancy -> seeded conv3x3(1->C) -> gelu -> conv3x3(C->C), times
// polarity, plus seeded Gaussian noise; deterministic per
// (scene seed, domain, agent_view)
FeatureMap<float> extract_features(const SceneSpec& scene, const DomainSpec& dom, int agent_view);

}  // namespace mpda
