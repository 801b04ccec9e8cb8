#include "mpda/synth.hpp"

#include <cmath>
#include <random>

#include "mpda/kernels.hpp"
#include "mpda/rng.hpp"

namespace mpda {

Scenario parse_scenario(const std::string& s) {
    if (s == "normal") return Scenario::normal;
    if (s == "hetero1") return Scenario::hetero1;
    if (s == "hetero2") return Scenario::hetero2;
    throw std::invalid_argument("unknown scenario: " + s);
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::normal: return "normal";
        case Scenario::hetero1: return "hetero1";
        case Scenario::hetero2: return "hetero2";
    }
    return "?";
}

namespace {
const DomainSpec kSource{"source", 0, 32, 88, 64, -1, 101, 0.002};
const DomainSpec kTrainA{"hetero1_train", 1, 24, 64, 96, +1, 202, 0.002};
const DomainSpec kTestA{"hetero1_test", 2, 16, 56, 128, +1, 303, 0.002};
const DomainSpec kTrainB{"hetero2_train", 3, 40, 72, 48, +1, 404, 0.002};
const DomainSpec kTestB{"hetero2_test", 4, 20, 48, 40, +1, 505, 0.002};
}  // namespace

ScenarioDomains scenario_domains(Scenario s) {
    switch (s) {
        case Scenario::normal: return {kSource, kSource, kSource};
        case Scenario::hetero1: return {kSource, kTrainA, kTestA};
        case Scenario::hetero2: return {kSource, kTrainB, kTestB};
    }
    throw std::invalid_argument("bad scenario");
}

SceneSpec gen_scene(uint64_t seed, const SceneGenConfig& cfg) {
    std::mt19937_64 eng(mix_seed(seed, 0xace5));
    SceneSpec scene;
    scene.seed = seed;
    scene.canvas_h = cfg.canvas_h;
    scene.canvas_w = cfg.canvas_w;

    std::uniform_int_distribution<int> n_box_d(cfg.min_boxes, cfg.max_boxes);
    std::uniform_real_distribution<double> size_d(cfg.min_size, cfg.max_size);
    const int want = n_box_d(eng);
    for (int b = 0; b < want; ++b) {
        for (int attempt = 0; attempt < 100; ++attempt) {
            Box box;
            box.w = size_d(eng);
            box.h = size_d(eng);
            std::uniform_real_distribution<double> cx_d(box.w / 2, cfg.canvas_w - box.w / 2);
            std::uniform_real_distribution<double> cy_d(box.h / 2, cfg.canvas_h - box.h / 2);
            box.cx = cx_d(eng);
            box.cy = cy_d(eng);
            bool clear = true;
            for (const Box& other : scene.boxes) {
                const double dx = box.cx - other.cx, dy = box.cy - other.cy;
                if (dx * dx + dy * dy < cfg.min_sep * cfg.min_sep) {
                    clear = false;
                    break;
                }
            }
            if (clear) {
                scene.boxes.push_back(box);
                break;
            }
        }
    }
    require(static_cast<int>(scene.boxes.size()) >= cfg.min_boxes,
            "scene generation failed to place the minimum box count");

    std::uniform_int_distribution<int> n_collab_d(1, cfg.max_collab);
    scene.n_collab = n_collab_d(eng);

    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const int agents = 1 + scene.n_collab;
    scene.visibility.assign(agents, std::vector<uint8_t>(scene.boxes.size(), 0));
    for (size_t b = 0; b < scene.boxes.size(); ++b) {
        for (int a = 0; a < agents; ++a) {
            const double p = (a == 0) ? cfg.ego_vis : cfg.collab_vis;
            scene.visibility[a][b] = coin(eng) < p ? 1 : 0;
        }
    }
    // every object must be visible to someone
    for (size_t b = 0; b < scene.boxes.size(); ++b) {
        bool seen = false;
        for (int a = 0; a < agents; ++a) seen = seen || scene.visibility[a][b];
        if (!seen) {
            std::uniform_int_distribution<int> pick(0, agents - 1);
            scene.visibility[static_cast<size_t>(pick(eng))][b] = 1;
        }
    }
    return scene;
}

Tensor<float> rasterize_occupancy(const SceneSpec& scene, const DomainSpec& dom, int agent_view) {
    require(agent_view >= 0 && agent_view < 1 + scene.n_collab, "agent view out of range");
    Tensor<float> occ({1, dom.h, dom.w, 1});
    const double sy = static_cast<double>(dom.h) / scene.canvas_h;
    const double sx = static_cast<double>(dom.w) / scene.canvas_w;
    for (size_t b = 0; b < scene.boxes.size(); ++b) {
        if (!scene.visibility[static_cast<size_t>(agent_view)][b]) continue;
        const Box& box = scene.boxes[b];
        const double y0 = (box.cy - box.h / 2) * sy, y1 = (box.cy + box.h / 2) * sy;
        const double x0 = (box.cx - box.w / 2) * sx, x1 = (box.cx + box.w / 2) * sx;
        // cells whose center falls in the scaled box
        for (int i = std::max(0, static_cast<int>(std::floor(y0)));
             i < std::min(dom.h, static_cast<int>(std::ceil(y1))); ++i) {
            if (i + 0.5 < y0 || i + 0.5 > y1) continue;
            for (int j = std::max(0, static_cast<int>(std::floor(x0)));
                 j < std::min(dom.w, static_cast<int>(std::ceil(x1))); ++j) {
                if (j + 0.5 < x0 || j + 0.5 > x1) continue;
                occ.at4(0, i, j, 0) = 1.0f;
            }
        }
    }
    return occ;
}

FeatureMap<float> extract_features(const SceneSpec& scene, const DomainSpec& dom,
                                   int agent_view) {
    Tensor<float> occ = rasterize_occupancy(scene, dom, agent_view);

    Tensor<float> w1({3, 3, 1, dom.c}), b1({dom.c});
    Tensor<float> w2({3, 3, dom.c, dom.c}), b2({dom.c});
    fill_normal(w1, mix_seed(dom.kernel_seed, 1), 0.8);
    fill_normal(b1, mix_seed(dom.kernel_seed, 2), 0.02);
    fill_normal(w2, mix_seed(dom.kernel_seed, 3), 1.5 / std::sqrt(9.0 * dom.c));
    fill_normal(b2, mix_seed(dom.kernel_seed, 4), 0.02);

    Tensor<float> h1({1, dom.h, dom.w, dom.c});
    kernels::conv3x3_fwd(occ.ptr(), w1.ptr(), b1.ptr(), h1.ptr(), 1, dom.h, dom.w, 1, dom.c);
    Tensor<float> h1g({1, dom.h, dom.w, dom.c});
    kernels::gelu_fwd(h1.ptr(), h1g.ptr(), h1.size());
    Tensor<float> out({1, dom.h, dom.w, dom.c});
    kernels::conv3x3_fwd(h1g.ptr(), w2.ptr(), b2.ptr(), out.ptr(), 1, dom.h, dom.w, dom.c,
                         dom.c);

    if (dom.polarity < 0)
        for (auto& v : out.data) v = -v;
    if (dom.noise_sigma > 0) {
        Tensor<float> noise(out.shape);
        fill_normal(noise, mix_seed(scene.seed, dom.id, static_cast<uint64_t>(agent_view)),
                    dom.noise_sigma);
        kernels::add(out.ptr(), noise.ptr(), out.ptr(), out.size());
    }

    FeatureMap<float> fm;
    fm.data = std::move(out);
    fm.domain_id = dom.id;
    fm.agent_ids = {static_cast<uint32_t>(agent_view)};
    return fm;
}

}  // namespace mpda
