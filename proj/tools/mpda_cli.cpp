#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpda/config.hpp"
#include "mpda/feature_map.hpp"
#include "mpda/gradcheck.hpp"
#include "mpda/train.hpp"

namespace {

using namespace mpda;

// exit codes: 0 ok, 1 validation error, 2 runtime/divergence error

std::vector<int> parse_agent_list(const std::string& s) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        const std::string tok = s.substr(pos, comma - pos);
        size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument("bad agent count: " + tok);
        out.push_back(v);
        pos = comma + 1;
    }
    if (out.empty()) throw std::invalid_argument("empty agent list");
    return out;
}

int cmd_gen(uint64_t seed, int count, const std::string& out_dir, const std::string& scenario_s) {
    const Scenario sc = parse_scenario(scenario_s);
    const ScenarioDomains doms = scenario_domains(sc);
    for (int i = 0; i < count; ++i) {
        const SceneSpec scene = gen_scene(mix_seed(seed, 1001, i));
        const std::string stem = out_dir + "/scene_" + std::to_string(i);

        FeatureMap<float> ego = extract_features(scene, doms.ego, 0);
        write_fmap(ego, stem + "_ego.fmap");

        FeatureMap<float> collab;
        collab.data = Tensor<float>({scene.n_collab, doms.collab_train.h, doms.collab_train.w,
                                     doms.collab_train.c});
        collab.domain_id = doms.collab_train.id;
        const int64_t plane = collab.data.size() / scene.n_collab;
        for (int v = 1; v <= scene.n_collab; ++v) {
            FeatureMap<float> fm = extract_features(scene, doms.collab_train, v);
            std::copy(fm.data.data.begin(), fm.data.data.end(),
                      collab.data.data.begin() + (v - 1) * plane);
            collab.agent_ids.push_back(static_cast<uint32_t>(v));
        }
        write_fmap(collab, stem + "_collab.fmap");

        std::string gt = "[";
        for (size_t b = 0; b < scene.boxes.size(); ++b) {
            const Box& bx = scene.boxes[b];
            if (b) gt += ",";
            gt += "{\"cx\":" + std::to_string(bx.cx) + ",\"cy\":" + std::to_string(bx.cy) +
                  ",\"w\":" + std::to_string(bx.w) + ",\"h\":" + std::to_string(bx.h) + "}";
        }
        gt += "]\n";
        FILE* f = std::fopen((stem + "_gt.json").c_str(), "wb");
        if (!f) throw std::runtime_error("cannot write " + stem + "_gt.json");
        std::fwrite(gt.data(), 1, gt.size(), f);
        std::fclose(f);
    }
    std::printf("wrote %d scenes to %s\n", count, out_dir.c_str());
    return 0;
}

template <typename T>
int run_train(const TrainConfig& cfg, const std::string& out_path) {
    TrainResult<T> res = train_model<T>(cfg);
    Checkpoint ck = to_checkpoint(res.model);
    write_checkpoint(out_path, ck);
    const LossReport& rep = res.report;
    for (size_t i = 0; i < rep.steps.size(); ++i) {
        const StepLoss& s = rep.steps[i];
        std::printf("step %4zu  L %.6f  det %.6f  domain %.6f\n", i, s.total, s.det, s.domain);
    }
    for (size_t e = 0; e < rep.lr_per_epoch.size(); ++e) {
        std::printf("epoch %2zu  lr %.6g", e, rep.lr_per_epoch[e]);
        if (e < rep.probe_acc_per_epoch.size())
            std::printf("  probe_acc %.3f", rep.probe_acc_per_epoch[e]);
        std::printf("\n");
    }
    std::printf("checkpoint %s\n", out_path.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_path) {
    const TrainConfig cfg = parse_config_file(config_path);
    if (cfg.precision == Precision::f64) return run_train<double>(cfg, out_path);
    return run_train<float>(cfg, out_path);
}

template <typename T>
int run_eval(const Checkpoint& ck, Scenario sc, uint64_t seed, int scenes) {
    Pipeline<T> model = pipeline_from_checkpoint<T>(ck);
    const EvalReport r = evaluate_model(model, sc, seed, scenes);
    std::printf("scenario %s  method %s\n", to_string(sc).c_str(),
                to_string(model.method).c_str());
    std::printf("AP@0.5 %.4f  AP@0.7 %.4f  gt %lld  det %lld\n", r.ap50, r.ap70,
                static_cast<long long>(r.num_gt), static_cast<long long>(r.num_det));
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& scenario_s, uint64_t seed, int scenes) {
    const Checkpoint ck = read_checkpoint(ckpt);
    const Scenario sc = parse_scenario(scenario_s);
    if (ck.dtype == 1) return run_eval<double>(ck, sc, seed, scenes);
    return run_eval<float>(ck, sc, seed, scenes);
}

template <typename T>
int run_adapt(const Checkpoint& ck, const std::string& in_path, const std::string& ego_path,
              const std::string& out_path) {
    Pipeline<T> model = pipeline_from_checkpoint<T>(ck);
    require(model.method == Method::mpda, "adapt needs a checkpoint with a trained adapter");
    const FeatureMap<float> in_map = read_fmap(in_path);
    const FeatureMap<float> ego_map = read_fmap(ego_path);
    require(ego_map.agents() == 1, "ego map must hold exactly one agent");

    Tape<T> tp;
    VarId fs = tp.leaf(ego_map.data.template cast<T>());
    VarId ft = tp.leaf(in_map.data.template cast<T>());
    VarId ftp = resize_features(tp, ft, model.adapter, model.rcfg,
                                mix_seed(model.rcfg.rng_seed, 77));
    VarId ft2 = cross_domain_transform(tp, ftp, fs, model.adapter, model.rcfg.fax);

    FeatureMap<float> out_map;
    out_map.data = tp.val(ft2).template cast<float>();
    out_map.domain_id = ego_map.domain_id;  // adapted into the ego domain
    out_map.agent_ids = in_map.agent_ids;
    write_fmap(out_map, out_path);
    std::printf("adapted %s -> %s %s\n", in_path.c_str(), out_path.c_str(),
                shape_str(out_map.data.shape).c_str());
    return 0;
}

int cmd_adapt(const std::string& in_path, const std::string& ego_path, const std::string& ckpt,
              const std::string& out_path) {
    const Checkpoint ck = read_checkpoint(ckpt);
    if (ck.dtype == 1) return run_adapt<double>(ck, in_path, ego_path, out_path);
    return run_adapt<float>(ck, in_path, ego_path, out_path);
}

int cmd_viz(const std::string& in_path, const std::string& out_path) {
    const FeatureMap<float> fm = read_fmap(in_path);
    const std::vector<std::string> paths = viz_export(fm, out_path);
    for (const std::string& p : paths) std::printf("%s\n", p.c_str());
    return 0;
}

template <typename T>
int run_bench(const Checkpoint& ck, const std::vector<int>& agents) {
    Pipeline<T> model = pipeline_from_checkpoint<T>(ck);
    const std::vector<BenchRow> rows = bench_inference(model, agents);
    std::printf("%-8s %-12s %-12s\n", "agents", "fps_mean", "fps_std");
    for (const BenchRow& r : rows)
        std::printf("%-8d %-12.2f %-12.2f\n", r.agents, r.fps_mean, r.fps_std);
    return 0;
}

int cmd_bench(const std::string& ckpt, const std::string& agents_s) {
    const Checkpoint ck = read_checkpoint(ckpt);
    const std::vector<int> agents = parse_agent_list(agents_s);
    if (ck.dtype == 1) return run_bench<double>(ck, agents);
    return run_bench<float>(ck, agents);
}

int cmd_gradcheck() {
    const std::vector<GradCheckRow> rows = run_gradient_suite();
    for (const GradCheckRow& r : rows)
        std::printf("%-20s rel_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.rel_err, r.tol,
                    r.pass ? "pass" : "FAIL");
    if (!all_pass(rows)) {
        std::fprintf(stderr, "gradient suite failed\n");
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-domain perception pipeline"};
    app.require_subcommand(1);

    uint64_t gen_seed = 1;
    int gen_count = 4;
    std::string gen_out = ".";
    std::string gen_scenario = "hetero1";
    CLI::App* gen = app.add_subcommand("gen", "generate scenes as feature-map files");
    gen->add_option("--seed", gen_seed, "base seed");
    gen->add_option("--count", gen_count, "number of scenes")->check(CLI::PositiveNumber);
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--scenario", gen_scenario, "normal|hetero1|hetero2");

    std::string train_config, train_out = "model.ckpt";
    CLI::App* train = app.add_subcommand("train", "train from a config file");
    train->add_option("--config", train_config, "config path")->required();
    train->add_option("--out", train_out, "checkpoint path");

    std::string eval_ckpt, eval_scenario = "hetero1";
    uint64_t eval_seed = 7;
    int eval_scenes = 24;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--scenario", eval_scenario, "normal|hetero1|hetero2");
    eval_cmd->add_option("--seed", eval_seed, "held-out split seed");
    eval_cmd->add_option("--scenes", eval_scenes, "scene count")->check(CLI::PositiveNumber);

    std::string adapt_in, adapt_ego, adapt_ckpt, adapt_out;
    CLI::App* adapt = app.add_subcommand("adapt", "run the adapter over a feature-map file");
    adapt->add_option("--in", adapt_in, "collaborator feature map")->required();
    adapt->add_option("--ego", adapt_ego, "ego feature map (cross-domain keys/values)")
        ->required();
    adapt->add_option("--ckpt", adapt_ckpt, "checkpoint path")->required();
    adapt->add_option("--out", adapt_out, "output feature map")->required();

    std::string viz_in, viz_out;
    CLI::App* viz = app.add_subcommand("viz", "export a feature map as PGM images");
    viz->add_option("--in", viz_in, "feature map path")->required();
    viz->add_option("--out", viz_out, "output image path")->required();

    std::string bench_ckpt, bench_agents = "1,2,3,4";
    CLI::App* bench = app.add_subcommand("bench", "forward-pass throughput");
    bench->add_option("--ckpt", bench_ckpt, "checkpoint path")->required();
    bench->add_option("--agents", bench_agents, "comma-separated agent counts");

    app.add_subcommand("gradcheck", "finite-difference gradient suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(gen_seed, gen_count, gen_out, gen_scenario);
        if (train->parsed()) return cmd_train(train_config, train_out);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_scenario, eval_seed, eval_scenes);
        if (adapt->parsed()) return cmd_adapt(adapt_in, adapt_ego, adapt_ckpt, adapt_out);
        if (viz->parsed()) return cmd_viz(viz_in, viz_out);
        if (bench->parsed()) return cmd_bench(bench_ckpt, bench_agents);
        if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
    } catch (const FmapError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
