// Benchmark and rendering harness: sort benchmarks with cache simulation,
// cost-model fitting, end-to-end renders, and the optimization ablations.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "texsplat/cache_model.hpp"
#include "texsplat/gs_pipeline.hpp"
#include "texsplat/io_ingest.hpp"
#include "texsplat/synthetic.hpp"
#include "texsplat/texsort.hpp"

using namespace texsplat;

namespace {

struct CommonOptions {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::vector<std::string> cache_specs;
    std::string background = "black";
    bool no_layout = false;
    bool no_packing = false;
    bool no_fusion = false;
    bool oracle = false;
    bool trace = false;
    std::string scene = "synth:1000";
    std::string camera;
    std::vector<std::uint64_t> sizes;
};

std::vector<cache::CacheConfig> parse_cache_specs(const std::vector<std::string>& specs) {
    std::vector<cache::CacheConfig> configs;
    for (const std::string& s : specs) {
        const auto colon = s.find(':');
        if (colon == std::string::npos) {
            throw Error(ErrorKind::input, "cache spec must be b:capacity, got '" + s + "'");
        }
        cache::CacheConfig cfg;
        cfg.block_edge = std::stoi(s.substr(0, colon));
        cfg.capacity_blocks = std::stoi(s.substr(colon + 1));
        cfg.validate();
        configs.push_back(cfg);
    }
    if (configs.empty()) {
        configs.push_back({8, 16});
    }
    return configs;
}

std::array<float, 3> parse_background(const std::string& spec) {
    if (spec == "black") {
        return {0.0f, 0.0f, 0.0f};
    }
    if (spec == "white") {
        return {1.0f, 1.0f, 1.0f};
    }
    std::array<float, 3> rgb{};
    std::stringstream ss(spec);
    std::string part;
    for (int c = 0; c < 3; ++c) {
        if (!std::getline(ss, part, ',')) {
            throw Error(ErrorKind::input, "background must be black, white, or r,g,b");
        }
        rgb[static_cast<std::size_t>(c)] = std::stof(part);
    }
    return rgb;
}

std::vector<gs::Gaussian3D> load_scene_spec(const std::string& spec, std::uint64_t seed,
                                            const gs::Camera& cam) {
    if (spec.rfind("synth:", 0) == 0) {
        const auto count = static_cast<std::uint32_t>(std::stoul(spec.substr(6)));
        return synth::make_scene(count, seed, cam);
    }
    io::LoadStats stats;
    auto scene = io::load_scene(spec, &stats);
    std::cout << "loaded " << stats.loaded << " points from " << spec;
    if (stats.rejected > 0) {
        std::cout << " (" << stats.rejected << " rejected)";
    }
    std::cout << "\n";
    return scene;
}

gs::Camera load_camera_spec(const CommonOptions& opts) {
    if (!opts.camera.empty()) {
        return io::load_camera(opts.camera);
    }
    return synth::default_camera();
}

std::filesystem::path ensure_out_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    std::filesystem::create_directories(p);
    return p;
}

/// Verifies a sorted result against an independent comparison sort; returns
/// the first mismatching index, or -1 when correct.
std::int64_t first_mismatch(std::span<const sort::KVPair> input,
                            const std::vector<sort::KVPair>& output) {
    if (output.size() != input.size()) {
        return 0;
    }
    std::vector<sort::KVPair> expect(input.begin(), input.end());
    std::stable_sort(expect.begin(), expect.end(),
                     [](const sort::KVPair& a, const sort::KVPair& b) { return a.key < b.key; });
    for (std::size_t i = 0; i < output.size(); ++i) {
        if (output[i].key != expect[i].key) {
            return static_cast<std::int64_t>(i);
        }
        if (output[i].value >= input.size() || input[output[i].value].key != output[i].key) {
            return static_cast<std::int64_t>(i);
        }
    }
    return -1;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------

int cmd_sort_bench(const CommonOptions& opts) {
    const auto configs = parse_cache_specs(opts.cache_specs);
    const auto out = ensure_out_dir(opts.out_dir);

    std::vector<std::uint64_t> sizes = opts.sizes;
    if (sizes.empty()) {
        sizes = {1u << 10, 1u << 14, 1u << 17};
    }
    for (std::uint64_t n : sizes) {
        if (n < (1u << 10) || n > (1u << 24)) {
            throw Error(ErrorKind::input, "sizes must lie in [2^10, 2^24]");
        }
    }

    std::vector<std::string> header{"n", "impl", "x", "passes", "element_accesses",
                                    "texel_reads", "texel_writes"};
    for (const auto& cfg : configs) {
        header.push_back("sim_misses_b" + std::to_string(cfg.block_edge) + "_c" +
                         std::to_string(cfg.capacity_blocks));
    }
    header.push_back("wall_ms");

    std::vector<std::vector<std::string>> rows;
    for (std::uint64_t n : sizes) {
        const auto input = synth::random_pairs(static_cast<std::uint32_t>(n), opts.seed + n);

        for (const bool baseline : {false, true}) {
            mem::Tracer tracer;
            std::vector<cache::LruCacheSim> sims;
            sims.reserve(configs.size());
            for (const auto& cfg : configs) {
                sims.emplace_back(cfg);
            }
            for (auto& sim : sims) {
                tracer.attach(&sim);
            }
            sort::SortOptions sort_options;
            sort_options.tracer = &tracer;

            const auto result = baseline ? sort::terasort_baseline(input, sort_options)
                                         : sort::sort(input, sort_options);
            const auto mismatch = first_mismatch(input, result.sorted);
            if (mismatch >= 0) {
                std::cerr << "verification failed for " << (baseline ? "baseline" : "ours")
                          << " at n=" << n << ", first mismatching index " << mismatch << "\n";
                return 1;
            }

            std::vector<std::string> row{std::to_string(n), baseline ? "baseline" : "ours",
                                         std::to_string(result.metrics.stages),
                                         std::to_string(result.metrics.passes),
                                         std::to_string(result.metrics.element_accesses),
                                         std::to_string(result.metrics.texel_reads),
                                         std::to_string(result.metrics.texel_writes)};
            for (const auto& sim : sims) {
                row.push_back(std::to_string(sim.stats().misses));
            }
            row.push_back(fmt_double(result.metrics.wall_ms));
            rows.push_back(std::move(row));
        }
    }

    const auto csv = (out / "sort_bench.csv").string();
    io::write_metrics(csv, header, rows);
    std::cout << "verified " << sizes.size() << " sizes against the comparison oracle\n";
    std::cout << "wrote " << csv << "\n";
    return 0;
}

int run_pipeline_once(const CommonOptions& opts, const gs::PipelineOptions& pipeline,
                      const std::string& tag, const std::filesystem::path& out,
                      gs::FrameResult& frame_out) {
    const gs::Camera cam = load_camera_spec(opts);
    const auto scene = load_scene_spec(opts.scene, opts.seed, cam);
    frame_out = gs::render_frame(scene, cam, pipeline);

    std::vector<std::string> header{"stage", "wall_ms", "texel_reads", "texel_writes"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& stage : frame_out.stages) {
        rows.push_back({stage.stage, fmt_double(stage.wall_ms), std::to_string(stage.texel_reads),
                        std::to_string(stage.texel_writes)});
    }
    io::write_metrics((out / (tag + "_stages.csv")).string(), header, rows);
    io::write_image(frame_out.image, (out / (tag + ".ppm")).string());

    if (opts.oracle) {
        const auto reference = gs::render_reference(scene, cam, pipeline.background);
        const float diff = gs::max_channel_diff(frame_out.image, reference);
        io::write_image(reference, (out / (tag + "_reference.ppm")).string());
        std::cout << tag << ": max per-channel diff vs reference = " << diff << "\n";
    }
    return 0;
}

int cmd_render(const CommonOptions& opts) {
    const auto out = ensure_out_dir(opts.out_dir);
    gs::PipelineOptions pipeline;
    pipeline.background = parse_background(opts.background);
    pipeline.data_layout = !opts.no_layout;
    pipeline.packing = !opts.no_packing;
    pipeline.fusion = !opts.no_fusion;

    mem::Tracer tracer;
    mem::TraceLog log;
    std::vector<cache::LruCacheSim> sims;
    const auto configs = parse_cache_specs(opts.cache_specs);
    if (opts.trace || !opts.cache_specs.empty()) {
        if (opts.trace) {
            tracer.attach(&log);
        }
        for (const auto& cfg : configs) {
            sims.emplace_back(cfg);
        }
        for (auto& sim : sims) {
            tracer.attach(&sim);
        }
        pipeline.tracer = &tracer;
    }

    gs::FrameResult frame;
    const int rc = run_pipeline_once(opts, pipeline, "render", out, frame);
    if (rc != 0) {
        return rc;
    }

    if (opts.trace) {
        std::ofstream trace_file(out / "trace.csv");
        log.write_csv(trace_file);
        std::cout << "wrote " << (out / "trace.csv").string() << "\n";
    }
    for (const auto& sim : sims) {
        std::cout << "cache b=" << sim.config().block_edge << " cap=" << sim.config().capacity_blocks
                  << ": reads=" << sim.stats().reads << " misses=" << sim.stats().misses
                  << " miss_rate=" << sim.stats().miss_rate() << "\n";
    }
    std::cout << "emitted pairs: " << frame.emitted_pairs << ", non-empty tiles: " << frame.tile_count
              << "\n";
    std::cout << "wrote " << (out / "render.ppm").string() << "\n";
    return 0;
}

int cmd_ablate(const CommonOptions& opts) {
    const auto out = ensure_out_dir(opts.out_dir);
    const gs::Camera cam = load_camera_spec(opts);
    const auto scene = load_scene_spec(opts.scene, opts.seed, cam);
    const auto background = parse_background(opts.background);

    struct Variant {
        const char* name;
        bool dl, vp, ec;
    };
    const Variant variants[] = {{"full", true, true, true},
                                {"no_dl", false, true, true},
                                {"no_dl_vp", false, false, true},
                                {"no_dl_vp_ec", false, false, false}};

    const auto reference = gs::render_reference(scene, cam, background);

    std::vector<std::string> header{"variant", "stage", "wall_ms", "texel_reads", "texel_writes"};
    std::vector<std::vector<std::string>> rows;
    std::vector<gs::FrameResult> frames;
    for (const Variant& v : variants) {
        gs::PipelineOptions pipeline;
        pipeline.background = background;
        pipeline.data_layout = v.dl;
        pipeline.packing = v.vp;
        pipeline.fusion = v.ec;
        frames.push_back(gs::render_frame(scene, cam, pipeline));
        const auto& frame = frames.back();

        const float diff = gs::max_channel_diff(frame.image, reference);
        if (diff > 1e-5f) {
            std::cerr << "variant " << v.name << " diverged from the reference by " << diff << "\n";
            return 1;
        }
        for (const auto& stage : frame.stages) {
            rows.push_back({v.name, stage.stage, fmt_double(stage.wall_ms),
                            std::to_string(stage.texel_reads), std::to_string(stage.texel_writes)});
        }
        io::write_image(frame.image, (out / ("ablate_" + std::string(v.name) + ".ppm")).string());
    }

    for (std::size_t i = 1; i < frames.size(); ++i) {
        if (frames[i].image.data != frames[0].image.data) {
            std::cerr << "variant " << variants[i].name << " image differs from the full variant\n";
            return 1;
        }
    }

    const auto csv = (out / "ablate.csv").string();
    io::write_metrics(csv, header, rows);
    std::cout << "all 4 variants bit-identical and oracle-equivalent\n";
    std::cout << "render-stage texel reads:";
    for (std::size_t i = 0; i < frames.size(); ++i) {
        std::cout << " " << variants[i].name << "=" << frames[i].stages[5].texel_reads;
    }
    std::cout << "\nwrote " << csv << "\n";
    return 0;
}

int cmd_fit_cost_model(const CommonOptions& opts) {
    const auto out = ensure_out_dir(opts.out_dir);

    // Hidden oracle: a b=16 single-block cache, so misses are exactly the
    // block-crossing count plus the compulsory first access.
    const cache::CacheConfig hidden{16, 1};
    constexpr std::uint32_t kTraceLength = 20000;
    constexpr int kSamples = 48;

    std::vector<cache::FitSample> samples;
    for (int i = 0; i < kSamples; ++i) {
        const auto trace =
            synth::pointer_chase_trace(kTraceLength, opts.seed * 1000 + static_cast<std::uint64_t>(i));
        const auto stats = cache::simulate(trace, hidden);
        samples.push_back(
            {cache::cross_block_histogram(trace), static_cast<double>(stats.misses)});
    }

    cache::LatencyModel model;
    try {
        model = cache::fit_latency_model(samples);
    } catch (const Error& e) {
        std::cerr << "degenerate fit: " << e.what() << "\n";
        return 2;
    }

    std::cout << "Block Size             ";
    for (int b : cache::kBlockSizes) {
        std::cout << "\t" << b;
    }
    std::cout << "\nCross Horizontal Block ";
    for (std::size_t i = 0; i < 5; ++i) {
        std::cout << "\t" << model.weight_horizontal[i];
    }
    std::cout << "\nCross Vertical Block   ";
    for (std::size_t i = 0; i < 5; ++i) {
        std::cout << "\t" << model.weight_vertical[i];
    }
    std::cout << "\nintercept=" << model.intercept << " r_squared=" << model.r_squared << "\n";

    nlohmann::json j;
    const auto names = cache::feature_names();
    const auto weights = model.weights();
    for (std::size_t i = 0; i < names.size(); ++i) {
        j["weights"][names[i]] = weights[i];
    }
    j["r_squared"] = model.r_squared;
    j["samples"] = kSamples;
    j["trace_length"] = kTraceLength;
    std::ofstream model_file(out / "cost_model.json");
    model_file << j.dump(2) << "\n";
    std::cout << "wrote " << (out / "cost_model.json").string() << "\n";

    return model.r_squared >= 0.99 ? 0 : 2;
}

int cmd_cache_report(const CommonOptions& opts) {
    const auto configs = parse_cache_specs(opts.cache_specs);
    const auto out = ensure_out_dir(opts.out_dir);

    std::vector<std::uint64_t> sizes = opts.sizes;
    if (sizes.empty()) {
        sizes = {1u << 14};
    }

    std::vector<std::string> header{"impl", "n", "b", "capacity", "reads", "misses", "miss_rate"};
    std::vector<std::vector<std::string>> rows;
    for (std::uint64_t n : sizes) {
        const auto input = synth::random_pairs(static_cast<std::uint32_t>(n), opts.seed + n);
        for (const bool baseline : {false, true}) {
            mem::Tracer tracer;
            std::vector<cache::LruCacheSim> sims;
            for (const auto& cfg : configs) {
                sims.emplace_back(cfg);
            }
            for (auto& sim : sims) {
                tracer.attach(&sim);
            }
            sort::SortOptions sort_options;
            sort_options.tracer = &tracer;
            const auto result = baseline ? sort::terasort_baseline(input, sort_options)
                                         : sort::sort(input, sort_options);
            if (first_mismatch(input, result.sorted) >= 0) {
                std::cerr << "sort verification failed\n";
                return 1;
            }
            for (const auto& sim : sims) {
                rows.push_back({baseline ? "baseline" : "ours", std::to_string(n),
                                std::to_string(sim.config().block_edge),
                                std::to_string(sim.config().capacity_blocks),
                                std::to_string(sim.stats().reads), std::to_string(sim.stats().misses),
                                fmt_double(sim.stats().miss_rate())});
            }
        }
    }
    const auto csv = (out / "cache_report.csv").string();
    io::write_metrics(csv, header, rows);
    std::cout << "wrote " << csv << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"texsplat: texture-memory sorting and Gaussian splatting benchmarks"};
    app.require_subcommand(1);
    app.fallthrough(true);

    CommonOptions opts;
    app.add_option("--seed", opts.seed, "PRNG seed; fully determines synthetic inputs");
    app.add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    app.add_option("--cache", opts.cache_specs, "cache config b:capacity (repeatable)");

    auto* sort_bench = app.add_subcommand("sort-bench", "benchmark our sort against the baseline");
    sort_bench->fallthrough(true);
    sort_bench->add_option("--sizes", opts.sizes, "key-value counts, in [2^10, 2^24]")
        ->delimiter(',');

    auto* render = app.add_subcommand("render", "render one frame with stage metrics");
    render->fallthrough(true);
    render->add_option("--scene", opts.scene, "scene file or synth:N")->capture_default_str();
    render->add_option("--camera", opts.camera, "camera file (default: built-in 256x256)");
    render->add_option("--background", opts.background, "black, white, or r,g,b")
        ->capture_default_str();
    render->add_flag("--no-layout", opts.no_layout, "disable the block-wise sorted layout");
    render->add_flag("--no-packing", opts.no_packing, "disable variable packing");
    render->add_flag("--no-fusion", opts.no_fusion, "disable 4-pixel work items");
    render->add_flag("--oracle", opts.oracle, "also render the reference and report the diff");
    render->add_flag("--trace", opts.trace, "dump the access trace CSV");

    auto* ablate = app.add_subcommand("ablate", "run the cumulative optimization ladder");
    ablate->fallthrough(true);
    ablate->add_option("--scene", opts.scene, "scene file or synth:N")->capture_default_str();
    ablate->add_option("--camera", opts.camera, "camera file");
    ablate->add_option("--background", opts.background, "black, white, or r,g,b")
        ->capture_default_str();

    auto* fit = app.add_subcommand("fit-cost-model", "fit the stride-latency regression");
    fit->fallthrough(true);

    auto* report = app.add_subcommand("cache-report", "per-config hit/miss table for the sorts");
    report->fallthrough(true);
    report->add_option("--sizes", opts.sizes, "key-value counts")->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(sort_bench)) {
            return cmd_sort_bench(opts);
        }
        if (app.got_subcommand(render)) {
            return cmd_render(opts);
        }
        if (app.got_subcommand(ablate)) {
            return cmd_ablate(opts);
        }
        if (app.got_subcommand(fit)) {
            return cmd_fit_cost_model(opts);
        }
        if (app.got_subcommand(report)) {
            return cmd_cache_report(opts);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
