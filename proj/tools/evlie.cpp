#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evlie/eici.hpp"
#include "evlie/errors.hpp"
#include "evlie/events.hpp"
#include "evlie/gradcheck.hpp"
#include "evlie/iaef.hpp"
#include "evlie/image.hpp"
#include "evlie/metrics.hpp"
#include "evlie/ops.hpp"
#include "evlie/pipeline.hpp"
#include "evlie/tns.hpp"
#include "evlie/voxel.hpp"

namespace fs = std::filesystem;
using namespace evlie;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return text;
}

std::vector<std::string> list_ppm_sorted(const std::string& dir) {
    std::vector<std::string> paths;
    if (fs::is_directory(dir)) {
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
                paths.push_back(entry.path().string());
            }
        }
    }
    std::sort(paths.begin(), paths.end());
    return paths;
}

void cmd_simulate(const std::string& in_dir, double c, double eps,
                  uint64_t dt, const std::string& out) {
    if (dt < 1) throw ArgumentError("simulate: --dt must be >= 1");
    const auto paths = list_ppm_sorted(in_dir);
    if (paths.empty()) {
        throw ArgumentError("simulate: no .ppm frames in " + in_dir);
    }
    FrameSequence seq;
    uint64_t t = 0;
    for (const auto& p : paths) {
        seq.frames.push_back(read_ppm(p));
        seq.timestamps_us.push_back(t);
        t += dt;
    }
    EventStream ev = simulate_events(seq, c, eps);
    save_events(ev, out);
    std::cout << "simulate: " << paths.size() << " frames -> " << ev.count()
              << " events (" << ev.width << "x" << ev.height << ") -> " << out
              << "\n";
}

void cmd_voxelize(const std::string& events_path, int bins, uint16_t width,
                  uint16_t height, const std::string& out) {
    EventStream ev = load_events(events_path, width, height);
    EventVoxel vox = voxelize_sbt(ev, bins);
    Tensor t = make_tensor({vox.bins, vox.height, vox.width}, vox.data);
    save_tns(out, t);
    std::cout << "voxelize: " << ev.count() << " events -> " << vox.bins
              << "x" << vox.height << "x" << vox.width << " -> " << out
              << "\n";
}

void cmd_make_dataset(const std::string& src, int count, uint64_t seed,
                      const std::string& out, double c, double eps,
                      int demo_sources, int demo_size) {
    if (demo_sources > 0) {
        write_demo_sources(src, demo_sources, demo_size, seed);
        std::cout << "make-dataset: wrote " << demo_sources
                  << " procedural sources to " << src << "\n";
    }
    make_dataset(src, count, out, seed, c, eps);
    std::cout << "make-dataset: wrote " << count << " triplets to " << out
              << "\n";
}

void cmd_train(const std::string& data, const std::string& config_path,
               const std::string& out) {
    PipelineConfig cfg = parse_config(read_text_file(config_path));
    TrainResult res = train_toy(data, cfg, out);
    std::cout << "train: " << res.losses.size() << " iterations";
    if (!res.losses.empty()) {
        std::cout << ", loss " << res.losses.front() << " -> "
                  << res.losses.back();
    }
    std::cout << ", checkpoint in " << out << "\n";
}

void cmd_enhance(const std::string& image_path, const std::string& events_path,
                 const std::string& ckpt, const std::string& out,
                 const std::string& dump_dir, const std::string& gt_path) {
    const Image low = read_ppm(image_path);
    const EventStream ev =
        load_events(events_path, static_cast<uint16_t>(low.width),
                    static_cast<uint16_t>(low.height));
    PipelineConfig cfg;
    PipelineParams params = load_checkpoint(ckpt, cfg);
    Image gt;
    const bool has_gt = !gt_path.empty();
    if (has_gt) gt = read_ppm(gt_path);

    EnhancementResult res = enhance(low, ev, cfg, params,
                                    has_gt ? &gt : nullptr, !dump_dir.empty());
    write_ppm(res.output, out);
    std::cout << "enhance: " << low.width << "x" << low.height << " in "
              << std::fixed << std::setprecision(1) << res.ms << " ms -> "
              << out << "\n";
    std::cout.unsetf(std::ios::fixed);
    if (res.has_metrics) {
        std::cout << std::setprecision(10) << "psnr_db=" << res.psnr_db
                  << "\nssim=" << res.ssim_val << "\n";
    }
    if (!dump_dir.empty()) {
        if (res.fields.empty()) {
            std::cout << "enhance: filter mode \"" << cfg.filter
                      << "\" produces no filter fields\n";
        } else {
            std::error_code ec;
            fs::create_directories(dump_dir, ec);
            if (ec) {
                throw ArgumentError("enhance: cannot create " + dump_dir +
                                    ": " + ec.message());
            }
            for (size_t i = 0; i < res.fields.size(); ++i) {
                const std::string base =
                    dump_dir + "/block" + std::to_string(i) + "_";
                save_tns(base + "kv.tns1", res.fields[i].kv);
                save_tns(base + "kh.tns1", res.fields[i].kh);
                save_tns(base + "w.tns1", res.fields[i].w);
                save_tns(base + "px.tns1", res.fields[i].px);
                save_tns(base + "py.tns1", res.fields[i].py);
            }
            std::cout << "enhance: dumped filter fields for "
                      << res.fields.size() << " blocks to " << dump_dir
                      << "\n";
        }
    }
}

void cmd_metrics(const std::string& a_path, const std::string& b_path) {
    const Image a = read_ppm(a_path);
    const Image b = read_ppm(b_path);
    std::cout << std::setprecision(10) << "psnr_db=" << psnr(a, b)
              << "\nssim=" << ssim(a, b) << "\n";
}

// --- built-in gradient checks ----------------------------------------------

Tensor rnd(std::mt19937_64& rng, std::vector<int64_t> shape, double scale,
           bool grad = true) {
    std::uniform_real_distribution<double> d(-scale, scale);
    int64_t n = 1;
    for (int64_t s : shape) n *= s;
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = d(rng);
    return make_tensor(std::move(shape), std::move(v), grad);
}

GatherParams rnd_gather(std::mt19937_64& rng, int64_t c) {
    GatherParams g;
    g.wq = rnd(rng, {c, c}, 0.5);
    g.wk = rnd(rng, {c, c}, 0.5);
    g.wv = rnd(rng, {c, c}, 0.5);
    g.wo = rnd(rng, {c, c}, 0.5);
    g.log_tau = rnd(rng, {1}, 0.3);
    return g;
}

HeadParams rnd_head(std::mt19937_64& rng, int64_t cin, int64_t cout) {
    HeadParams h;
    h.dw_k = rnd(rng, {cin, 3, 3}, 0.5);
    h.dw_b = rnd(rng, {cin}, 0.2);
    h.pw_w = rnd(rng, {cout, cin}, 0.5);
    h.pw_b = rnd(rng, {cout}, 0.2);
    return h;
}

void append_gather(std::vector<Tensor>& leaves, const GatherParams& g) {
    leaves.insert(leaves.end(), {g.wq, g.wk, g.wv, g.wo, g.log_tau});
}

void append_head(std::vector<Tensor>& leaves, const HeadParams& h) {
    leaves.insert(leaves.end(), {h.dw_k, h.dw_b, h.pw_w, h.pw_b});
}

GradCheckReport check_eici() {
    std::mt19937_64 rng(42);
    const int64_t c = 3, n = 4;
    EiciParams p;
    p.gather_e = rnd_gather(rng, c);
    p.gather_l = rnd_gather(rng, c);
    p.latent.attn = rnd_gather(rng, c);
    p.latent.ln1_g = rnd(rng, {c}, 0.2);
    for (auto& v : p.latent.ln1_g->value) v += 1.0;
    p.latent.ln1_b = rnd(rng, {c}, 0.2);
    p.latent.ln2_g = rnd(rng, {c}, 0.2);
    for (auto& v : p.latent.ln2_g->value) v += 1.0;
    p.latent.ln2_b = rnd(rng, {c}, 0.2);
    p.latent.ffn_w1 = rnd(rng, {c, 2 * c}, 0.5);
    p.latent.ffn_b1 = rnd(rng, {2 * c}, 0.2);
    p.latent.ffn_w2 = rnd(rng, {2 * c, c}, 0.5);
    p.latent.ffn_b2 = rnd(rng, {c}, 0.2);
    p.inject_e.wv = rnd(rng, {c, c}, 0.5);
    p.inject_e.wo = rnd(rng, {c, c}, 0.5);
    p.inject_l.wv = rnd(rng, {c, c}, 0.5);
    p.inject_l.wo = rnd(rng, {c, c}, 0.5);
    p.gate_e = rnd(rng, {c}, 0.5);
    p.gate_l = rnd(rng, {c}, 0.5);
    p.xattn_e = rnd_gather(rng, c);
    p.xattn_l = rnd_gather(rng, c);

    Tensor fi = rnd(rng, {n, c}, 0.8);
    Tensor fl = rnd(rng, {n, c}, 0.8);
    Tensor fe = rnd(rng, {n, c}, 0.8);
    Tensor probe_i = rnd(rng, {n, c}, 1.0, false);
    Tensor probe_l = rnd(rng, {n, c}, 1.0, false);
    Tensor probe_e = rnd(rng, {n, c}, 1.0, false);

    auto f = [&](const std::vector<Tensor>&) {
        EiciOut out = eici_block(fi, fl, fe, p, GuidanceMode::kBoth,
                                 InjectMode::kReuse);
        return ops::add(
            ops::add(ops::reduce_sum_all(ops::mul(out.fi, probe_i)),
                     ops::reduce_sum_all(ops::mul(out.fl, probe_l))),
            ops::reduce_sum_all(ops::mul(out.fe, probe_e)));
    };
    std::vector<Tensor> leaves{fi, fl, fe};
    append_gather(leaves, p.gather_e);
    append_gather(leaves, p.gather_l);
    append_gather(leaves, p.latent.attn);
    leaves.insert(leaves.end(),
                  {p.latent.ln1_g, p.latent.ln1_b, p.latent.ln2_g,
                   p.latent.ln2_b, p.latent.ffn_w1, p.latent.ffn_b1,
                   p.latent.ffn_w2, p.latent.ffn_b2, p.inject_e.wv,
                   p.inject_e.wo, p.inject_l.wv, p.inject_l.wo});
    return grad_check(f, leaves);
}

GradCheckReport check_iaef() {
    std::mt19937_64 rng(43);
    const int64_t c = 2, h = 6, w = 6;
    IaefParams p;
    p.taps = 3;
    p.r_max = 1.5;
    p.kv_head = rnd_head(rng, c, p.taps);
    p.kh_head = rnd_head(rng, c, p.taps);
    p.w_head = rnd_head(rng, c, p.taps * p.taps);
    p.px_head = rnd_head(rng, c, p.taps * p.taps);
    p.py_head = rnd_head(rng, c, p.taps * p.taps);

    Tensor fe = rnd(rng, {c, h, w}, 0.8);
    Tensor fl = rnd(rng, {c, h, w}, 0.8);
    Tensor probe = rnd(rng, {c, h, w}, 1.0, false);

    auto f = [&](const std::vector<Tensor>&) {
        return ops::reduce_sum_all(ops::mul(iaef_filter(fe, fl, p), probe));
    };
    std::vector<Tensor> leaves{fe, fl};
    append_head(leaves, p.kv_head);
    append_head(leaves, p.kh_head);
    append_head(leaves, p.w_head);
    append_head(leaves, p.px_head);
    append_head(leaves, p.py_head);
    return grad_check(f, leaves);
}

void cmd_gradcheck(const std::string& module) {
    if (module != "eici" && module != "iaef" && module != "all") {
        throw ArgumentError("gradcheck: --module must be eici, iaef or all");
    }
    bool all_ok = true;
    std::string worst;
    auto report = [&](const std::string& name, const GradCheckReport& r) {
        std::cout << "gradcheck " << name << ": " << r.checked
                  << " partials, max rel err " << std::scientific
                  << std::setprecision(2) << r.max_rel_err << ", mean "
                  << r.mean_rel_err << (r.ok ? " [ok]" : " [FAIL]") << "\n";
        std::cout.unsetf(std::ios::scientific);
        if (!r.ok && worst.empty()) worst = name;
        all_ok = all_ok && r.ok;
    };
    if (module == "eici" || module == "all") report("eici", check_eici());
    if (module == "iaef" || module == "all") report("iaef", check_iaef());
    if (!all_ok) {
        throw NumericError("gradcheck: gradients disagree with finite "
                           "differences in module " + worst);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-illumination collaborative low-light enhancement "
                 "toolkit"};
    app.require_subcommand(1);

    std::string sim_in, sim_out;
    double sim_c = 0.2, sim_eps = 1e-3;
    uint64_t sim_dt = 40000;
    auto* sim = app.add_subcommand("simulate",
                                   "synthesize events from a frame directory");
    sim->add_option("--in", sim_in, "directory of .ppm frames")->required();
    sim->add_option("--c", sim_c, "contrast threshold (log intensity)");
    sim->add_option("--eps", sim_eps, "log-intensity floor");
    sim->add_option("--dt", sim_dt, "microseconds between frames");
    sim->add_option("--out", sim_out, "output .evt1 or .csv path")->required();
    sim->callback([&] { cmd_simulate(sim_in, sim_c, sim_eps, sim_dt, sim_out); });

    std::string vox_events, vox_out;
    int vox_bins = 4;
    uint16_t vox_w = 0, vox_h = 0;
    auto* vox = app.add_subcommand("voxelize",
                                   "accumulate events into a time-bin grid");
    vox->add_option("--events", vox_events, "input .evt1 or .csv path")
        ->required();
    vox->add_option("--bins", vox_bins, "number of time bins");
    vox->add_option("--width", vox_w, "sensor width (CSV input only)");
    vox->add_option("--height", vox_h, "sensor height (CSV input only)");
    vox->add_option("--out", vox_out, "output .tns1 path")->required();
    vox->callback(
        [&] { cmd_voxelize(vox_events, vox_bins, vox_w, vox_h, vox_out); });

    std::string mk_src, mk_out;
    int mk_count = 64, mk_demo = 0, mk_size = 32;
    uint64_t mk_seed = 7;
    double mk_c = 0.2, mk_eps = 1e-3;
    auto* mk = app.add_subcommand("make-dataset",
                                  "synthesize (low, events, gt) triplets");
    mk->add_option("--src", mk_src, "directory of source .ppm images")
        ->required();
    mk->add_option("--count", mk_count, "number of triplets");
    mk->add_option("--seed", mk_seed, "generation seed");
    mk->add_option("--c", mk_c, "contrast threshold for event synthesis");
    mk->add_option("--eps", mk_eps, "log-intensity floor");
    mk->add_option("--demo-sources", mk_demo,
                   "write this many procedural sources into --src first");
    mk->add_option("--size", mk_size, "side length of procedural sources");
    mk->add_option("--out", mk_out, "output dataset directory")->required();
    mk->callback([&] {
        cmd_make_dataset(mk_src, mk_count, mk_seed, mk_out, mk_c, mk_eps,
                         mk_demo, mk_size);
    });

    std::string tr_data, tr_config, tr_out;
    auto* tr = app.add_subcommand("train", "toy gradient-descent training");
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--config", tr_config, "pipeline JSON config")->required();
    tr->add_option("--out", tr_out, "checkpoint output directory")->required();
    tr->callback([&] { cmd_train(tr_data, tr_config, tr_out); });

    std::string en_image, en_events, en_ckpt, en_out, en_dump, en_gt;
    auto* en = app.add_subcommand("enhance", "enhance one low-light image");
    en->add_option("--image", en_image, "low-light .ppm input")->required();
    en->add_option("--events", en_events, "event stream for the exposure")
        ->required();
    en->add_option("--ckpt", en_ckpt, "checkpoint directory")->required();
    en->add_option("--out", en_out, "enhanced .ppm output")->required();
    en->add_option("--dump-fields", en_dump,
                   "directory for per-block filter field tensors");
    en->add_option("--gt", en_gt, "ground truth .ppm, prints PSNR/SSIM");
    en->callback([&] {
        cmd_enhance(en_image, en_events, en_ckpt, en_out, en_dump, en_gt);
    });

    std::string m_a, m_b;
    auto* me = app.add_subcommand("metrics", "PSNR/SSIM between two images");
    me->add_option("--a", m_a, "first .ppm image")->required();
    me->add_option("--b", m_b, "second .ppm image")->required();
    me->callback([&] { cmd_metrics(m_a, m_b); });

    std::string gc_module = "all";
    auto* gc = app.add_subcommand("gradcheck",
                                  "finite-difference gradient verification");
    gc->add_option("--module", gc_module, "eici, iaef or all");
    gc->callback([&] { cmd_gradcheck(gc_module); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
