#include "evlie/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "evlie/errors.hpp"
#include "evlie/kernels.hpp"
#include "evlie/metrics.hpp"
#include "evlie/ops.hpp"
#include "evlie/tns.hpp"

namespace evlie {

namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration ----------------------------------------------------------

void PipelineConfig::validate() const {
    if (channels < 1) throw ArgumentError("config: channels must be positive");
    if (blocks < 1) throw ArgumentError("config: blocks must be positive");
    if (bins < 1) throw ArgumentError("config: bins must be positive");
    if (taps < 1 || taps % 2 == 0) {
        throw ArgumentError("config: taps must be odd and positive, got " +
                            std::to_string(taps));
    }
    if (!std::isfinite(r_max) || r_max < 0.0) {
        throw ArgumentError("config: r_max must be finite and non-negative");
    }
    if (!std::isfinite(voxel_scale)) {
        throw ArgumentError("config: voxel_scale must be finite");
    }
    if (!std::isfinite(lr) || lr < 0.0) {
        throw ArgumentError("config: lr must be finite and non-negative");
    }
    if (iters < 0) throw ArgumentError("config: iters must be non-negative");
    guidance_mode();
    filter_mode();
    injection_mode();
}

GuidanceMode PipelineConfig::guidance_mode() const {
    if (guidance == "none") return GuidanceMode::kNone;
    if (guidance == "event-only") return GuidanceMode::kEventOnly;
    if (guidance == "illum-only") return GuidanceMode::kIllumOnly;
    if (guidance == "both") return GuidanceMode::kBoth;
    throw ArgumentError("config: unknown guidance mode \"" + guidance + "\"");
}

InjectMode PipelineConfig::injection_mode() const {
    if (injection == "none") return InjectMode::kNone;
    if (injection == "gating") return InjectMode::kGating;
    if (injection == "cross-attn") return InjectMode::kCrossAttn;
    if (injection == "reuse") return InjectMode::kReuse;
    throw ArgumentError("config: unknown injection mode \"" + injection + "\"");
}

FilterMode PipelineConfig::filter_mode() const {
    if (filter == "none") return FilterMode::kNone;
    if (filter == "conv") return FilterMode::kConv;
    if (filter == "transformer") return FilterMode::kTransformer;
    if (filter == "iaef") return FilterMode::kIaef;
    throw ArgumentError("config: unknown filter mode \"" + filter + "\"");
}

PipelineConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) {
        throw ArgumentError("config: top level must be a JSON object");
    }
    PipelineConfig cfg;
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "channels") cfg.channels = val.get<int>();
            else if (key == "blocks") cfg.blocks = val.get<int>();
            else if (key == "bins") cfg.bins = val.get<int>();
            else if (key == "taps") cfg.taps = val.get<int>();
            else if (key == "r_max") cfg.r_max = val.get<double>();
            else if (key == "voxel_scale") cfg.voxel_scale = val.get<double>();
            else if (key == "guidance") cfg.guidance = val.get<std::string>();
            else if (key == "filter") cfg.filter = val.get<std::string>();
            else if (key == "injection") cfg.injection = val.get<std::string>();
            else if (key == "seed") cfg.seed = val.get<uint64_t>();
            else if (key == "lr") cfg.lr = val.get<double>();
            else if (key == "iters") cfg.iters = val.get<int>();
            else throw ArgumentError("config: unknown key \"" + key + "\"");
        }
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string config_json(const PipelineConfig& cfg) {
    json j;
    j["channels"] = cfg.channels;
    j["blocks"] = cfg.blocks;
    j["bins"] = cfg.bins;
    j["taps"] = cfg.taps;
    j["r_max"] = cfg.r_max;
    j["voxel_scale"] = cfg.voxel_scale;
    j["guidance"] = cfg.guidance;
    j["filter"] = cfg.filter;
    j["injection"] = cfg.injection;
    j["seed"] = cfg.seed;
    j["lr"] = cfg.lr;
    j["iters"] = cfg.iters;
    return j.dump(2) + "\n";
}

// --- parameter construction -------------------------------------------------

namespace {

// Registers every tensor it creates under a stable dotted name, in
// creation order, so checkpoints and the optimizer see an identical
// layout for any mode combination.
struct ParamBuilder {
    std::mt19937_64 rng;
    std::vector<std::pair<std::string, Tensor>>& named;

    Tensor reg(const std::string& name, Tensor t) {
        named.emplace_back(name, t);
        return t;
    }

    Tensor uniform(const std::string& name, std::vector<int64_t> shape,
                   int64_t fan_in) {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> v(static_cast<size_t>(n));
        for (auto& x : v) x = dist(rng);
        return reg(name, make_tensor(std::move(shape), std::move(v), true));
    }

    Tensor constant(const std::string& name, std::vector<int64_t> shape,
                    double v) {
        return reg(name, full(std::move(shape), v, true));
    }

    Tensor zero(const std::string& name, std::vector<int64_t> shape) {
        return constant(name, std::move(shape), 0.0);
    }

    // Output projections start at zero so every residual path begins as
    // the identity and training cannot blow up on step one.
    HeadParams head(const std::string& base, int64_t cin, int64_t cout,
                    bool zero_pw, double pw_bias) {
        HeadParams h;
        h.dw_k = uniform(base + ".dw_k", {cin, 3, 3}, 9);
        h.dw_b = zero(base + ".dw_b", {cin});
        h.pw_w = zero_pw ? zero(base + ".pw_w", {cout, cin})
                         : uniform(base + ".pw_w", {cout, cin}, cin);
        h.pw_b = constant(base + ".pw_b", {cout}, pw_bias);
        return h;
    }

    GatherParams gather(const std::string& base, int64_t c) {
        GatherParams g;
        g.wq = uniform(base + ".wq", {c, c}, c);
        g.wk = uniform(base + ".wk", {c, c}, c);
        g.wv = uniform(base + ".wv", {c, c}, c);
        g.wo = zero(base + ".wo", {c, c});
        g.log_tau = zero(base + ".log_tau", {1});
        return g;
    }

    LatentParams latent(const std::string& base, int64_t c) {
        LatentParams l;
        l.attn = gather(base + ".attn", c);
        l.ln1_g = constant(base + ".ln1_g", {c}, 1.0);
        l.ln1_b = zero(base + ".ln1_b", {c});
        l.ln2_g = constant(base + ".ln2_g", {c}, 1.0);
        l.ln2_b = zero(base + ".ln2_b", {c});
        l.ffn_w1 = uniform(base + ".ffn_w1", {c, 2 * c}, c);
        l.ffn_b1 = zero(base + ".ffn_b1", {2 * c});
        l.ffn_w2 = zero(base + ".ffn_w2", {2 * c, c});
        l.ffn_b2 = zero(base + ".ffn_b2", {c});
        return l;
    }

    EiciParams eici(const std::string& base, int64_t c) {
        EiciParams e;
        e.gather_e = gather(base + ".ge", c);
        e.gather_l = gather(base + ".gl", c);
        e.latent = latent(base + ".latent", c);
        e.inject_e.wv = uniform(base + ".ie.wv", {c, c}, c);
        e.inject_e.wo = zero(base + ".ie.wo", {c, c});
        e.inject_l.wv = uniform(base + ".il.wv", {c, c}, c);
        e.inject_l.wo = zero(base + ".il.wo", {c, c});
        e.gate_e = zero(base + ".gate_e", {c});
        e.gate_l = zero(base + ".gate_l", {c});
        e.xattn_e = gather(base + ".xe", c);
        e.xattn_l = gather(base + ".xl", c);
        return e;
    }
};

// Depthwise delta kernel: filtering with it is the identity.
std::vector<double> delta_kernel(int64_t c) {
    std::vector<double> v(static_cast<size_t>(c) * 9, 0.0);
    for (int64_t i = 0; i < c; ++i) v[static_cast<size_t>(i) * 9 + 4] = 1.0;
    return v;
}

} // namespace

PipelineParams init_params(const PipelineConfig& cfg) {
    cfg.validate();
    const int64_t c = cfg.channels;
    const int64_t n = cfg.taps;
    PipelineParams p;
    ParamBuilder b{std::mt19937_64(cfg.seed), p.named};

    p.stem_img.l1 = b.head("stem_img.l1", 3, c, false, 0.0);
    p.stem_img.l2 = b.head("stem_img.l2", c, c, false, 0.0);
    p.stem_vox.l1 = b.head("stem_vox.l1", cfg.bins, c, false, 0.0);
    p.stem_vox.l2 = b.head("stem_vox.l2", c, c, false, 0.0);
    p.stem_pri.l1 = b.head("stem_pri.l1", 1, c, false, 0.0);
    p.stem_pri.l2 = b.head("stem_pri.l2", c, c, false, 0.0);

    p.blocks.resize(static_cast<size_t>(cfg.blocks));
    for (int i = 0; i < cfg.blocks; ++i) {
        const std::string base = "block" + std::to_string(i);
        BlockParams& blk = p.blocks[static_cast<size_t>(i)];
        blk.iaef.taps = cfg.taps;
        blk.iaef.r_max = cfg.r_max;
        // Kernel heads start all-zero: softmax gives uniform taps, the
        // weight bias puts sigmoid near 1 and offsets start at 0, so the
        // filter begins as a mild box blur instead of noise.
        blk.iaef.kv_head = b.head(base + ".iaef.kv", c, n, true, 0.0);
        blk.iaef.kh_head = b.head(base + ".iaef.kh", c, n, true, 0.0);
        blk.iaef.w_head = b.head(base + ".iaef.w", c, n * n, true, 3.0);
        blk.iaef.px_head = b.head(base + ".iaef.px", c, n * n, true, 0.0);
        blk.iaef.py_head = b.head(base + ".iaef.py", c, n * n, true, 0.0);
        blk.conv_k = b.reg(base + ".conv.k",
                           make_tensor({c, 3, 3}, delta_kernel(c), true));
        blk.conv_b = b.zero(base + ".conv.b", {c});
        blk.filter_tr = b.latent(base + ".tr", c);
        blk.eici = b.eici(base + ".eici", c);
    }

    p.recon_w = b.zero("recon.w", {3, c});
    p.recon_b = b.zero("recon.b", {3});
    return p;
}

// --- checkpoints ------------------------------------------------------------

namespace {

std::string tensor_file_name(const std::string& param_name) {
    std::string s = param_name;
    std::replace(s.begin(), s.end(), '.', '_');
    return s + ".tns1";
}

} // namespace

void save_checkpoint(const std::string& dir, const PipelineConfig& cfg,
                     const PipelineParams& params) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ArgumentError("checkpoint: cannot create directory " + dir +
                            ": " + ec.message());
    }
    json manifest;
    manifest["format"] = "ckpt1";
    manifest["config"] = json::parse(config_json(cfg));
    json tensors = json::object();
    for (const auto& [name, t] : params.named) {
        const std::string fname = tensor_file_name(name);
        save_tns(dir + "/" + fname, t);
        tensors[name] = fname;
    }
    manifest["tensors"] = std::move(tensors);
    std::ofstream out(dir + "/manifest.json", std::ios::binary);
    if (!out) throw ArgumentError("checkpoint: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
    if (!out.flush()) {
        throw ArgumentError("checkpoint: failed writing manifest in " + dir);
    }
}

PipelineParams load_checkpoint(const std::string& dir, PipelineConfig& cfg) {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) {
        throw ArgumentError("checkpoint: cannot open " + dir +
                            "/manifest.json");
    }
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw FormatError("checkpoint: bad manifest: " + std::string(e.what()));
    }
    if (!manifest.is_object() || manifest.value("format", "") != "ckpt1") {
        throw FormatError("checkpoint: manifest is not ckpt1");
    }
    if (!manifest.contains("config") || !manifest.contains("tensors") ||
        !manifest["tensors"].is_object()) {
        throw FormatError("checkpoint: manifest lacks config or tensors");
    }
    cfg = parse_config(manifest["config"].dump());
    PipelineParams params = init_params(cfg);
    const json& tensors = manifest["tensors"];
    if (tensors.size() != params.named.size()) {
        throw ValidationError(
            "checkpoint: manifest lists " + std::to_string(tensors.size()) +
            " tensors, config needs " + std::to_string(params.named.size()));
    }
    for (auto& [name, t] : params.named) {
        if (!tensors.contains(name)) {
            throw ValidationError("checkpoint: missing tensor \"" + name +
                                  "\"");
        }
        const std::string fname = tensors[name].get<std::string>();
        Tensor loaded = load_tns(dir + "/" + fname);
        if (loaded->shape != t->shape) {
            throw ValidationError("checkpoint: tensor \"" + name +
                                  "\" does not match the config dimensions");
        }
        t->value = std::move(loaded->value);
    }
    return params;
}

// --- tensor/image bridging --------------------------------------------------

namespace {

Tensor image_to_tensor(const Image& im) {
    const int64_t c = im.channels, h = im.height, w = im.width;
    std::vector<double> v(static_cast<size_t>(c) * h * w);
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                v[(static_cast<size_t>(ch) * h + y) * w + x] =
                    im.at(static_cast<int>(y), static_cast<int>(x),
                          static_cast<int>(ch));
            }
        }
    }
    return make_tensor({c, h, w}, std::move(v));
}

Image tensor_to_image(const Tensor& t) {
    const int64_t c = t->shape[0], h = t->shape[1], w = t->shape[2];
    Image im(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                const double v =
                    t->value[(static_cast<size_t>(ch) * h + y) * w + x];
                im.at(static_cast<int>(y), static_cast<int>(x),
                      static_cast<int>(ch)) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return im;
}

Tensor voxel_to_tensor(const EventVoxel& vox, double scale) {
    std::vector<double> v(vox.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = vox.data[i] * scale;
    return make_tensor({vox.bins, vox.height, vox.width}, std::move(v));
}

Tensor stem_layer(const Tensor& x, const HeadParams& head) {
    return ops::relu(conv_head(x, head));
}

Tensor run_stem(const Tensor& x, const StemParams& stem) {
    return stem_layer(stem_layer(x, stem.l1), stem.l2);
}

} // namespace

FeatureTriplet extract_features(const Tensor& img, const Tensor& vox,
                                const Tensor& pri,
                                const PipelineParams& params) {
    for (const Tensor* t : {&img, &vox, &pri}) {
        if (!*t || (*t)->shape.size() != 3) {
            throw ArgumentError("extract_features: inputs must be C x H x W");
        }
    }
    if (img->shape[1] != vox->shape[1] || img->shape[2] != vox->shape[2] ||
        img->shape[1] != pri->shape[1] || img->shape[2] != pri->shape[2]) {
        throw ArgumentError("extract_features: image, voxel and prior "
                            "geometries differ");
    }
    FeatureTriplet f;
    f.fi = run_stem(img, params.stem_img);
    f.fe = run_stem(vox, params.stem_vox);
    f.fl = run_stem(pri, params.stem_pri);
    return f;
}

Tensor forward_pipeline(const Tensor& img, const Tensor& vox,
                        const Tensor& pri, const PipelineConfig& cfg,
                        const PipelineParams& params,
                        std::vector<FilterFields>* fields_out) {
    if (static_cast<int>(params.blocks.size()) != cfg.blocks) {
        throw ArgumentError("forward_pipeline: parameter set has " +
                            std::to_string(params.blocks.size()) +
                            " blocks, config wants " +
                            std::to_string(cfg.blocks));
    }
    const GuidanceMode guidance = cfg.guidance_mode();
    const InjectMode injection = cfg.injection_mode();
    const FilterMode filter = cfg.filter_mode();

    FeatureTriplet f = extract_features(img, vox, pri, params);
    const int64_t h = img->shape[1], w = img->shape[2];

    for (const BlockParams& blk : params.blocks) {
        switch (filter) {
        case FilterMode::kNone:
            break;
        case FilterMode::kConv:
            f.fe = ops::conv2d_dw(f.fe, blk.conv_k, blk.conv_b);
            break;
        case FilterMode::kTransformer:
            f.fe = map_from_tokens(
                latent_fuse(tokens_from_map(f.fe), blk.filter_tr), h, w);
            break;
        case FilterMode::kIaef: {
            FilterFields fields = extract_filter_fields(f.fl, f.fe, blk.iaef);
            if (fields_out) fields_out->push_back(fields);
            f.fe = apply_iaef(f.fe, fields);
            break;
        }
        }
        EiciOut out = eici_block(tokens_from_map(f.fi), tokens_from_map(f.fl),
                                 tokens_from_map(f.fe), blk.eici, guidance,
                                 injection);
        f.fi = map_from_tokens(out.fi, h, w);
        f.fl = map_from_tokens(out.fl, h, w);
        f.fe = map_from_tokens(out.fe, h, w);
    }

    return ops::sigmoid(ops::conv2d_pw(f.fi, params.recon_w, params.recon_b));
}

// --- enhancement ------------------------------------------------------------

EnhancementResult enhance(const Image& low, const EventStream& events,
                          const PipelineConfig& cfg,
                          const PipelineParams& params, const Image* gt,
                          bool want_fields) {
    cfg.validate();
    if (low.channels != 3) {
        throw ArgumentError("enhance: image must have 3 channels, got " +
                            std::to_string(low.channels));
    }
    if (events.width != low.width || events.height != low.height) {
        throw ArgumentError(
            "enhance: event geometry " + std::to_string(events.width) + "x" +
            std::to_string(events.height) + " does not match image " +
            std::to_string(low.width) + "x" + std::to_string(low.height));
    }
    const auto t0 = std::chrono::steady_clock::now();
    const EventVoxel vox = voxelize_sbt(events, cfg.bins);
    const Image prior = illumination_prior(low);

    EnhancementResult res;
    std::vector<FilterFields> fields;
    Tensor out = forward_pipeline(image_to_tensor(low),
                                  voxel_to_tensor(vox, cfg.voxel_scale),
                                  image_to_tensor(prior), cfg, params,
                                  want_fields ? &fields : nullptr);
    res.output = tensor_to_image(out);
    res.fields = std::move(fields);
    const auto t1 = std::chrono::steady_clock::now();
    res.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (gt) {
        res.psnr_db = psnr(res.output, *gt);
        res.ssim_val = ssim(res.output, *gt);
        res.has_metrics = true;
    }
    return res;
}

// --- datasets ---------------------------------------------------------------

Dataset load_dataset(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) throw ArgumentError("dataset: cannot open " + dir +
                                 "/manifest.json");
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw FormatError("dataset: bad manifest: " + std::string(e.what()));
    }
    if (!manifest.is_object() || manifest.value("format", "") != "dataset1" ||
        !manifest.contains("items") || !manifest["items"].is_array()) {
        throw FormatError("dataset: manifest is not dataset1");
    }
    Dataset ds;
    for (const auto& item : manifest["items"]) {
        const std::string sub = item.at("dir").get<std::string>();
        Triplet t;
        t.low = read_ppm(dir + "/" + sub + "/low.ppm");
        t.gt = read_ppm(dir + "/" + sub + "/gt.ppm");
        t.events = load_events(dir + "/" + sub + "/events.evt1");
        ds.items.push_back(std::move(t));
    }
    return ds;
}

void make_dataset(const std::string& src_dir, int count,
                  const std::string& out_dir, uint64_t seed, double c,
                  double eps) {
    if (count < 0) throw ArgumentError("make-dataset: count must be >= 0");
    if (!(c > 0.0) || !std::isfinite(c)) {
        throw ArgumentError("make-dataset: contrast threshold must be > 0");
    }
    std::vector<std::string> sources;
    if (fs::is_directory(src_dir)) {
        for (const auto& entry : fs::directory_iterator(src_dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
                sources.push_back(entry.path().string());
            }
        }
    }
    std::sort(sources.begin(), sources.end());
    if (sources.empty()) {
        throw ArgumentError("make-dataset: no .ppm source images in " +
                            src_dir);
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw ArgumentError("make-dataset: cannot create " + out_dir + ": " +
                            ec.message());
    }

    constexpr uint64_t kT0 = 0;
    constexpr uint64_t kT1 = 50000;

    json items = json::array();
    for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(seed + static_cast<uint64_t>(i));
        std::uniform_real_distribution<double> gain_d(0.08, 0.25);
        std::uniform_real_distribution<double> gamma_d(1.2, 2.0);
        std::uniform_real_distribution<double> sigma_d(0.005, 0.02);
        std::uniform_real_distribution<double> rate_d(5.0, 25.0);
        const double gain = gain_d(rng);
        const double gamma = gamma_d(rng);
        const double sigma = sigma_d(rng);
        const double noise_rate = rate_d(rng);
        const uint64_t degrade_seed = rng();
        const uint64_t noise_seed = rng();

        const std::string& src_path = sources[static_cast<size_t>(i) %
                                              sources.size()];
        const Image src = read_ppm(src_path);

        char sub[32];
        std::snprintf(sub, sizeof sub, "triplet_%03d", i);
        const std::string tdir = out_dir + "/" + sub;
        fs::create_directories(tdir, ec);
        if (ec) {
            throw ArgumentError("make-dataset: cannot create " + tdir + ": " +
                                ec.message());
        }

        // Both frames go through PPM quantization before the simulator
        // so the stored events regenerate byte-exactly from the stored
        // images alone.
        write_ppm(src, tdir + "/gt.ppm");
        const Image gt_q = read_ppm(tdir + "/gt.ppm");
        const Image low = synthesize_lowlight(gt_q, gain, gamma, sigma,
                                              degrade_seed);
        write_ppm(low, tdir + "/low.ppm");
        const Image low_q = read_ppm(tdir + "/low.ppm");

        FrameSequence seq;
        seq.frames = {low_q, gt_q};
        seq.timestamps_us = {kT0, kT1};
        EventStream ev = simulate_events(seq, c, eps);
        ev = inject_noise(ev, noise_rate, kT0, kT1, noise_seed);
        save_events(ev, tdir + "/events.evt1");

        json item;
        item["dir"] = sub;
        item["source"] = fs::path(src_path).filename().string();
        item["gain"] = gain;
        item["gamma"] = gamma;
        item["sigma"] = sigma;
        item["degrade_seed"] = degrade_seed;
        item["c"] = c;
        item["eps"] = eps;
        item["t0"] = kT0;
        item["t1"] = kT1;
        item["noise_rate"] = noise_rate;
        item["noise_seed"] = noise_seed;
        items.push_back(std::move(item));
    }

    json manifest;
    manifest["format"] = "dataset1";
    manifest["count"] = count;
    manifest["seed"] = seed;
    manifest["c"] = c;
    manifest["eps"] = eps;
    manifest["items"] = std::move(items);
    std::ofstream out(out_dir + "/manifest.json", std::ios::binary);
    if (!out) {
        throw ArgumentError("make-dataset: cannot write manifest in " +
                            out_dir);
    }
    out << manifest.dump(2) << "\n";
    if (!out.flush()) {
        throw ArgumentError("make-dataset: failed writing manifest in " +
                            out_dir);
    }
}

void write_demo_sources(const std::string& dir, int count, int size,
                        uint64_t seed) {
    if (count < 0) throw ArgumentError("demo sources: count must be >= 0");
    if (size < 1) throw ArgumentError("demo sources: size must be positive");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ArgumentError("demo sources: cannot create " + dir + ": " +
                            ec.message());
    }
    for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(seed + static_cast<uint64_t>(i));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        Image im(size, size, 3);

        // Well-lit base with gentle per-channel gradients.
        double base[3], gx[3], gy[3];
        for (int ch = 0; ch < 3; ++ch) {
            base[ch] = 0.55 + 0.25 * u01(rng);
            gx[ch] = (2.0 * u01(rng) - 1.0) * 0.12;
            gy[ch] = (2.0 * u01(rng) - 1.0) * 0.12;
        }
        const double denom = size > 1 ? size - 1.0 : 1.0;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                for (int ch = 0; ch < 3; ++ch) {
                    im.at(y, x, ch) = base[ch] +
                                      gx[ch] * (2.0 * x / denom - 1.0) +
                                      gy[ch] * (2.0 * y / denom - 1.0);
                }
            }
        }

        // Two rectangles and a disk give the simulator real edges.
        for (int r = 0; r < 2; ++r) {
            const int x0 = static_cast<int>(u01(rng) * size * 0.7);
            const int y0 = static_cast<int>(u01(rng) * size * 0.7);
            const int rw = 2 + static_cast<int>(u01(rng) * size * 0.3);
            const int rh = 2 + static_cast<int>(u01(rng) * size * 0.3);
            double delta[3];
            for (int ch = 0; ch < 3; ++ch) {
                delta[ch] = (2.0 * u01(rng) - 1.0) * 0.18;
            }
            for (int y = y0; y < std::min(size, y0 + rh); ++y) {
                for (int x = x0; x < std::min(size, x0 + rw); ++x) {
                    for (int ch = 0; ch < 3; ++ch) im.at(y, x, ch) += delta[ch];
                }
            }
        }
        const double cx = u01(rng) * size;
        const double cy = u01(rng) * size;
        const double rad = size * (0.1 + 0.15 * u01(rng));
        double delta[3];
        for (int ch = 0; ch < 3; ++ch) delta[ch] = (2.0 * u01(rng) - 1.0) * 0.18;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= rad * rad) {
                    for (int ch = 0; ch < 3; ++ch) im.at(y, x, ch) += delta[ch];
                }
            }
        }

        for (auto& v : im.data) v = std::clamp(v, 0.03, 0.99);
        char name[32];
        std::snprintf(name, sizeof name, "src_%03d.ppm", i);
        write_ppm(im, dir + "/" + name);
    }
}

// --- toy training -----------------------------------------------------------

TrainResult train_toy(const std::string& data_dir, const PipelineConfig& cfg,
                      const std::string& ckpt_dir) {
    cfg.validate();
    Dataset ds = load_dataset(data_dir);
    if (ds.items.empty()) {
        throw ArgumentError("train: dataset at " + data_dir + " is empty");
    }

    kernels::SerialGuard serial;
    PipelineParams params = init_params(cfg);

    struct Sample {
        Tensor img, vox, pri, gt;
    };
    std::vector<Sample> samples;
    samples.reserve(ds.items.size());
    for (size_t i = 0; i < ds.items.size(); ++i) {
        const Triplet& t = ds.items[i];
        if (t.low.channels != 3 || !t.low.same_geometry(t.gt)) {
            throw ValidationError("train: triplet " + std::to_string(i) +
                                  " has mismatched low/gt geometry");
        }
        if (t.events.width != t.low.width ||
            t.events.height != t.low.height) {
            throw ValidationError("train: triplet " + std::to_string(i) +
                                  " has event geometry differing from images");
        }
        const EventVoxel vox = voxelize_sbt(t.events, cfg.bins);
        samples.push_back({image_to_tensor(t.low),
                           voxel_to_tensor(vox, cfg.voxel_scale),
                           image_to_tensor(illumination_prior(t.low)),
                           image_to_tensor(t.gt)});
    }

    TrainResult res;
    res.losses.reserve(static_cast<size_t>(cfg.iters));
    for (int it = 1; it <= cfg.iters; ++it) {
        const Sample& s = samples[static_cast<size_t>(it - 1) %
                                  samples.size()];
        Tensor out = forward_pipeline(s.img, s.vox, s.pri, cfg, params);
        Tensor loss = ops::scale(
            ops::reduce_sum_all(ops::abs(ops::sub(out, s.gt))),
            1.0 / static_cast<double>(out->numel()));
        const double lv = loss->value[0];
        if (!std::isfinite(lv)) {
            throw NumericError("train: non-finite loss at iteration " +
                               std::to_string(it));
        }
        backward(loss);
        for (auto& [name, par] : params.named) {
            // Parameters of modes the config never exercises stay out of
            // the graph and carry no gradient buffer.
            if (par->grad.size() != par->value.size()) continue;
            for (size_t k = 0; k < par->value.size(); ++k) {
                par->value[k] -= cfg.lr * par->grad[k];
            }
        }
        res.losses.push_back(lv);
    }

    save_checkpoint(ckpt_dir, cfg, params);
    std::ofstream csv(ckpt_dir + "/loss.csv", std::ios::binary);
    if (!csv) throw ArgumentError("train: cannot write loss.csv in " +
                                  ckpt_dir);
    csv << "iter,loss\n";
    csv.precision(17);
    for (size_t i = 0; i < res.losses.size(); ++i) {
        csv << (i + 1) << "," << res.losses[i] << "\n";
    }
    if (!csv.flush()) {
        throw ArgumentError("train: failed writing loss.csv in " + ckpt_dir);
    }
    return res;
}

} // namespace evlie
