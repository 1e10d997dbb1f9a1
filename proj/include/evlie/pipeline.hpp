#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evlie/eici.hpp"
#include "evlie/events.hpp"
#include "evlie/iaef.hpp"
#include "evlie/image.hpp"
#include "evlie/tensor.hpp"
#include "evlie/voxel.hpp"

namespace evlie {

enum class FilterMode { kNone, kConv, kTransformer, kIaef };

struct PipelineConfig {
    int channels = 16;
    int blocks = 2;
    int bins = 4;
    int taps = 5;
    double r_max = 4.0;
    double voxel_scale = 0.1;        // affine scale on raw polarity sums
    std::string guidance = "both";   // none | event-only | illum-only | both
    std::string filter = "iaef";     // none | conv | transformer | iaef
    std::string injection = "reuse"; // none | gating | cross-attn | reuse
    uint64_t seed = 1;
    double lr = 0.01;
    int iters = 200;

    void validate() const;
    GuidanceMode guidance_mode() const;
    InjectMode injection_mode() const;
    FilterMode filter_mode() const;
};

// Strict JSON round-trip of the config: unknown keys are rejected.
PipelineConfig parse_config(const std::string& json_text);
std::string config_json(const PipelineConfig& cfg);

// Feature stem: two depthwise-separable 3x3 layers, relu after each.
struct StemParams {
    HeadParams l1, l2;
};

struct BlockParams {
    IaefParams iaef;       // filter "iaef"
    Tensor conv_k, conv_b; // filter "conv": depthwise 3x3
    LatentParams filter_tr; // filter "transformer"
    EiciParams eici;
};

// Every mode's parameters exist regardless of the configured modes, so
// one checkpoint serves all ablation cases of equal geometry.
struct PipelineParams {
    StemParams stem_img, stem_vox, stem_pri;
    std::vector<BlockParams> blocks;
    Tensor recon_w, recon_b; // 3 x C, 3
    std::vector<std::pair<std::string, Tensor>> named;
};

PipelineParams init_params(const PipelineConfig& cfg);

void save_checkpoint(const std::string& dir, const PipelineConfig& cfg,
                     const PipelineParams& params);
PipelineParams load_checkpoint(const std::string& dir, PipelineConfig& cfg);

// Image/voxel/prior stems producing (F_i, F_l, F_e).
struct FeatureTriplet {
    Tensor fi, fl, fe;
};
FeatureTriplet extract_features(const Tensor& img, const Tensor& vox,
                                const Tensor& pri,
                                const PipelineParams& params);

// Differentiable core: stems, per-block filter + interaction, and the
// reconstruction head (1x1 conv C->3, sigmoid). Returns a 3 x H x W
// tensor in [0,1]. When fields_out is given and the filter is IAEF,
// each block's filter fields are appended to it.
Tensor forward_pipeline(const Tensor& img, const Tensor& vox,
                        const Tensor& pri, const PipelineConfig& cfg,
                        const PipelineParams& params,
                        std::vector<FilterFields>* fields_out = nullptr);

struct EnhancementResult {
    Image output;
    double psnr_db = 0.0; // filled when ground truth is supplied
    double ssim_val = 0.0;
    bool has_metrics = false;
    double ms = 0.0;
    std::vector<FilterFields> fields; // per block, IAEF filter only
};

EnhancementResult enhance(const Image& low, const EventStream& events,
                          const PipelineConfig& cfg,
                          const PipelineParams& params,
                          const Image* gt = nullptr,
                          bool want_fields = false);

struct Triplet {
    Image low;
    EventStream events;
    Image gt;
};
struct Dataset {
    std::vector<Triplet> items;
};
Dataset load_dataset(const std::string& dir);

// Synthesizes (low, events, gt) triplets from the PPM images in
// src_dir: per-triplet seeded degradation, events simulated between
// the stored low and ground-truth frames, plus background-activity
// noise. The manifest records every constant needed to regenerate each
// triplet's events byte-exactly from its own PPM files.
void make_dataset(const std::string& src_dir, int count,
                  const std::string& out_dir, uint64_t seed, double c = 0.2,
                  double eps = 1e-3);

// Procedural source images (gradients plus simple shapes) for the
// bundled synthetic set.
void write_demo_sources(const std::string& dir, int count, int size,
                        uint64_t seed);

struct TrainResult {
    std::vector<double> losses; // one entry per iteration
};

// Plain gradient descent on mean L1 against ground truth, serial and
// deterministic for a fixed seed. Writes the checkpoint and a
// loss.csv into ckpt_dir.
TrainResult train_toy(const std::string& data_dir, const PipelineConfig& cfg,
                      const std::string& ckpt_dir);

} // namespace evlie
