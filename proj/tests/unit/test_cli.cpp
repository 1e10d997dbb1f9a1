#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "evlie/events.hpp"
#include "evlie/image.hpp"
#include "evlie/tns.hpp"

using namespace evlie;
namespace fs = std::filesystem;

namespace {

std::string cli() { return std::string(EVLIE_CLI_PATH); }

fs::path scratch() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "evlie_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// Runs the tool, captures combined output, returns the exit code.
int run(const std::string& args, std::string* output = nullptr) {
    const fs::path log = scratch() / "last_run.log";
    const std::string cmd =
        cli() + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(log);
        output->assign((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
    }
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    REQUIRE(out.good());
}

} // namespace

TEST_CASE("argument errors exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("simulate --out x.evt1") == 2); // missing --in
    CHECK(run("voxelize --events nope.evt1 --out x.tns1 --bogus 1") == 2);
    CHECK(run("--help") == 0);
    CHECK(run("simulate --help") == 0);
}

TEST_CASE("the full workflow runs end to end through the tool") {
    const fs::path root = scratch();
    const fs::path srcs = root / "srcs";
    const fs::path data = root / "data";
    const fs::path ckpt = root / "ckpt";
    std::string out;

    // dataset synthesis, including the procedural source images
    REQUIRE(run("make-dataset --src " + srcs.string() +
                " --demo-sources 3 --size 16 --count 2 --seed 5 --out " +
                data.string(), &out) == 0);
    CHECK(out.find("wrote 2 triplets") != std::string::npos);
    REQUIRE(fs::exists(data / "manifest.json"));
    REQUIRE(fs::exists(data / "triplet_001" / "events.evt1"));

    // event simulation straight from the source frames, both containers
    const fs::path ev_bin = root / "sim.evt1";
    const fs::path ev_csv = root / "sim.csv";
    REQUIRE(run("simulate --in " + srcs.string() + " --dt 1000 --out " +
                ev_bin.string(), &out) == 0);
    CHECK(out.find("3 frames") != std::string::npos);
    REQUIRE(run("simulate --in " + srcs.string() + " --dt 1000 --out " +
                ev_csv.string()) == 0);
    const EventStream sim = load_events(ev_bin.string());
    CHECK(sim.width == 16);
    CHECK(sim.height == 16);
    const EventStream sim_csv = load_events(ev_csv.string(), 16, 16);
    REQUIRE(sim_csv.count() == sim.count());
    for (size_t i = 0; i < sim.count(); ++i) {
        CHECK(sim_csv.records[i] == sim.records[i]);
    }

    // voxelization of the simulated stream
    const fs::path vox = root / "vox.tns1";
    REQUIRE(run("voxelize --events " + ev_bin.string() +
                " --bins 3 --out " + vox.string()) == 0);
    const Tensor grid = load_tns(vox.string());
    CHECK(grid->shape == std::vector<int64_t>{3, 16, 16});
    // CSV input carries no geometry, so it must be given explicitly
    CHECK(run("voxelize --events " + ev_csv.string() + " --bins 3 --out " +
              (root / "vox2.tns1").string()) == 2);
    CHECK(run("voxelize --events " + ev_csv.string() +
              " --width 16 --height 16 --bins 3 --out " +
              (root / "vox2.tns1").string()) == 0);

    // a few iterations of training on the synthesized triplets
    const fs::path cfg = root / "config.json";
    write_text(cfg, "{\"channels\":4,\"blocks\":1,\"bins\":2,\"taps\":3,"
                    "\"iters\":2,\"lr\":0.05,\"seed\":3}");
    REQUIRE(run("train --data " + data.string() + " --config " +
                cfg.string() + " --out " + ckpt.string(), &out) == 0);
    CHECK(out.find("2 iterations") != std::string::npos);
    REQUIRE(fs::exists(ckpt / "manifest.json"));
    REQUIRE(fs::exists(ckpt / "loss.csv"));

    // enhancement with metrics and field dumps
    const fs::path low = data / "triplet_000" / "low.ppm";
    const fs::path gt = data / "triplet_000" / "gt.ppm";
    const fs::path evp = data / "triplet_000" / "events.evt1";
    const fs::path enhanced = root / "enhanced.ppm";
    const fs::path fields = root / "fields";
    REQUIRE(run("enhance --image " + low.string() + " --events " +
                evp.string() + " --ckpt " + ckpt.string() + " --out " +
                enhanced.string() + " --gt " + gt.string() +
                " --dump-fields " + fields.string(), &out) == 0);
    CHECK(out.find("psnr_db=") != std::string::npos);
    CHECK(out.find("ssim=") != std::string::npos);
    const Image result = read_ppm(enhanced.string());
    CHECK(result.width == 16);
    CHECK(result.height == 16);
    CHECK(result.channels == 3);
    for (const char* name : {"kv", "kh", "w", "px", "py"}) {
        CHECK(fs::exists(fields / ("block0_" + std::string(name) + ".tns1")));
    }

    // standalone metric report, identical image pair hits the cap
    REQUIRE(run("metrics --a " + gt.string() + " --b " + gt.string(),
                &out) == 0);
    CHECK(out.find("psnr_db=99") != std::string::npos);
    CHECK(out.find("ssim=1") != std::string::npos);
}

TEST_CASE("failures map onto the documented exit codes") {
    const fs::path root = scratch();

    // unknown config key
    const fs::path bad_cfg = root / "bad_config.json";
    write_text(bad_cfg, "{\"chanels\":4}");
    CHECK(run("train --data " + (root / "data").string() + " --config " +
              bad_cfg.string() + " --out " + (root / "ck2").string()) == 2);

    // malformed event container
    const fs::path corrupt = root / "corrupt.evt1";
    write_text(corrupt, "EVT1 this is not a stream");
    CHECK(run("voxelize --events " + corrupt.string() + " --bins 2 --out " +
              (root / "x.tns1").string()) == 3);

    // bad simulate arguments
    CHECK(run("simulate --in " + (root / "no_frames").string() +
              " --out " + (root / "x.evt1").string()) == 2);
    const fs::path one_frame = root / "one_frame";
    fs::create_directories(one_frame);
    write_ppm(Image(4, 4, 3, 0.5), (one_frame / "f.ppm").string());
    CHECK(run("simulate --in " + one_frame.string() + " --dt 0 --out " +
              (root / "x.evt1").string()) == 2);

    // missing checkpoint directory
    CHECK(run("enhance --image " + (root / "data/triplet_000/low.ppm").string() +
              " --events " + (root / "data/triplet_000/events.evt1").string() +
              " --ckpt " + (root / "no_ckpt").string() + " --out " +
              (root / "y.ppm").string()) == 2);
}

TEST_CASE("built-in gradient verification reports success") {
    std::string out;
    CHECK(run("gradcheck --module bogus") == 2);
    REQUIRE(run("gradcheck --module all", &out) == 0);
    CHECK(out.find("gradcheck eici") != std::string::npos);
    CHECK(out.find("gradcheck iaef") != std::string::npos);
    CHECK(out.find("[ok]") != std::string::npos);
    CHECK(out.find("[FAIL]") == std::string::npos);
}
