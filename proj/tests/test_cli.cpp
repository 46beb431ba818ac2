#include "doctest.h"

#include "blindloss/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace blindloss;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path make_tiny_config(const fs::path& dir) {
    const fs::path path = dir / "tiny.json";
    std::ofstream out(path);
    out << R"({
        "seed": 3,
        "optimizer": {"total_iters": 3, "batch_size": 2},
        "data": {"classes": 4, "height": 16, "width": 16, "train_scenes": 5, "eval_scenes": 2},
        "model": {"encoder_widths": [4, 6, 8], "decoder_widths": [6, 4]},
        "cwcl": {"negatives_per_class": 5},
        "sdcl": {"anchors_per_image": 4, "negatives_per_anchor": 4},
        "head": {"embed_dim": 8}
    })";
    return path;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli({"no-such-command"}) == 2);
    CHECK(run_cli({"train", "--no-such-flag"}) == 2);
    CHECK(run_cli({}) == 2);
}

TEST_CASE("train writes its outputs and reruns from the manifest byte-identically") {
    const fs::path dir = fs::temp_directory_path() / "blindloss_cli_case";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg = make_tiny_config(dir);

    const fs::path run1 = dir / "run1";
    REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", run1.string()}) == 0);
    for (const char* name : {"metrics.csv", "summary.json", "net.ckpt", "manifest.json", "corpus.txt"})
        CHECK(fs::exists(run1 / name));

    // every output is listed in the manifest
    RunManifest m = load_manifest(run1 / "manifest.json");
    for (const char* name : {"metrics.csv", "summary.json", "net.ckpt", "corpus.txt"}) {
        bool listed = false;
        for (const std::string& o : m.outputs) listed = listed || o == (run1 / name).string();
        CHECK(listed);
    }

    const fs::path run2 = dir / "run2";
    REQUIRE(run_cli({"train", "--manifest", (run1 / "manifest.json").string(), "--out",
                     run2.string()}) == 0);
    CHECK(slurp(run1 / "metrics.csv") == slurp(run2 / "metrics.csv"));
    CHECK(slurp(run1 / "summary.json") == slurp(run2 / "summary.json"));

    // eval from the checkpoint agrees with the summary written at train time
    const fs::path evald = dir / "eval";
    REQUIRE(run_cli({"eval", "--config", cfg.string(), "--ckpt", (run1 / "net.ckpt").string(),
                     "--out", evald.string()}) == 0);
    Json train_summary = Json::parse(slurp(run1 / "summary.json"));
    Json eval_summary = Json::parse(slurp(evald / "summary.json"));
    CHECK(train_summary["metrics"] == eval_summary["metrics"]);

    fs::remove_all(dir);
}

TEST_CASE("gen-data reruns from its manifest byte-identically") {
    const fs::path dir = fs::temp_directory_path() / "blindloss_cli_gendata";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg = make_tiny_config(dir);

    const fs::path d1 = dir / "d1", d2 = dir / "d2";
    REQUIRE(run_cli({"gen-data", "--config", cfg.string(), "--out", d1.string()}) == 0);
    REQUIRE(run_cli({"gen-data", "--manifest", (d1 / "manifest.json").string(), "--out",
                     d2.string()}) == 0);
    CHECK(slurp(d1 / "corpus.txt") == slurp(d2 / "corpus.txt"));
    fs::remove_all(dir);
}

TEST_CASE("train --seed overrides and is reflected in the summary") {
    const fs::path dir = fs::temp_directory_path() / "blindloss_cli_seed";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg = make_tiny_config(dir);

    const fs::path run = dir / "run";
    REQUIRE(run_cli({"train", "--config", cfg.string(), "--seed", "77", "--iters", "2", "--out",
                     run.string()}) == 0);
    Json summary = Json::parse(slurp(run / "summary.json"));
    CHECK(summary["seed"] == 77);
    CHECK(summary["config"]["optimizer"]["total_iters"] == 2);
    fs::remove_all(dir);
}

TEST_SUITE_END();
