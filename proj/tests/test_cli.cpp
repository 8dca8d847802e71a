#include <doctest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "crowdsca/datamodel.hpp"
#include "crowdsca/training.hpp"
#include "oracles.hpp"

using namespace crowdsca;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run cli(const std::string& args) {
    const std::string cmd = std::string(CROWDSCA_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.output += buf;
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

/// Every regular file under root, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

// small enough to keep each train call to a few seconds
const std::string kFast = "--set train.batch_size=2 --set arch.extractor_convs=1,1,1";

struct Workspace {
    fs::path dir = oracle::temp_dir("cli");
    Workspace() {
        const auto r = cli("gen-data --out " + (dir / "data").string() +
                           " --n-source 3 --n-target 3 --n-test 2 --height 128 --width 128 --seed 0");
        REQUIRE(r.code == 0);
    }
    ~Workspace() { fs::remove_all(dir); }
    [[nodiscard]] std::string ini() const { return (dir / "data" / "train.ini").string(); }
};

/// Checkpoint whose density head is zeroed, so it predicts exactly zero everywhere.
fs::path zero_checkpoint(const fs::path& dir) {
    TrainConfig cfg;
    cfg.arch = ArchConfig{};
    auto st = make_train_state<float>(cfg);
    st.model.density.head().weight.value.zero();
    st.model.density.head().bias.value.zero();
    const auto p = dir / "zero.bin";
    save_checkpoint(p, st, cfg);
    return p;
}

}  // namespace

TEST_CASE("gen-data writes the layout deterministically") {
    const auto dir = oracle::temp_dir("cli_gen");
    const std::string flags = " --n-source 4 --n-target 3 --n-test 2 --height 64 --width 64 --seed 5";
    REQUIRE(cli("gen-data --out " + (dir / "a").string() + flags).code == 0);
    REQUIRE(cli("gen-data --out " + (dir / "b").string() + flags).code == 0);
    for (const char* sub : {"source", "target", "test"}) CHECK(fs::exists(dir / "a" / sub / "meta.json"));
    CHECK(fs::exists(dir / "a" / "train.ini"));
    const auto meta = nlohmann::json::parse(slurp(dir / "a" / "meta.json"));
    CHECK(meta["n_source"] == 4);
    CHECK(meta["n_target"] == 3);

    CHECK(load_source_dataset(dir / "a" / "source").size() == 4);
    CHECK(load_target_dataset(dir / "a" / "target").size() == 3);

    auto ta = tree(dir / "a");
    auto tb = tree(dir / "b");
    // train.ini records the output paths, which differ by construction
    ta.erase("train.ini");
    tb.erase("train.ini");
    CHECK(ta == tb);

    const auto empty = cli("gen-data --out " + (dir / "c").string() + " --n-source 0 --n-target 2 --n-test 0");
    CHECK(empty.code == 0);
    CHECK(empty.output.find("warning") != std::string::npos);
    CHECK(load_source_dataset(dir / "c" / "source").size() == 0);

    CHECK(cli("gen-data --out /proc/crowdsca_no_such_dir/x").code != 0);
    CHECK(cli("gen-data --out " + (dir / "d").string() + " --height 60").code != 0);
    fs::remove_all(dir);
}

TEST_CASE("usage errors exit with the config code") {
    CHECK(cli("").code == 2);
    CHECK(cli("no-such-command").code == 2);
    CHECK(cli("gen-data").code == 2);
    CHECK(cli("gen-data --out x --bogus 1").code == 2);
    CHECK(cli("--help").code == 0);
}

TEST_CASE("train, resume and eval through the binary") {
    Workspace ws;
    const auto run = ws.dir / "run";
    const auto r = cli("train --config " + ws.ini() + " --out " + run.string() + " --iters 10 " + kFast);
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(run / "ckpt_10.bin"));
    CHECK(fs::exists(run / "final.bin"));
    const auto csv = lines(run / "loss.csv");
    REQUIRE(csv.size() == 11);
    CHECK(csv[0] == "iter,den,seg_s,seg_t,adv,total,disc");
    CHECK(csv[10].rfind("10,", 0) == 0);
    CHECK(csv[10].find(",,") == std::string::npos);

    SUBCASE("baseline leaves adaptation columns empty") {
        const auto base = ws.dir / "base";
        REQUIRE(cli("train --config " + ws.ini() + " --out " + base.string() + " --iters 3 --no-adapt " + kFast).code ==
                0);
        const auto rows = lines(base / "loss.csv");
        REQUIRE(rows.size() == 4);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            // iter,den,,,,total,
            const auto& row = rows[i];
            CHECK(std::count(row.begin(), row.end(), ',') == 6);
            CHECK(row.find(",,,,") != std::string::npos);
            CHECK(row.back() == ',');
        }
    }
    SUBCASE("resume continues to the new target") {
        const auto more = ws.dir / "more";
        const auto r2 = cli("train --config " + ws.ini() + " --out " + more.string() + " --iters 12 --resume " +
                            (run / "final.bin").string() + " " + kFast);
        REQUIRE_MESSAGE(r2.code == 0, r2.output);
        CHECK(r2.output.find("resuming from iteration 10") != std::string::npos);
        CHECK(fs::exists(more / "ckpt_12.bin"));
    }
    SUBCASE("resume with a different architecture is refused") {
        const auto r2 = cli("train --config " + ws.ini() + " --out " + (ws.dir / "bad").string() +
                            " --iters 12 --resume " + (run / "final.bin").string() + " --set train.batch_size=2");
        CHECK(r2.code == 2);
        CHECK(r2.output.find("architecture") != std::string::npos);
    }
    SUBCASE("eval writes finite metrics") {
        const auto rep = ws.dir / "eval";
        const auto r2 = cli("eval --checkpoint " + (run / "final.bin").string() + " --data " +
                            (ws.dir / "data" / "test").string() + " --out " + rep.string() + " --maps");
        REQUIRE_MESSAGE(r2.code == 0, r2.output);
        const auto j = nlohmann::json::parse(slurp(rep / "metrics.json"));
        for (const char* k : {"mae", "mse", "psnr", "ssim"}) CHECK(std::isfinite(j[k].get<double>()));
        CHECK(j["images"].size() == 2);
        CHECK(lines(rep / "metrics.csv").size() == 3);
        CHECK(std::distance(fs::directory_iterator(rep / "maps"), fs::directory_iterator{}) == 2);
    }
}

TEST_CASE("train rejects bad configuration") {
    Workspace ws;
    const auto out = (ws.dir / "x").string();
    const auto unknown = cli("train --config " + ws.ini() + " --out " + out + " --set train.batchsize=2");
    CHECK(unknown.code == 2);
    CHECK(unknown.output.find("train.batchsize") != std::string::npos);

    std::ofstream(ws.dir / "bad.ini") << "[train]\nlearning_rate = 3\n";
    const auto bad_file = cli("train --config " + (ws.dir / "bad.ini").string() + " --out " + out);
    CHECK(bad_file.code == 2);
    CHECK(bad_file.output.find("train.learning_rate") != std::string::npos);

    CHECK(cli("train --out " + out + " --iters 1").code == 2);  // no source dataset
    CHECK(cli("train --config " + ws.ini() + " --out " + out + " --set train.crop=64x64").code == 2);
}

TEST_CASE("eval and predict with a zeroed head") {
    Workspace ws;
    const auto ckpt = zero_checkpoint(ws.dir);

    // heads-free scenes: ground truth and prediction are both empty
    TargetDataset empty;
    for (int k = 0; k < 2; ++k) {
        TargetSample s;
        s.id = "bg" + std::to_string(k);
        s.image = CrowdImage(64, 48, 0.2F + 0.3F * static_cast<float>(k));
        s.mask = CrowdMask(64, 48, MaskProvenance::detection_rectangles);
        s.heads = HeadPoints{};
        empty.samples.push_back(s);
    }
    save_dataset(ws.dir / "empty", empty);
    const auto r = cli("eval --checkpoint " + ckpt.string() + " --data " + (ws.dir / "empty").string() + " --out " +
                       (ws.dir / "rep").string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto j = nlohmann::json::parse(slurp(ws.dir / "rep" / "metrics.json"));
    CHECK(j["mae"].get<double>() == 0.0);
    CHECK(j["mse"].get<double>() == 0.0);

    save_image(ws.dir / "bg.png", CrowdImage(60, 52, 0.4F));
    const auto p = cli("predict --checkpoint " + ckpt.string() + " --image " + (ws.dir / "bg.png").string() +
                       " --out " + (ws.dir / "pred" / "d.png").string() + " --density " +
                       (ws.dir / "d.bin").string());
    REQUIRE_MESSAGE(p.code == 0, p.output);
    CHECK(std::stod(p.output) == 0.0);
    const auto png = load_image(ws.dir / "pred" / "d.png");
    CHECK(png.height == 60);
    CHECK(png.width == 52);
    const auto d = load_density_bin(ws.dir / "d.bin");
    CHECK(d.height == 60);
    CHECK(d.width == 52);

    std::ofstream(ws.dir / "junk.bin") << "not a checkpoint";
    CHECK(cli("predict --checkpoint " + (ws.dir / "junk.bin").string() + " --image " + (ws.dir / "bg.png").string() +
              " --out " + (ws.dir / "y.png").string())
              .code != 0);
    CHECK(cli("eval --checkpoint " + (ws.dir / "junk.bin").string() + " --data " + (ws.dir / "empty").string() +
              " --out " + (ws.dir / "rep2").string())
              .code != 0);
}

TEST_CASE("gradcheck on the desk configuration") {
    const auto r = cli("gradcheck --coords 10");
    CHECK_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("objective_discriminator") != std::string::npos);
    CHECK(r.output.find("FAIL") == std::string::npos);
    CHECK(cli("gradcheck --set arch.foo=1").code == 2);
}
