#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tunet/io.hpp"
#include "tunet/metrics.hpp"

using namespace tunet;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(TUNET_BIN) + " " + args + " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) return {-1, ""};
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int status = ::pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path root() {
    static const fs::path dir = [] {
        auto p = fs::temp_directory_path() / ("tunet_cli_" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path write_config(const std::string& name, const std::string& text) {
    const auto p = root() / name;
    std::ofstream(p) << text;
    return p;
}

const char* kTinyModel = R"("model": {"height": 32, "width": 32, "patch_size": 8, "heads": 2, "layers": 1,
                                      "encoder_widths": [4, 8], "decoder_widths": [8, 4]})";

std::string overfit_config() { return std::string(TUNET_SOURCE_DIR) + "/configs/tiny.json"; }

/// Trains the overfit config once and shares the output directory.
const fs::path& trained() {
    static const fs::path dir = [] {
        const auto out = root() / "overfit";
        const auto r = run("train --config " + overfit_config() + " --out " + out.string());
        EXPECT_EQ(r.code, 0) << r.out;
        return out;
    }();
    return dir;
}

}  // namespace

TEST(Cli, NoSubcommandIsUsageError) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("train --config").code, 2);
}

TEST(Cli, TrainZeroEpochs) {
    const auto cfg = write_config("epochs0.json", std::string("{") + kTinyModel +
                                                       R"(, "train": {"epochs": 0, "milestones": []},
                                                       "data": {"count": 2}})");
    const auto out = root() / "epochs0";
    const auto r = run("train --config " + cfg.string() + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(slurp(out / "metrics.csv"), metrics_csv_header() + "\n");
    EXPECT_TRUE(fs::exists(out / "last.ckpt"));
    EXPECT_TRUE(fs::exists(out / "best.ckpt"));
}

TEST(Cli, MalformedJsonIsConfigError) {
    const auto cfg = write_config("bad.json", "{\"model\": {\"height\": 32,,}}");
    const auto r = run("train --config " + cfg.string() + " --out " + (root() / "bad").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("line 1"), std::string::npos) << r.out;
}

TEST(Cli, UnknownKeyIsConfigError) {
    const auto cfg = write_config("unknown.json", R"({"train": {"learning_rate": 0.1}})");
    const auto r = run("train --config " + cfg.string() + " --out " + (root() / "unknown").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("learning_rate"), std::string::npos) << r.out;
}

TEST(Cli, OverfitTrainingReachesLowLoss) {
    const auto& dir = trained();
    std::ifstream csv(dir / "metrics.csv");
    std::string line, last;
    while (std::getline(csv, line)) last = line;
    ASSERT_EQ(last.rfind("249,train,", 0), 0u) << last;
    const double loss = std::stod(last.substr(std::string("249,train,").size()));
    EXPECT_LT(loss, 0.05);
}

TEST(Cli, EvalOnTrainingSetIsAccurateAndDeterministic) {
    const auto args = "eval --config " + overfit_config() + " --ckpt " + (trained() / "best.ckpt").string();
    const auto a = run(args), b = run(args);
    ASSERT_EQ(a.code, 0) << a.out;
    EXPECT_EQ(a.out, b.out);
    std::istringstream in(a.out);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, metrics_csv_header());
    // epoch,split,loss,miou,dice,...
    std::vector<std::string> cols;
    std::stringstream ss(row);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 8u) << row;
    EXPECT_EQ(cols[1], "eval");
    EXPECT_GT(std::stod(cols[4]), 0.95) << row;
}

TEST(Cli, EvalWithMismatchedCheckpointIsConfigError) {
    const auto cfg = write_config("layers2.json", R"({"model": {"height": 32, "width": 32, "patch_size": 8,
        "heads": 2, "layers": 2, "encoder_widths": [4, 8], "decoder_widths": [8, 4]}, "train": {"epochs": 1, "milestones": []}})");
    const auto r = run("eval --config " + cfg.string() + " --ckpt " + (trained() / "best.ckpt").string());
    EXPECT_EQ(r.code, 2) << r.out;
}

TEST(Cli, EvalWithMissingCheckpointIsRuntimeError) {
    EXPECT_EQ(run("eval --config " + overfit_config() + " --ckpt " + (root() / "none.ckpt").string()).code, 3);
}

TEST(Cli, InferWritesProbabilitiesAndMask) {
    const auto data = root() / "infer_data";
    ASSERT_EQ(run("synth --seed 4 --count 1 --size 32 --out " + data.string()).code, 0);
    const auto ckpt = (trained() / "best.ckpt").string();
    const auto in = (data / "img_0000.tnsr").string();
    const auto prob_path = root() / "prob.tnsr", mask_path = root() / "mask.tnsr";
    auto r = run("infer --ckpt " + ckpt + " --in " + in + " --out " + prob_path.string() + " --mask " +
                 mask_path.string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto prob = load_tensor<double>(prob_path);
    const auto mask = load_tensor<double>(mask_path);
    EXPECT_EQ(prob.shape(), (Shape{1, 32, 32}));
    EXPECT_GT(prob.value().minCoeff(), 0.0);
    EXPECT_LT(prob.value().maxCoeff(), 1.0);
    EXPECT_TRUE(((mask.value().array() == 0) || (mask.value().array() == 1)).all());
    for (Index i = 0; i < mask.numel(); ++i) EXPECT_EQ(mask.value()[i], prob.value()[i] > 0.8 ? 1.0 : 0.0);

    r = run("infer --ckpt " + ckpt + " --in " + in + " --out " + prob_path.string() + " --mask " +
            mask_path.string() + " --threshold 0");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_TRUE((load_tensor<double>(mask_path).value().array() == 1).all());
}

TEST(Cli, InferRejectsWrongShape) {
    const auto data = root() / "infer64";
    ASSERT_EQ(run("synth --seed 4 --count 1 --size 64 --out " + data.string()).code, 0);
    const auto r = run("infer --ckpt " + (trained() / "best.ckpt").string() + " --in " +
                       (data / "img_0000.tnsr").string() + " --out " + (root() / "p64.tnsr").string());
    EXPECT_EQ(r.code, 2) << r.out;
}

TEST(Cli, GradcheckPassesFailsAndValidates) {
    const auto pass = run("gradcheck --config " + overfit_config() + " --samples 200");
    EXPECT_EQ(pass.code, 0) << pass.out;
    EXPECT_NE(pass.out.find("worst relative error"), std::string::npos);
    const auto broken = run("gradcheck --config " + overfit_config() + " --samples 200 --corrupt-backward");
    EXPECT_EQ(broken.code, 1) << broken.out;
    EXPECT_EQ(run("gradcheck --config " + overfit_config() + " --samples 0").code, 2);
}

TEST(Cli, SynthNamingDeterminismAndValidation) {
    const auto a = root() / "synth_a", b = root() / "synth_b";
    ASSERT_EQ(run("synth --seed 9 --count 2 --size 32 --out " + a.string()).code, 0);
    ASSERT_EQ(run("synth --seed 9 --count 2 --size 32 --out " + b.string()).code, 0);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    EXPECT_EQ(names, (std::vector<std::string>{"img_0000.tnsr", "img_0001.tnsr", "msk_0000.tnsr", "msk_0001.tnsr"}));
    for (const auto& n : names) EXPECT_EQ(slurp(a / n), slurp(b / n)) << n;
    EXPECT_EQ(run("synth --seed 9 --count 2 --size 31 --out " + (root() / "synth_c").string()).code, 2);
}

TEST(Cli, TrainFromDatasetDirectory) {
    const auto data = root() / "dir_data";
    ASSERT_EQ(run("synth --seed 2 --count 3 --size 32 --out " + data.string()).code, 0);
    const auto cfg = write_config("dir.json", std::string("{") + kTinyModel +
                                                  R"(, "train": {"epochs": 1, "milestones": [], "gradcheck_mode": true},
                                                  "data": {"source": "dir", "path": ")" +
                                                  data.string() + R"(", "val_fraction": 0.34}})");
    const auto out = root() / "dir_run";
    const auto r = run("train --config " + cfg.string() + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.out;
    std::ifstream csv(out / "metrics.csv");
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 3);  // header + train + val
    EXPECT_EQ(run("eval --config " + cfg.string() + " --ckpt " + (out / "last.ckpt").string() + " --data " +
                  data.string())
                  .code,
              0);
}
