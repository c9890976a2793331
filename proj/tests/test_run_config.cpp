#include <gtest/gtest.h>

#include "tunet/run_config.hpp"

using namespace tunet;

TEST(RunConfig, EmptyDocumentGivesPaperDefaults) {
    const auto rc = parse_run_config("{}");
    EXPECT_EQ(rc.model, ModelConfig::paper());
    EXPECT_EQ(rc.train.epochs, 120);
    EXPECT_DOUBLE_EQ(rc.train.base_lr, 1e-3);
    EXPECT_EQ(rc.train.milestones, (std::vector<long>{60, 100}));
    EXPECT_DOUBLE_EQ(rc.train.weight_decay, 1e-6);
    EXPECT_DOUBLE_EQ(rc.eval.threshold, 0.8);
    EXPECT_FALSE(rc.train.gradcheck_mode);
    EXPECT_EQ(rc.data.source, "synth");
}

TEST(RunConfig, ReadsEverySection) {
    const auto rc = parse_run_config(R"({
        "model": {"height": 64, "width": 64, "patch_size": 16, "heads": 4, "layers": 2,
                  "encoder_widths": [8, 16], "decoder_widths": [16, 8], "decoder_convs": 1},
        "train": {"epochs": 10, "base_lr": 0.01, "milestones": [5], "batch_size": 2,
                  "seed": 3, "gradcheck_mode": true},
        "data": {"source": "synth", "count": 4, "val_fraction": 0.25},
        "eval": {"threshold": 0.6}
    })");
    EXPECT_EQ(rc.model.height, 64);
    EXPECT_EQ(rc.model.heads, 4);
    EXPECT_EQ(rc.model.decoder_convs, 1);
    EXPECT_EQ(rc.train.milestones, (std::vector<long>{5}));
    EXPECT_EQ(rc.train.seed, 3u);
    EXPECT_TRUE(rc.train.gradcheck_mode);
    EXPECT_EQ(rc.data.count, 4);
    EXPECT_DOUBLE_EQ(rc.eval.threshold, 0.6);
    EXPECT_DOUBLE_EQ(rc.train.threshold, 0.6);
}

TEST(RunConfig, DefaultWidthsFollowStageCount) {
    const auto rc = parse_run_config(R"({"model": {"height": 64, "width": 64, "patch_size": 8}})");
    EXPECT_EQ(rc.model.encoder_widths, (std::vector<Index>{16, 32, 64}));
    EXPECT_EQ(rc.model.decoder_widths, (std::vector<Index>{64, 32, 16}));
}

TEST(RunConfig, UnknownKeysRejected) {
    EXPECT_THROW(parse_run_config(R"({"modle": {}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"model": {"heigth": 32}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"train": {"lr": 0.1}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"eval": {"thresh": 0.1}})"), ConfigError);
}

TEST(RunConfig, MalformedJsonCitesLocation) {
    try {
        parse_run_config("{\"model\": {\"height\": 32,,}}");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("column"), std::string::npos) << msg;
    }
}

TEST(RunConfig, InvalidValuesRejected) {
    EXPECT_THROW(parse_run_config(R"({"model": {"height": "big"}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"model": {"height": 32, "width": 64}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"train": {"milestones": [100, 60]}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"train": {"epochs": 50}})"), ConfigError);  // milestone 60 >= 50
    EXPECT_THROW(parse_run_config(R"({"data": {"source": "ct82"}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"data": {"source": "dir"}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"eval": {"threshold": 1.5}})"), ConfigError);
}

TEST(RunConfig, ModelJsonRoundTrip) {
    auto c = ModelConfig::tiny();
    c.alpha = 0.75;
    c.decoder_convs = 3;
    EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
    EXPECT_THROW(model_config_from_json("{not json"), SchemaError);
}

TEST(RunConfig, MissingFileIsConfigError) {
    EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}
