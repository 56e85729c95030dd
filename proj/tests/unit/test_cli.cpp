#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string out;
};

Run mxcli(const std::string& args) {
    const std::string cmd = std::string("\"") + MXCLI_PATH + "\" " + args + " 2>/dev/null";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int raw = pclose(p);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("mxcli_test_" + std::to_string(::getpid()) + "_" +
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

}  // namespace

TEST_F(Cli, InspectReportsFormatProperties) {
    const auto e4m3 = mxcli("inspect e4m3");
    ASSERT_EQ(e4m3.status, 0);
    EXPECT_NE(e4m3.out.find("xi_max            8\n"), std::string::npos);
    EXPECT_NE(e4m3.out.find("max normal        448\n"), std::string::npos);
    EXPECT_NE(e4m3.out.find("exact acc. width  43\n"), std::string::npos);
    const auto e3m4 = mxcli("inspect --format e3m4");
    ASSERT_EQ(e3m4.status, 0);
    EXPECT_NE(e3m4.out.find("xi_min            -4\n"), std::string::npos);
}

TEST_F(Cli, ConfigurationErrorsExitWithTwo) {
    EXPECT_EQ(mxcli("inspect e9m9").status, 2);
    EXPECT_EQ(mxcli("train --preset Z --iters 1 --out " + dir_.string()).status, 2);
    EXPECT_EQ(mxcli("train --rounding sideways --iters 1 --out " + dir_.string()).status, 2);
    EXPECT_EQ(mxcli("no-such-command").status, 2);
    const fs::path cfg = dir_ / "e5m2_exact.json";
    std::ofstream(cfg) << R"({"name": "wide register", "matmul": "online_mx:e5m2:32:exact"})";
    EXPECT_EQ(mxcli("train --config " + cfg.string() + " --iters 1 --out " + dir_.string()).status, 2);
}

TEST_F(Cli, MissingFilesExitWithThree) {
    EXPECT_EQ(mxcli("generate --checkpoint " + (dir_ / "missing.bin").string()).status, 3);
    EXPECT_EQ(mxcli("quantize " + (dir_ / "missing.txt").string()).status, 3);
}

TEST_F(Cli, QuantizeZerosHasNoError) {
    const fs::path in = dir_ / "zeros.txt";
    std::ofstream(in) << "0 0 0 0 0\n";
    const auto r = mxcli("quantize " + in.string() + " --format e4m3 --block 2");
    ASSERT_EQ(r.status, 0);
    const auto rows = lines(r.out);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0], "block,w,max_abs_error,mean_abs_error,nan_elements");
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i], std::to_string(i - 1) + ",0,0,0,0");
}

TEST_F(Cli, PresetsListsEveryConfiguration) {
    const auto r = mxcli("presets");
    ASSERT_EQ(r.status, 0);
    const auto rows = lines(r.out);
    ASSERT_EQ(rows.size(), 10u);
    EXPECT_NE(rows[0].find("\"name\":\"baseline\""), std::string::npos);
    EXPECT_NE(rows[5].find("\"name\":\"D'\""), std::string::npos);
    EXPECT_NE(rows[5].find("online_mx:e4m3:32:exact"), std::string::npos);
}

TEST_F(Cli, CompareRoundingWritesPairedCurves) {
    ASSERT_EQ(mxcli("compare-rounding --iters 1 --out " + dir_.string()).status, 0);
    const auto rows = lines(slurp(dir_ / "compare_rounding.csv"));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], "iteration,truncate,to-nearest");
    EXPECT_EQ(rows[1].rfind("0,", 0), 0u);
    EXPECT_TRUE(fs::exists(dir_ / "manifest.json"));
}

TEST_F(Cli, IdenticalPoliciesGiveIdenticalColumns) {
    ASSERT_EQ(mxcli("compare-rounding --iters 2 --left nearest-away --right nearest-away --out " + dir_.string()).status, 0);
    const auto rows = lines(slurp(dir_ / "compare_rounding.csv"));
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto a = rows[i].find(','), b = rows[i].rfind(',');
        EXPECT_EQ(rows[i].substr(a + 1, b - a - 1), rows[i].substr(b + 1)) << rows[i];
    }
}

TEST_F(Cli, TrainWritesCurveAndDivergenceExitsWithFour) {
    ASSERT_EQ(mxcli("train --preset baseline --iters 3 --seed 2 --out " + (dir_ / "ok").string()).status, 0);
    auto rows = lines(slurp(dir_ / "ok" / "loss.csv"));
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0], "iteration,loss");
    EXPECT_NE(slurp(dir_ / "ok" / "manifest.json").find("\"seed\""), std::string::npos);

    EXPECT_EQ(mxcli("train --iters 5 --lr 1e5 --out " + (dir_ / "bad").string()).status, 4);
    rows = lines(slurp(dir_ / "bad" / "loss.csv"));
    EXPECT_GE(rows.size(), 1u);
    EXPECT_LT(rows.size(), 6u);
    EXPECT_NE(slurp(dir_ / "bad" / "manifest.json").find("diverged"), std::string::npos);
}

TEST_F(Cli, SavedCheckpointGeneratesDeterministically) {
    const fs::path ck = dir_ / "model.bin";
    ASSERT_EQ(mxcli("train --iters 2 --out " + dir_.string() + " --save " + ck.string()).status, 0);
    const std::string args = "generate --checkpoint " + ck.string() + " --prompt \"The king\" --n 12 --seed 5 --temperature 1";
    const auto a = mxcli(args + " --out " + (dir_ / "g1").string()), b = mxcli(args + " --out " + (dir_ / "g2").string());
    ASSERT_EQ(a.status, 0);
    EXPECT_EQ(slurp(dir_ / "g1" / "tokens.txt"), slurp(dir_ / "g2" / "tokens.txt"));
    EXPECT_FALSE(slurp(dir_ / "g1" / "tokens.txt").empty());
}
