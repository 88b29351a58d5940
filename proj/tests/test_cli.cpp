// End-to-end tests of the command-line tool: exit codes, file outputs,
// determinism and stage composition, on deliberately tiny recordings.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "aegru/checkpoint.hpp"
#include "aegru/data.hpp"

#include "json.hpp"

#ifndef AEGRU_CLI_PATH
#error "AEGRU_CLI_PATH must point at the aegru binary"
#endif

namespace {

namespace fs = std::filesystem;

struct RunResult {
    int exit_code;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const std::string log = (fs::temp_directory_path() / "aegru_cli_out.txt").string();
    const std::string cmd = std::string(AEGRU_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    return RunResult{WEXITSTATUS(status), ss.str()};
}

std::string tmp(const std::string& name) {
    return (fs::temp_directory_path() / ("aegru_cli_" + name)).string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// One shared tiny recording + trained checkpoint for the pipeline tests.
class CliPipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        ndr_ = tmp("pipe.ndr");
        ckpt_ = tmp("pipe.aegw");
        ASSERT_EQ(run_cli("synth --out " + ndr_ + " --channels 10 --samples 900 --seed 4")
                      .exit_code,
                  0);
        const RunResult train = run_cli("train --data " + ndr_ + " --out " + ckpt_ +
                                        " --ws 4 --n 3 --epochs 2 --batch 32 --cf 8 --ch 8"
                                        " --csigma 8 --seed 2");
        ASSERT_EQ(train.exit_code, 0) << train.output;
    }

    static std::string ndr_, ckpt_;
};

std::string CliPipeline::ndr_;
std::string CliPipeline::ckpt_;

}  // namespace

TEST(Cli, SynthRoundTripAndDeterminism) {
    const std::string a = tmp("synth_a.ndr"), b = tmp("synth_b.ndr");
    ASSERT_EQ(run_cli("synth --out " + a + " --channels 96 --samples 40 --seed 7").exit_code,
              0);
    ASSERT_EQ(run_cli("synth --out " + b + " --channels 96 --samples 40 --seed 7").exit_code,
              0);
    EXPECT_EQ(slurp(a), slurp(b));

    const aegru::Recording rec = aegru::load_ndr(a);
    EXPECT_EQ(rec.channel_count, 96u);
    EXPECT_EQ(rec.sample_count(), 40u);

    const std::string c = tmp("synth_c.ndr");
    ASSERT_EQ(run_cli("synth --out " + c + " --channels 96 --samples 40 --seed 8").exit_code,
              0);
    EXPECT_NE(slurp(a), slurp(c));
}

TEST_F(CliPipeline, TrainWroteCheckpointAndHistory) {
    EXPECT_TRUE(fs::exists(ckpt_));
    const aegru::Checkpoint ckpt = aegru::load_checkpoint(ckpt_);
    EXPECT_EQ(ckpt.ws, 4u);
    EXPECT_EQ(ckpt.n, 3u);
    EXPECT_EQ(ckpt.params.cfg.c_i, 10u);

    const std::string history = slurp(ckpt_ + ".history.csv");
    EXPECT_EQ(history.rfind("epoch,train_loss,val_r2\n", 0), 0u);
    EXPECT_EQ(count_lines(history), 3);  // header + 2 epochs
}

TEST_F(CliPipeline, PruneAtZeroRateKeepsBenchIdentical) {
    const std::string pruned = tmp("tpr0.aegw");
    const RunResult prune = run_cli("prune --model " + ckpt_ + " --data " + ndr_ +
                                    " --out " + pruned + " --tpr 0 --batch 32");
    ASSERT_EQ(prune.exit_code, 0) << prune.output;

    const std::string ja = tmp("bench_base.json"), jb = tmp("bench_tpr0.json");
    ASSERT_EQ(run_cli("bench --model " + ckpt_ + " --data " + ndr_ + " --out " + ja)
                  .exit_code,
              0);
    ASSERT_EQ(run_cli("bench --model " + pruned + " --data " + ndr_ + " --out " + jb)
                  .exit_code,
              0);
    const auto a = nlohmann::json::parse(slurp(ja));
    const auto b = nlohmann::json::parse(slurp(jb));
    EXPECT_EQ(a["effective_macs"], b["effective_macs"]);
    EXPECT_EQ(a["r2_mean"], b["r2_mean"]);
}

TEST_F(CliPipeline, PruneQuantizeBenchCompose) {
    const std::string pruned = tmp("pruned.aegw");
    const std::string quantized = tmp("quant.aegw");
    const std::string sparsity = tmp("sparsity.csv");
    const RunResult prune =
        run_cli("prune --model " + ckpt_ + " --data " + ndr_ + " --out " + pruned +
                " --tpr 0.5 --finetune-epochs 1 --batch 32 --sparsity-csv " + sparsity);
    ASSERT_EQ(prune.exit_code, 0) << prune.output;
    const std::string sp = slurp(sparsity);
    EXPECT_EQ(sp.rfind("tensor,total,zeros,fraction\n", 0), 0u);

    ASSERT_EQ(run_cli("quantize --model " + pruned + " --out " + quantized).exit_code, 0);
    const aegru::Checkpoint q = aegru::load_checkpoint(quantized);
    EXPECT_TRUE(q.params.quant.quantized);

    const std::string jq = tmp("bench_q.json"), jp = tmp("bench_p.json");
    ASSERT_EQ(run_cli("bench --model " + quantized + " --data " + ndr_ + " --out " + jq)
                  .exit_code,
              0);
    ASSERT_EQ(run_cli("bench --model " + pruned + " --data " + ndr_ + " --out " + jp)
                  .exit_code,
              0);
    const auto bq = nlohmann::json::parse(slurp(jq));
    const auto bp = nlohmann::json::parse(slurp(jp));
    for (const char* key : {"r2_x", "r2_y", "r2_mean", "footprint_bytes", "effective_macs",
                            "effective_acs", "dense_macs"}) {
        EXPECT_TRUE(bq.contains(key)) << key;
    }
    // Quantization shrinks stored parameters 4x, activations unchanged.
    const std::uint64_t act_bytes = 3u * 10u * 4u + 3u * 8u * 4u + 8u * 4u + 24u * 4u + 8u;
    EXPECT_EQ(bq["footprint_bytes"].get<std::uint64_t>() - act_bytes,
              (bp["footprint_bytes"].get<std::uint64_t>() - act_bytes) / 4u);
}

TEST_F(CliPipeline, GridWritesOneRowPerCell) {
    const std::string out = tmp("grid.csv");
    const RunResult grid = run_cli("grid --data " + ndr_ + " --ws-list 3,4 --n-list 2,3" +
                                   " --out " + out +
                                   " --epochs 1 --batch 32 --cf 6 --ch 6 --csigma 6");
    ASSERT_EQ(grid.exit_code, 0) << grid.output;
    const std::string csv = slurp(out);
    EXPECT_EQ(csv.rfind("ws,n,r2_mean,r2_x,r2_y\n", 0), 0u);
    EXPECT_EQ(count_lines(csv), 5);  // header + 4 cells
}

TEST_F(CliPipeline, SweepTprCurve) {
    const std::string out = tmp("sweep.csv");
    const RunResult sweep =
        run_cli("sweep-tpr --data " + ndr_ + " --model " + ckpt_ +
                " --tpr-list 0,0.5 --out " + out + " --finetune-epochs 1 --batch 32");
    ASSERT_EQ(sweep.exit_code, 0) << sweep.output;
    const std::string csv = slurp(out);
    EXPECT_EQ(csv.rfind("tpr,r2_x,r2_y,r2_mean,effective_macs\n", 0), 0u);
    EXPECT_EQ(count_lines(csv), 3);
}

TEST_F(CliPipeline, AblateCsvShape) {
    const std::string out = tmp("ablate.csv");
    const RunResult ablate = run_cli("ablate --data " + ndr_ + " --out " + out +
                                     " --seeds 2 --ws 4 --n 3 --epochs 1 --batch 32" +
                                     " --cf 6 --ch 6 --csigma 6");
    ASSERT_EQ(ablate.exit_code, 0) << ablate.output;
    const std::string csv = slurp(out);
    EXPECT_EQ(csv.rfind("model,seed,r2_x,r2_y,r2_mean\n", 0), 0u);
    // header + 2 models x 2 seeds + 4 summary rows
    EXPECT_EQ(count_lines(csv), 9);
    EXPECT_NE(csv.find("aegru,mean,"), std::string::npos);
    EXPECT_NE(csv.find("vanilla_gru,std,"), std::string::npos);
}

TEST_F(CliPipeline, ConfigFileWithCliOverride) {
    const std::string cfg = tmp("train.cfg");
    std::ofstream(cfg) << "# window geometry\nws = 5\nn = 2\nepochs = 1\nbatch = 32\n";
    const std::string out = tmp("cfg.aegw");

    const RunResult r1 = run_cli("train --config " + cfg + " --data " + ndr_ + " --out " + out);
    ASSERT_EQ(r1.exit_code, 0) << r1.output;
    EXPECT_EQ(aegru::load_checkpoint(out).ws, 5u);

    // The command line wins over the file.
    const RunResult r2 =
        run_cli("train --config " + cfg + " --data " + ndr_ + " --out " + out + " --ws 6");
    ASSERT_EQ(r2.exit_code, 0) << r2.output;
    EXPECT_EQ(aegru::load_checkpoint(out).ws, 6u);
}

TEST_F(CliPipeline, UnknownConfigKeyRejected) {
    const std::string cfg = tmp("bad.cfg");
    std::ofstream(cfg) << "wz = 5\n";
    const RunResult r =
        run_cli("train --config " + cfg + " --data " + ndr_ + " --out " + tmp("x.aegw"));
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.output.find("wz"), std::string::npos);
}

TEST_F(CliPipeline, ErrorExitCodes) {
    // Validation failure: out-of-range pruning rate, message names the flag.
    const RunResult tpr = run_cli("prune --model " + ckpt_ + " --data " + ndr_ +
                                  " --out x.aegw --tpr 1.5");
    EXPECT_EQ(tpr.exit_code, 2);
    EXPECT_NE(tpr.output.find("--tpr"), std::string::npos);

    // Unknown flag.
    EXPECT_EQ(run_cli("train --data " + ndr_ + " --out x.aegw --bogus 3").exit_code, 2);

    // Missing data file.
    EXPECT_EQ(run_cli("train --data /nonexistent.ndr --out x.aegw").exit_code, 3);

    // Corrupt recording.
    const std::string bad = tmp("bad.ndr");
    std::ofstream(bad, std::ios::binary) << "XXXXgarbage";
    EXPECT_EQ(run_cli("bench --model " + ckpt_ + " --data " + bad).exit_code, 3);

    // Recording too short for the window geometry.
    const std::string shortrec = tmp("short.ndr");
    ASSERT_EQ(run_cli("synth --out " + shortrec + " --channels 10 --samples 16").exit_code,
              0);
    EXPECT_EQ(
        run_cli("train --data " + shortrec + " --out x.aegw --ws 20 --n 5").exit_code, 3);
}

TEST_F(CliPipeline, TrainingIsByteDeterministic) {
    const std::string a = tmp("det_a.aegw"), b = tmp("det_b.aegw");
    const std::string flags = " --ws 4 --n 3 --epochs 1 --batch 32 --cf 6 --ch 6 --csigma 6"
                              " --seed 11";
    ASSERT_EQ(run_cli("train --data " + ndr_ + " --out " + a + flags).exit_code, 0);
    ASSERT_EQ(run_cli("train --data " + ndr_ + " --out " + b + flags).exit_code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_FALSE(slurp(a).empty());
}
