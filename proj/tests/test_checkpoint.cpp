#include "aegru/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "aegru/sparsify.hpp"
#include "test_util.hpp"

using namespace aegru;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

AegruParams interesting_params() {
    AegruParams p = init_params({7, 5, 4, 3}, 99);
    RngStream rng(1);
    uniform_fill(p.bn.running_mean, rng, -1.0, 1.0);
    uniform_fill(p.bn.running_var, rng, 0.5, 2.0);
    uniform_fill(p.fc_up.b, rng, -1e6, 1e6);  // stress full-precision storage
    l1_prune(p, {0.4, 0, false});
    return p;
}

}  // namespace

TEST(Checkpoint, RoundTripPreservesEverything) {
    AegruParams p = interesting_params();
    quantize(p);
    const std::string path = temp_path("roundtrip.aegw");
    save_checkpoint(p, 12, 7, path);

    Checkpoint loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.ws, 12u);
    EXPECT_EQ(loaded.n, 7u);
    EXPECT_EQ(loaded.params.cfg.c_i, 7u);
    EXPECT_EQ(loaded.params.cfg.c_sigma, 3u);
    const auto expect = tensor_refs(p);
    const auto got = tensor_refs(loaded.params);
    for (std::size_t i = 0; i < expect.size(); ++i)
        EXPECT_EQ(*got[i].tensor, *expect[i].tensor) << expect[i].name;
    ASSERT_EQ(loaded.params.masks.size(), p.masks.size());
    for (const auto& [name, mask] : p.masks) EXPECT_EQ(loaded.params.masks.at(name), mask);
    EXPECT_TRUE(loaded.params.quant.quantized);
    EXPECT_EQ(loaded.params.quant.qf, 7);
    EXPECT_EQ(loaded.params.quant.bits, 8);
}

TEST(Checkpoint, UnquantizedRoundTrip) {
    AegruParams p = init_params({4, 3, 3, 3}, 5);
    const std::string path = temp_path("plain.aegw");
    save_checkpoint(p, 20, 5, path);
    Checkpoint loaded = load_checkpoint(path);
    EXPECT_FALSE(loaded.params.quant.quantized);
    EXPECT_TRUE(loaded.params.masks.empty());
    EXPECT_EQ(loaded.params.fc_up.w, p.fc_up.w);
}

TEST(Checkpoint, SavingTwiceIsByteIdentical) {
    AegruParams p = interesting_params();
    const std::string a = temp_path("dup_a.aegw");
    const std::string b = temp_path("dup_b.aegw");
    save_checkpoint(p, 20, 5, a);
    save_checkpoint(p, 20, 5, b);
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    const std::string ca((std::istreambuf_iterator<char>(fa)), {});
    const std::string cb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(ca, cb);
    EXPECT_FALSE(ca.empty());
}

TEST(Checkpoint, BadMagicAndVersion) {
    const std::string path = temp_path("junk.aegw");
    std::ofstream(path, std::ios::binary) << "NOPEnope";
    EXPECT_THROW(load_checkpoint(path), FormatError);

    AegruParams p = init_params({4, 3, 3, 3}, 5);
    const std::string vpath = temp_path("version.aegw");
    save_checkpoint(p, 20, 5, vpath);
    std::fstream fs(vpath, std::ios::binary | std::ios::in | std::ios::out);
    fs.seekp(4);
    const char nine = 9;
    fs.write(&nine, 1);
    fs.close();
    try {
        load_checkpoint(vpath);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
}

TEST(Checkpoint, TruncationDetected) {
    AegruParams p = init_params({4, 3, 3, 3}, 5);
    const std::string path = temp_path("short.aegw");
    save_checkpoint(p, 20, 5, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(Checkpoint, MissingTensorDetected) {
    // Truncating the tensor count makes a later tensor "missing".
    AegruParams p = init_params({4, 3, 3, 3}, 5);
    const std::string path = temp_path("missing.aegw");
    save_checkpoint(p, 20, 5, path);
    // tensor count lives after magic(4) + version(4) + 6 u32 config words
    std::fstream fs(path, std::ios::binary | std::ios::in | std::ios::out);
    fs.seekp(32);
    const char fewer = 25;
    fs.write(&fewer, 1);
    fs.close();
    EXPECT_THROW(load_checkpoint(path), FormatError);
}
