#include "sdc/data.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "sdc/rng.hpp"
#include "testutil.hpp"

using namespace sdc;

namespace {

std::string write_bytes(const std::string& dir, const std::string& name,
                        const std::vector<unsigned char>& bytes) {
    const std::string path = dir + "/" + name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    return path;
}

}  // namespace

TEST(Idx, MinimalFile) {
    const std::string dir = testutil::scratch_dir("idx_minimal");
    const auto path = write_bytes(dir, "v.idx", {0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1});
    IdxArray a = read_idx(path);
    EXPECT_EQ(a.dims, (std::vector<int>{3}));
    EXPECT_EQ(a.data, (std::vector<std::uint8_t>{7, 2, 1}));
}

TEST(Idx, DistinctErrors) {
    const std::string dir = testutil::scratch_dir("idx_errors");
    EXPECT_THROW(read_idx(write_bytes(dir, "magic.idx", {1, 0, 8, 1, 0, 0, 0, 1, 5})),
                 idx_bad_magic);
    EXPECT_THROW(read_idx(write_bytes(dir, "type.idx", {0, 0, 0x0D, 1, 0, 0, 0, 1, 5})),
                 idx_unsupported_type);
    // payload one byte short: error names expected and actual sizes
    try {
        read_idx(write_bytes(dir, "short.idx", {0, 0, 8, 1, 0, 0, 0, 3, 7, 2}));
        FAIL() << "expected idx_truncated";
    } catch (const idx_truncated& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2"), std::string::npos);
        EXPECT_NE(msg.find("3"), std::string::npos);
    }
    EXPECT_THROW(read_idx(write_bytes(dir, "husk.idx", {0, 0})), idx_truncated);
    EXPECT_THROW(read_idx(dir + "/does_not_exist.idx"), data_error);
}

TEST(Idx, WriteReadRoundTripProperty) {
    const std::string dir = testutil::scratch_dir("idx_roundtrip");
    RngStream rng(5, "idx");
    for (int trial = 0; trial < 20; ++trial) {
        IdxArray a;
        const int rank = 1 + static_cast<int>(rng.below(3));
        std::size_t n = 1;
        for (int d = 0; d < rank; ++d) {
            a.dims.push_back(1 + static_cast<int>(rng.below(6)));
            n *= static_cast<std::size_t>(a.dims.back());
        }
        a.data.resize(n);
        for (auto& b : a.data) b = static_cast<std::uint8_t>(rng.below(256));
        const std::string path = dir + "/t" + std::to_string(trial) + ".idx";
        write_idx(path, a);
        IdxArray back = read_idx(path);
        ASSERT_EQ(back.dims, a.dims);
        ASSERT_EQ(back.data, a.data);
    }
}

TEST(Dataset, PixelScalingAndShape) {
    const std::string dir = testutil::scratch_dir("dataset_scale");
    IdxArray imgs;
    imgs.dims = {2, 2, 2};
    imgs.data = {0, 255, 128, 51, 255, 0, 0, 255};
    write_idx(dir + "/imgs.idx", imgs);
    IdxArray labels;
    labels.dims = {2};
    labels.data = {3, 9};
    write_idx(dir + "/labels.idx", labels);

    ImageDataset ds = load_dataset(dir + "/imgs.idx", dir + "/labels.idx");
    EXPECT_EQ(ds.images.shape(), (Shape{2, 1, 2, 2}));
    EXPECT_DOUBLE_EQ(ds.images.values()[0], 0.0);
    EXPECT_DOUBLE_EQ(ds.images.values()[1], 1.0);
    EXPECT_DOUBLE_EQ(ds.images.values()[3], 51.0 / 255.0);
    EXPECT_EQ(ds.labels, (std::vector<int>{3, 9}));

    // missing labels path: unlabeled dataset for the OOD role
    ImageDataset ood = load_dataset(dir + "/imgs.idx", std::nullopt, SplitTag::Ood);
    EXPECT_FALSE(ood.labeled());

    // count mismatch
    IdxArray bad_labels;
    bad_labels.dims = {3};
    bad_labels.data = {1, 2, 3};
    write_idx(dir + "/bad_labels.idx", bad_labels);
    EXPECT_THROW(load_dataset(dir + "/imgs.idx", dir + "/bad_labels.idx"), data_error);

    // label outside [0, K)
    IdxArray big_labels;
    big_labels.dims = {2};
    big_labels.data = {0, 10};
    write_idx(dir + "/big_labels.idx", big_labels);
    EXPECT_THROW(load_dataset(dir + "/imgs.idx", dir + "/big_labels.idx"), data_error);
}

TEST(Dataset, MnistShapes) {
    if (!testutil::mnist_available())
        GTEST_SKIP() << "MNIST not found under " << testutil::mnist_dir();
    IdxArray train = read_idx(testutil::mnist_dir() + "/train-images-idx3-ubyte");
    EXPECT_EQ(train.dims, (std::vector<int>{60000, 28, 28}));
    ImageDataset test = load_dataset(testutil::mnist_dir() + "/t10k-images-idx3-ubyte",
                                     testutil::mnist_dir() + "/t10k-labels-idx1-ubyte",
                                     SplitTag::Test);
    EXPECT_EQ(test.size(), 10000);
    EXPECT_EQ(test.labels.size(), 10000u);
}

TEST(Dataset, HeadLimit) {
    const std::string dir = testutil::scratch_dir("dataset_head");
    IdxArray imgs;
    imgs.dims = {4, 1, 2};
    imgs.data = {10, 20, 30, 40, 50, 60, 70, 80};
    write_idx(dir + "/imgs.idx", imgs);
    IdxArray labels;
    labels.dims = {4};
    labels.data = {0, 1, 2, 3};
    write_idx(dir + "/labels.idx", labels);
    ImageDataset ds = load_dataset(dir + "/imgs.idx", dir + "/labels.idx");
    ImageDataset head = dataset_head(ds, 2);
    EXPECT_EQ(head.size(), 2);
    EXPECT_EQ(head.labels, (std::vector<int>{0, 1}));
    EXPECT_DOUBLE_EQ(head.images.values()[3], 40.0 / 255.0);
    EXPECT_EQ(dataset_head(ds, 0).size(), 4);
    EXPECT_EQ(dataset_head(ds, 99).size(), 4);
}

TEST(Checkpoint, RoundTripBitIdentical) {
    const std::string dir = testutil::scratch_dir("ckpt_roundtrip");
    auto [specs, state] = build_lenet5(10, 123);
    MaskSet masks = build_mask_set(specs, 10, 123);
    const std::string path = dir + "/model.sdc";
    save_checkpoint(path, specs, state, &masks);

    auto [loaded, loaded_masks] = load_checkpoint(path, specs);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (!specs[i].has_params()) continue;
        EXPECT_EQ(loaded.weights[i].values(), state.weights[i].values());
        EXPECT_EQ(loaded.biases[i].values(), state.biases[i].values());
    }
    ASSERT_TRUE(loaded_masks.has_value());
    EXPECT_EQ(loaded_masks->rho, 10);
    EXPECT_EQ(loaded_masks->seed, 123u);
    ASSERT_EQ(loaded_masks->entries.size(), masks.entries.size());
    for (std::size_t e = 0; e < masks.entries.size(); ++e) {
        EXPECT_EQ(loaded_masks->entries[e].layer_index, masks.entries[e].layer_index);
        for (int m = 0; m < 10; ++m) {
            EXPECT_EQ(loaded_masks->entries[e].masks.zero_positions[static_cast<std::size_t>(m)],
                      masks.entries[e].masks.zero_positions[static_cast<std::size_t>(m)]);
            EXPECT_EQ(loaded_masks->entries[e].masks.masks[static_cast<std::size_t>(m)].values(),
                      masks.entries[e].masks.masks[static_cast<std::size_t>(m)].values());
        }
    }

    // saving the loaded state again reproduces the same bytes
    const std::string path2 = dir + "/model2.sdc";
    save_checkpoint(path2, specs, loaded, &*loaded_masks);
    EXPECT_EQ(testutil::read_file(path), testutil::read_file(path2));
}

TEST(Checkpoint, WithoutMasks) {
    const std::string dir = testutil::scratch_dir("ckpt_nomask");
    auto [specs, state] = build_lenet5(10, 5);
    save_checkpoint(dir + "/m.sdc", specs, state);
    auto [loaded, masks] = load_checkpoint(dir + "/m.sdc", specs);
    EXPECT_FALSE(masks.has_value());
    EXPECT_EQ(loaded.weights[0].values(), state.weights[0].values());
}

TEST(Checkpoint, FormatErrors) {
    const std::string dir = testutil::scratch_dir("ckpt_errors");
    auto [specs, state] = build_lenet5(10, 9);
    const std::string path = dir + "/m.sdc";
    save_checkpoint(path, specs, state);

    // wrong magic
    {
        std::string bytes = testutil::read_file(path);
        bytes[3] = '2';  // version byte bumped
        std::ofstream(dir + "/bad_magic.sdc", std::ios::binary) << bytes;
        EXPECT_THROW(load_checkpoint(dir + "/bad_magic.sdc", specs), checkpoint_format_error);
    }
    // truncated record
    {
        std::string bytes = testutil::read_file(path);
        bytes.resize(bytes.size() / 2);
        std::ofstream(dir + "/trunc.sdc", std::ios::binary) << bytes;
        EXPECT_THROW(load_checkpoint(dir + "/trunc.sdc", specs), checkpoint_format_error);
    }
    // trailing garbage
    {
        std::string bytes = testutil::read_file(path) + "extra";
        std::ofstream(dir + "/trail.sdc", std::ios::binary) << bytes;
        EXPECT_THROW(load_checkpoint(dir + "/trail.sdc", specs), checkpoint_format_error);
    }
    // shape mismatch against a different spec chain
    EXPECT_THROW(load_checkpoint(path, lenet5_specs(7)), checkpoint_format_error);
}

TEST(Checkpoint, RestoresIdenticalSubnetworkOutputs) {
    const std::string dir = testutil::scratch_dir("ckpt_subnet");
    auto [specs, state] = build_lenet5(10, 321);
    MaskSet masks = build_mask_set(specs, 10, 321);
    RngStream rng(1, "input");
    Tensor input = testutil::random_tensor({2, 1, 28, 28}, rng, 0.0, 1.0);

    const std::string path = dir + "/m.sdc";
    save_checkpoint(path, specs, state, &masks);
    auto [loaded, loaded_masks] = load_checkpoint(path, specs);
    ASSERT_TRUE(loaded_masks.has_value());
    for (int m = 0; m < 10; ++m) {
        Tensor before = subnetwork_forward(specs, state, masks, m, input);
        Tensor after = subnetwork_forward(specs, loaded, *loaded_masks, m, input);
        EXPECT_EQ(before.values(), after.values()) << "split " << m;
    }
}
