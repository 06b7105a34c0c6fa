#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mlc/data.hpp"

namespace fs = std::filesystem;
using mlc::LabelVocabulary;
using mlc::SyntheticSpec;
using mlc::Tensor;

namespace {

fs::path tmp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "mlc_data_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.num_labels = 4;
    spec.train_count = 6;
    spec.test_count = 3;
    spec.image_size = 32;
    spec.min_glyphs = 1;
    spec.max_glyphs = 2;
    spec.seed = 42;
    return spec;
}

}  // namespace

TEST(Vocab, AddLookupRoundtrip) {
    LabelVocabulary v;
    v.add("apple");
    v.add("beet");
    EXPECT_EQ(v.size(), 2u);
    EXPECT_EQ(v.index_of("beet"), 1u);
    EXPECT_TRUE(v.contains("apple"));
    EXPECT_FALSE(v.contains("corn"));
    EXPECT_EQ(v.name(0), "apple");
    EXPECT_THROW(v.index_of("corn"), mlc::UnknownLabel);
    EXPECT_THROW(v.add("apple"), mlc::InvalidSpec);
    EXPECT_THROW(v.add(""), mlc::InvalidSpec);

    const auto text = v.to_text();
    auto v2 = LabelVocabulary::from_text(text);
    EXPECT_EQ(v2.names(), v.names());

    auto v3 = LabelVocabulary::from_names({"x", "y", "z"});
    EXPECT_EQ(v3.size(), 3u);
}

TEST(Manifest, ParsesRowsAndQuotedLabels) {
    std::istringstream is(
        "path,split,labels\n"
        "train/a.png,train,\"apple;beet\"\n"
        "test/b.png,test,apple\n"
        "train/c.png,train,\"\"\n");
    auto rows = mlc::parse_manifest(is);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].path, "train/a.png");
    EXPECT_EQ(rows[0].split, "train");
    EXPECT_EQ(rows[0].labels, (std::vector<std::string>{"apple", "beet"}));
    EXPECT_EQ(rows[1].labels, (std::vector<std::string>{"apple"}));
    EXPECT_TRUE(rows[2].labels.empty());
}

TEST(Manifest, HandlesCrlfAndBlankLines) {
    std::istringstream is(
        "path,split,labels\r\n"
        "train/a.png,train,apple\r\n"
        "\r\n"
        "test/b.png,test,beet\r\n");
    auto rows = mlc::parse_manifest(is);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].path, "test/b.png");
}

TEST(Manifest, RejectsMalformedInput) {
    {
        std::istringstream is("");
        EXPECT_THROW(mlc::parse_manifest(is), mlc::InvalidSpec);
    }
    {
        std::istringstream is("path,labels\n");
        EXPECT_THROW(mlc::parse_manifest(is), mlc::InvalidSpec);
    }
    {
        std::istringstream is("path,split,labels\na.png,train\n");
        EXPECT_THROW(mlc::parse_manifest(is), mlc::InvalidSpec);
    }
    {
        std::istringstream is("path,split,labels\na.png,validation,x\n");
        EXPECT_THROW(mlc::parse_manifest(is), mlc::InvalidSpec);
    }
    {
        std::istringstream is("path,split,labels\n,train,x\n");
        EXPECT_THROW(mlc::parse_manifest(is), mlc::InvalidSpec);
    }
    {
        std::istringstream is("path,split,labels\na.png,train,\"unterminated\n");
        EXPECT_THROW(mlc::parse_manifest(is), mlc::InvalidSpec);
    }
    {
        std::istringstream is(
            "path,split,labels\na.png,train,x\na.png,train,y\n");
        EXPECT_THROW(mlc::parse_manifest(is), mlc::InvalidSpec);
    }
    {
        std::istringstream is(
            "path,split,labels\na.png,train,x\na.png,test,x\n");
        EXPECT_THROW(mlc::parse_manifest(is), mlc::DuplicateAcrossSplits);
    }
    EXPECT_THROW(mlc::parse_manifest_file("/no/such/manifest.csv"), mlc::DataError);
}

TEST(GlyphTable, DistinctColorsAndNames) {
    auto table = mlc::default_glyph_table(8);
    ASSERT_EQ(table.size(), 8u);
    EXPECT_EQ(table[0].label, "disk_0");
    EXPECT_EQ(table[1].label, "square_1");
    EXPECT_EQ(table[2].label, "triangle_2");
    EXPECT_EQ(table[3].label, "ring_3");
    EXPECT_EQ(table[4].label, "disk_4");
    std::set<std::array<float, 3>> colors;
    for (const auto& g : table) colors.insert(g.color);
    EXPECT_EQ(colors.size(), table.size());
    EXPECT_THROW(mlc::default_glyph_table(0), mlc::InvalidSpec);
}

TEST(Synthetic, SpecValidation) {
    auto spec = small_spec();
    EXPECT_NO_THROW(spec.validate());
    spec.image_size = 8;
    EXPECT_THROW(spec.validate(), mlc::InvalidSpec);
    spec = small_spec();
    spec.max_glyphs = 5;  // more than num_labels
    EXPECT_THROW(spec.validate(), mlc::InvalidSpec);
    spec = small_spec();
    spec.min_glyphs = 3;
    spec.max_glyphs = 2;
    EXPECT_THROW(spec.validate(), mlc::InvalidSpec);
}

TEST(Synthetic, DeterministicAndSplitDisjoint) {
    const auto spec = small_spec();
    auto a = mlc::generate_synthetic(spec);
    auto b = mlc::generate_synthetic(spec);
    ASSERT_EQ(a.train.size(), spec.train_count);
    ASSERT_EQ(a.test.size(), spec.test_count);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(a.train[i].image.data(), b.train[i].image.data());
        EXPECT_EQ(a.train[i].target, b.train[i].target);
        EXPECT_EQ(a.train[i].source_id, "train/img_" + std::to_string(i));
    }
    // same index in train and test comes from different streams
    EXPECT_NE(a.train[0].image.data(), a.test[0].image.data());

    SyntheticSpec other = spec;
    other.seed = 43;
    auto c = mlc::generate_synthetic(other);
    EXPECT_NE(a.train[0].image.data(), c.train[0].image.data());
}

TEST(Synthetic, TargetsWithinGlyphBounds) {
    const auto spec = small_spec();
    auto ds = mlc::generate_synthetic(spec);
    for (const auto& ex : ds.train) {
        ASSERT_EQ(ex.target.size(), spec.num_labels);
        std::size_t count = 0;
        for (auto t : ex.target) {
            EXPECT_LE(t, 1);
            count += t;
        }
        EXPECT_GE(count, spec.min_glyphs);
        EXPECT_LE(count, spec.max_glyphs);
    }
}

TEST(Synthetic, EveryGlyphLeavesVisiblePixels) {
    const auto spec = small_spec();
    const auto table = mlc::default_glyph_table(spec.num_labels);
    auto ds = mlc::generate_synthetic(spec);
    for (const auto& ex : ds.train) {
        for (std::size_t k = 0; k < spec.num_labels; ++k) {
            if (!ex.target[k]) continue;
            std::size_t hits = 0;
            const auto& c = table[k].color;
            const auto& v = ex.image.data();
            for (std::size_t i = 0; i + 2 < v.size(); i += 3)
                if (v[i] == c[0] && v[i + 1] == c[1] && v[i + 2] == c[2]) ++hits;
            EXPECT_GE(hits, 8u) << "label " << k << " in " << ex.source_id;
        }
    }
}

TEST(Synthetic, WriteAndReloadRoundtrip) {
    const auto dir = tmp_dir("roundtrip");
    const auto spec = small_spec();
    auto ds = mlc::write_synthetic_dataset(spec, dir.string());
    EXPECT_TRUE(fs::exists(dir / "manifest.csv"));
    EXPECT_TRUE(fs::exists(dir / "vocab.txt"));
    EXPECT_TRUE(fs::exists(dir / "train" / "img_0.png"));
    EXPECT_TRUE(fs::exists(dir / "test" / "img_2.png"));

    auto vocab = LabelVocabulary::load((dir / "vocab.txt").string());
    EXPECT_EQ(vocab.names(), ds.vocab.names());

    auto train = mlc::load_manifest((dir / "manifest.csv").string(), dir.string(), vocab,
                                    "train");
    ASSERT_EQ(train.size(), spec.train_count);
    for (std::size_t i = 0; i < train.size(); ++i) {
        EXPECT_EQ(train[i].target, ds.train[i].target);
        // PNG stores 8-bit channels and the canvas was born 8-bit quantized
        EXPECT_EQ(train[i].image.data(), ds.train[i].image.data());
    }

    auto test = mlc::load_manifest((dir / "manifest.csv").string(), dir.string(), vocab,
                                   "test");
    EXPECT_EQ(test.size(), spec.test_count);

    EXPECT_THROW(mlc::load_manifest((dir / "manifest.csv").string(), dir.string(), vocab,
                                    "validation"),
                 mlc::EmptyDataset);
}

TEST(Images, MissingFileThrows) {
    EXPECT_THROW(mlc::read_png("/no/such/file.png"), mlc::MissingImage);
}

TEST(Images, ResizeIdentityAndAverage) {
    auto img = Tensor<float>::from_data({2, 2, 1}, {1.0f, 2.0f, 3.0f, 4.0f});
    auto same = mlc::bilinear_resize(img, 2, 2);
    EXPECT_EQ(same.data(), img.data());

    // downscale to a single pixel averages the four sources
    auto one = mlc::bilinear_resize(img, 1, 1);
    ASSERT_EQ(one.shape(), (std::vector<std::size_t>{1, 1, 1}));
    EXPECT_NEAR(one.data()[0], 2.5f, 1e-6f);

    // constant image stays constant at any size
    auto flat = Tensor<float>::full({3, 5, 2}, 0.75f);
    auto up = mlc::bilinear_resize(flat, 7, 9);
    for (float v : up.data()) EXPECT_NEAR(v, 0.75f, 1e-6f);
}

TEST(Images, FlipTranslateCropOracles) {
    auto img = Tensor<float>::from_data({2, 3, 1}, {1, 2, 3, 4, 5, 6});
    auto h = mlc::hflip(img);
    EXPECT_EQ(h.data(), (std::vector<float>{3, 2, 1, 6, 5, 4}));
    auto v = mlc::vflip(img);
    EXPECT_EQ(v.data(), (std::vector<float>{4, 5, 6, 1, 2, 3}));
    EXPECT_EQ(mlc::hflip(h).data(), img.data());
    EXPECT_EQ(mlc::vflip(v).data(), img.data());

    auto t = mlc::translate(img, 1, -1);
    EXPECT_EQ(t.data(), (std::vector<float>{0, 0, 0, 2, 3, 0}));
    auto t0 = mlc::translate(img, 0, 0);
    EXPECT_EQ(t0.data(), img.data());

    auto c = mlc::crop_zero_pad(img, 0, 1, 2, 2);
    EXPECT_EQ(c.shape(), img.shape());
    EXPECT_EQ(c.data(), (std::vector<float>{0, 2, 3, 0, 5, 6}));
    EXPECT_THROW(mlc::crop_zero_pad(img, 1, 0, 2, 2), mlc::ShapeMismatch);
}

TEST(Augment, DeterministicGivenStream) {
    auto ds = mlc::generate_synthetic(small_spec());
    const auto& img = ds.train[0].image;
    mlc::Rng r1(123), r2(123), r3(124);
    auto a = mlc::augment(img, r1);
    auto b = mlc::augment(img, r2);
    EXPECT_EQ(a.data(), b.data());
    EXPECT_EQ(a.shape(), img.shape());
    bool any_diff = false;
    for (int i = 0; i < 8 && !any_diff; ++i) {
        auto c = mlc::augment(img, r3);
        any_diff = c.data() != a.data();
    }
    EXPECT_TRUE(any_diff);
}

TEST(Augment, TinyImagePassesThrough) {
    auto img = Tensor<float>::from_data({1, 1, 3}, {0.1f, 0.2f, 0.3f});
    mlc::Rng rng(9);
    for (int i = 0; i < 10; ++i) {
        auto out = mlc::augment(img, rng);
        EXPECT_EQ(out.shape(), img.shape());
        EXPECT_EQ(out.data(), img.data());
    }
    EXPECT_THROW(mlc::augment(Tensor<float>::zeros({2, 2}), rng), mlc::ShapeMismatch);
}

TEST(Batching, StacksImagesAndTargets) {
    auto ds = mlc::generate_synthetic(small_spec());
    auto [batch, targets] = mlc::make_batch(ds.train, {0, 2, 4});
    EXPECT_EQ(batch.shape(), (std::vector<std::size_t>{3, 32, 32, 3}));
    EXPECT_EQ(targets.size(), 3u * 4u);
    // row 1 of the batch is example 2 verbatim
    const auto& src = ds.train[2].image.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        EXPECT_EQ(batch.data()[src.size() + i], src[i]);
    for (std::size_t k = 0; k < 4; ++k)
        EXPECT_EQ(targets[4 + k], ds.train[2].target[k]);

    EXPECT_THROW(mlc::make_batch(ds.train, {}), mlc::EmptyInput);

    auto mixed = ds.train;
    mixed[1].image = Tensor<float>::zeros({16, 16, 3});
    EXPECT_THROW(mlc::make_batch(mixed, {0, 1}), mlc::ShapeMismatch);
}

TEST(Batching, AugmentStreamAppliesPerExample) {
    auto ds = mlc::generate_synthetic(small_spec());
    mlc::Rng r1(55), r2(55);
    auto [a, ta] = mlc::make_batch(ds.train, {0, 1}, &r1);
    auto [b, tb] = mlc::make_batch(ds.train, {0, 1}, &r2);
    EXPECT_EQ(a.data(), b.data());
    EXPECT_EQ(ta, tb);
}
