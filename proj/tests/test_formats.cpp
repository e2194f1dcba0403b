#include "iorm/dataset_file.hpp"
#include "iorm/training.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace iorm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& leaf) {
    const auto dir = fs::temp_directory_path() / ("iorm_formats_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::create_directories(dir);
    return dir / leaf;
}

DatasetSpec small_spec(DatasetKind kind, std::size_t n) {
    DatasetSpec s;
    s.kind = kind;
    s.num_samples = n;
    s.master_seed = 9;
    return s;
}

std::size_t header_bytes() { return 4 + 2 + 1 + 4 + 2; }
std::size_t record_bytes(std::size_t size, std::size_t planes) { return 8 + 1 + 2 + 2 + planes * 3 * size * size * 4 + 4; }

} // namespace

TEST(DatasetFile, RoundTripHundredSamplesBitExact) {
    const auto spec = small_spec(DatasetKind::SEG_SYNTH, 100);
    const auto samples = generate_range(spec, 0, 100);
    const auto path = scratch("seg100.iord");
    write_samples(path, spec.kind, spec.image_size, samples);
    const auto loaded = read_dataset(path);
    EXPECT_EQ(loaded.header.count, 100u);
    EXPECT_EQ(loaded.header.kind, DatasetKind::SEG_SYNTH);
    EXPECT_FALSE(loaded.header.output_only);
    ASSERT_EQ(loaded.samples.size(), samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) EXPECT_EQ(loaded.samples[k], samples[k]) << k;
    EXPECT_EQ(encode_dataset(spec.kind, spec.image_size, loaded.samples), read_file(path));
}

TEST(DatasetFile, FileSizeMatchesLayout) {
    const auto spec = small_spec(DatasetKind::CD25_SYNTH, 3);
    const auto bytes = encode_dataset(spec.kind, 32, generate_range(spec, 0, 3));
    EXPECT_EQ(bytes.size(), header_bytes() + 3 * record_bytes(32, 2));
}

TEST(DatasetFile, EveryPayloadByteIsCovered) {
    const auto spec = small_spec(DatasetKind::CD25_SYNTH, 4);
    const auto clean = encode_dataset(spec.kind, 32, generate_range(spec, 0, 4));
    const std::size_t rec = record_bytes(32, 2);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t off : {std::size_t{0}, std::size_t{8}, std::size_t{13}, rec / 2, rec - 5}) {
            auto bad = clean;
            bad[header_bytes() + r * rec + off] ^= 0x10;
            try {
                decode_dataset(bad);
                ADD_FAILURE() << "record " << r << " offset " << off << " not detected";
            } catch (const ChecksumError& e) {
                EXPECT_NE(std::string(e.what()).find("record " + std::to_string(r)), std::string::npos) << e.what();
            }
        }
}

TEST(DatasetFile, FooterCorruptionIsChecksumError) {
    const auto spec = small_spec(DatasetKind::CD25_SYNTH, 2);
    auto bytes = encode_dataset(spec.kind, 32, generate_range(spec, 0, 2));
    bytes.back() ^= 0x01;
    EXPECT_THROW(decode_dataset(bytes), ChecksumError);
}

TEST(DatasetFile, EmptyDatasetIsValid) {
    const auto bytes = encode_dataset(DatasetKind::CD25_SYNTH, 32, {});
    EXPECT_EQ(bytes.size(), header_bytes());
    const auto loaded = decode_dataset(bytes);
    EXPECT_EQ(loaded.header.count, 0u);
    EXPECT_TRUE(loaded.samples.empty());
}

TEST(DatasetFile, TruncationIsFormatError) {
    const auto spec = small_spec(DatasetKind::CD25_SYNTH, 2);
    const auto clean = encode_dataset(spec.kind, 32, generate_range(spec, 0, 2));
    for (std::size_t cut : {std::size_t{3}, header_bytes() - 1, header_bytes() + 10, clean.size() - 1}) {
        const Bytes part(clean.begin(), clean.begin() + static_cast<long>(cut));
        EXPECT_THROW(decode_dataset(part), FormatError) << cut;
    }
}

TEST(DatasetFile, TrailingBytesAreFormatError) {
    auto bytes = encode_dataset(DatasetKind::CD25_SYNTH, 32, generate_range(small_spec(DatasetKind::CD25_SYNTH, 1), 0, 1));
    bytes.push_back(0);
    EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(DatasetFile, BadMagicVersionAndKind) {
    const auto clean = encode_dataset(DatasetKind::CD25_SYNTH, 32, {});
    auto magic = clean;
    magic[0] = 'X';
    EXPECT_THROW(decode_dataset(magic), FormatError);
    auto version = clean;
    version[4] = 7;
    EXPECT_THROW(decode_dataset(version), FormatError);
    auto kind = clean;
    kind[6] = 5;
    EXPECT_THROW(decode_dataset(kind), FormatError);
}

TEST(DatasetFile, OutputOnlyRoundTrip) {
    const auto spec = small_spec(DatasetKind::CD25_SYNTH, 6);
    const auto samples = strip_inputs(generate_range(spec, 0, 6));
    const auto bytes = encode_dataset(spec.kind, 32, samples);
    EXPECT_EQ(bytes[6], static_cast<std::uint8_t>(kOutputOnlyFlag | 0));
    EXPECT_EQ(bytes.size(), header_bytes() + 6 * record_bytes(32, 1));
    const auto loaded = decode_dataset(bytes);
    EXPECT_TRUE(loaded.header.output_only);
    ASSERT_EQ(loaded.samples.size(), 6u);
    for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_FALSE(loaded.samples[k].has_input());
        EXPECT_EQ(loaded.samples[k], samples[k]);
    }
}

TEST(DatasetFile, MixedArityRejected) {
    const auto spec = small_spec(DatasetKind::CD25_SYNTH, 2);
    auto samples = generate_range(spec, 0, 2);
    samples[0].input_image.clear();
    EXPECT_THROW(encode_dataset(spec.kind, 32, samples), ContractError);
    EXPECT_THROW(encode_dataset(spec.kind, 16, generate_range(spec, 0, 1)), ContractError);
}

TEST(DatasetFile, WriteDatasetIsDeterministic) {
    const auto spec = small_spec(DatasetKind::SEG_SYNTH, 20);
    const auto a = scratch("a.iord"), b = scratch("b.iord");
    write_dataset(spec, a);
    write_dataset(spec, b);
    EXPECT_EQ(read_file(a), read_file(b));
}

namespace {

Checkpoint sample_checkpoint() {
    auto cfg = default_model_config(Variant::IO_V8);
    cfg.seed = 5;
    const RewardModel<float> m(cfg);
    auto c = model_checkpoint(m);
    c.tensors.push_back({"state/step", {1}, {42.0f}});
    c.tensors.push_back({"metrics/history", {2, 3}, {0.5f, 0.6f, 0.7f, 0.1f, 0.2f, 0.3f}});
    c.tensors.push_back({"state/empty", {0}, {}});
    return c;
}

} // namespace

TEST(CheckpointFile, SaveLoadSaveIsByteIdentical) {
    const auto c = sample_checkpoint();
    const auto p1 = scratch("c1.iock"), p2 = scratch("c2.iock");
    c.save(p1);
    const auto back = Checkpoint::load(p1);
    EXPECT_EQ(back.config_hash, c.config_hash);
    ASSERT_EQ(back.tensors.size(), c.tensors.size());
    for (std::size_t k = 0; k < c.tensors.size(); ++k) EXPECT_EQ(back.tensors[k], c.tensors[k]) << c.tensors[k].name;
    back.save(p2);
    EXPECT_EQ(read_file(p1), read_file(p2));
}

TEST(CheckpointFile, ParametersRestoreExactly) {
    auto cfg = default_model_config(Variant::OUTPUT_BASE);
    cfg.seed = 6;
    const RewardModel<float> src(cfg);
    RewardModel<float> dst(cfg);
    for (auto& p : dst.parameters()) {
        Tensor<float> t = p.tensor;
        std::ranges::fill(t.data(), 0.25f);
    }
    load_parameters(dst, Checkpoint::decode(model_checkpoint(src).encode()));
    const auto a = src.parameters(), b = dst.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k)
        EXPECT_TRUE(std::ranges::equal(a[k].tensor.data(), b[k].tensor.data())) << a[k].name;
}

TEST(CheckpointFile, ConfigMismatchRejected) {
    const auto c = model_checkpoint(RewardModel<float>(default_model_config(Variant::OUTPUT_BASE)));
    RewardModel<float> io(default_model_config(Variant::IO_V8));
    EXPECT_THROW(load_parameters(io, c), ConfigError);
}

TEST(CheckpointFile, AnyFlippedByteIsChecksumError) {
    const auto clean = sample_checkpoint().encode();
    for (std::size_t off : {std::size_t{0}, std::size_t{5}, std::size_t{20}, clean.size() / 3, clean.size() / 2,
                            clean.size() - 5, clean.size() - 1}) {
        auto bad = clean;
        bad[off] ^= 0x40;
        EXPECT_THROW(Checkpoint::decode(bad), ChecksumError) << off;
    }
}

TEST(CheckpointFile, TruncationDetected) {
    const auto clean = sample_checkpoint().encode();
    EXPECT_THROW(Checkpoint::decode(Bytes(clean.begin(), clean.begin() + 10)), FormatError);
    // a cut also breaks the footer, which is checked first
    EXPECT_THROW(Checkpoint::decode(Bytes(clean.begin(), clean.end() - 8)), ChecksumError);
}

TEST(CheckpointFile, StructuralErrorsBehindValidFooter) {
    auto reseal = [](Bytes b) {
        b.resize(b.size() - 4);
        const auto crc = crc32_of(b.data(), b.size());
        for (int k = 0; k < 4; ++k) b.push_back(static_cast<std::uint8_t>(crc >> (8 * k)));
        return b;
    };
    const auto clean = sample_checkpoint().encode();
    EXPECT_NO_THROW(Checkpoint::decode(reseal(clean)));
    auto magic = clean;
    magic[1] = 'Z';
    EXPECT_THROW(Checkpoint::decode(reseal(magic)), FormatError);
    auto version = clean;
    version[4] = 3;
    EXPECT_THROW(Checkpoint::decode(reseal(version)), FormatError);
}

TEST(CheckpointFile, MissingTensorNamed) {
    const auto c = sample_checkpoint();
    try {
        c.at("adam.m/nothing");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("adam.m/nothing"), std::string::npos);
    }
}

TEST(CheckpointFile, ExtentMismatchRejectedOnEncode) {
    Checkpoint c;
    c.tensors.push_back({"bad", {2, 2}, {1.0f}});
    EXPECT_THROW(c.encode(), ContractError);
}

TEST(DatasetFile, InflatedRecordCountIsFormatError) {
    auto bytes = encode_dataset(DatasetKind::CD25_SYNTH, 32, generate_range(small_spec(DatasetKind::CD25_SYNTH, 2), 0, 2));
    for (int k = 0; k < 4; ++k) bytes[7 + k] = 0xFF; // count field
    EXPECT_THROW(decode_dataset(bytes), FormatError);
}
