#pragma once

// "IORD" dataset files: header, then one checksummed record per sample.

#include "iorm/datagen.hpp"
#include "iorm/io.hpp"

namespace iorm {

inline constexpr std::uint16_t kDatasetVersion = 1;

inline constexpr std::uint8_t kOutputOnlyFlag = 0x80;

struct DatasetHeader {
    DatasetKind kind = DatasetKind::CD25_SYNTH;
    std::uint32_t count = 0;
    std::uint16_t image_size = 0;
    bool output_only = false; // records carry no input planes
};

inline void encode_header(ByteWriter& w, const DatasetHeader& h) {
    w.str("IORD");
    w.u16(kDatasetVersion);
    w.u8(static_cast<std::uint8_t>(static_cast<std::uint8_t>(h.kind) | (h.output_only ? kOutputOnlyFlag : 0)));
    w.u32(h.count);
    w.u16(h.image_size);
}

inline void encode_record(ByteWriter& w, const PairSample& s, std::size_t image_size, bool output_only) {
    const std::size_t plane = 3 * image_size * image_size;
    if (s.output_image.size() != plane || (!output_only && s.input_image.size() != plane))
        throw ContractError("sample image extents disagree with dataset image size " + std::to_string(image_size));
    if (output_only && s.has_input()) throw ContractError("output-only dataset given a sample with an input image");
    const std::size_t start = w.size();
    w.u64(s.seed);
    w.u8(s.label);
    w.u16(s.category_in);
    w.u16(s.category_out);
    for (float v : s.input_image) w.f32(v);
    for (float v : s.output_image) w.f32(v);
    w.u32(w.crc_since(start));
}

inline Bytes encode_dataset(DatasetKind kind, std::size_t image_size, const std::vector<PairSample>& samples) {
    const bool output_only = !samples.empty() && !samples.front().has_input();
    ByteWriter w;
    encode_header(w, {kind, static_cast<std::uint32_t>(samples.size()), static_cast<std::uint16_t>(image_size),
                      output_only});
    for (const auto& s : samples) encode_record(w, s, image_size, output_only);
    return w.take();
}

/// Sequential decoder over an in-memory dataset file.
class DatasetReader {
public:
    explicit DatasetReader(Bytes bytes, std::string name = "dataset") : bytes_(std::move(bytes)), r_(bytes_, name) {
        if (r_.str(4) != "IORD") throw FormatError(name + ": bad magic (expected IORD)");
        const auto version = r_.u16();
        if (version != kDatasetVersion)
            throw FormatError(name + ": unsupported version " + std::to_string(version));
        auto kind = r_.u8();
        header_.output_only = kind & kOutputOnlyFlag;
        kind &= static_cast<std::uint8_t>(~kOutputOnlyFlag);
        if (kind > 1) throw FormatError(name + ": unknown dataset kind " + std::to_string(kind));
        header_.kind = static_cast<DatasetKind>(kind);
        header_.count = r_.u32();
        header_.image_size = r_.u16();
        const std::size_t plane = 3 * std::size_t{header_.image_size} * header_.image_size;
        const std::size_t record = 8 + 1 + 2 + 2 + (header_.output_only ? 1 : 2) * plane * 4 + 4;
        if (r_.remaining() / record < header_.count)
            throw FormatError(name + ": truncated (header promises " + std::to_string(header_.count) + " records)");
    }

    const DatasetHeader& header() const { return header_; }

    /// Decodes the next record into `out`; false once all records are read.
    bool next(PairSample& out) {
        if (index_ == header_.count) {
            if (r_.remaining() != 0) throw FormatError("dataset: trailing bytes after last record");
            return false;
        }
        const std::size_t plane = 3 * std::size_t{header_.image_size} * header_.image_size;
        const std::size_t start = r_.pos();
        const std::size_t planes = header_.output_only ? 1 : 2;
        const std::size_t body = 8 + 1 + 2 + 2 + planes * plane * 4;
        if (r_.remaining() < body + 4)
            throw FormatError("dataset: truncated at record " + std::to_string(index_));
        PairSample s;
        s.image_size = header_.image_size;
        s.seed = r_.u64();
        s.label = r_.u8();
        s.category_in = r_.u16();
        s.category_out = r_.u16();
        if (!header_.output_only) s.input_image.resize(plane);
        s.output_image.resize(plane);
        for (auto& v : s.input_image) v = r_.f32();
        for (auto& v : s.output_image) v = r_.f32();
        const std::uint32_t want = r_.crc_between(start, r_.pos());
        const std::uint32_t got = r_.u32();
        if (want != got) throw ChecksumError("dataset: checksum mismatch in record " + std::to_string(index_));
        if (s.label > 1) throw FormatError("dataset: label out of range in record " + std::to_string(index_));
        ++index_;
        out = std::move(s);
        return true;
    }

private:
    Bytes bytes_;
    ByteReader r_;
    DatasetHeader header_;
    std::size_t index_ = 0;
};

struct LoadedDataset {
    DatasetHeader header;
    std::vector<PairSample> samples;
};

inline LoadedDataset decode_dataset(Bytes bytes, const std::string& name = "dataset") {
    DatasetReader reader(std::move(bytes), name);
    LoadedDataset out{reader.header(), {}};
    out.samples.reserve(out.header.count);
    PairSample s;
    while (reader.next(s)) out.samples.push_back(std::move(s));
    return out;
}

inline LoadedDataset read_dataset(const std::filesystem::path& path) {
    return decode_dataset(read_file(path), path.string());
}

inline void write_samples(const std::filesystem::path& path, DatasetKind kind, std::size_t image_size,
                          const std::vector<PairSample>& samples) {
    write_file(path, encode_dataset(kind, image_size, samples));
}

/// Generates the full corpus described by `spec` and writes it in index order.
inline void write_dataset(const DatasetSpec& spec, const std::filesystem::path& path) {
    spec.validate();
    write_samples(path, spec.kind, spec.image_size, generate_range(spec, 0, spec.num_samples));
}

} // namespace iorm
