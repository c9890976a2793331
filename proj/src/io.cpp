#include "tunet/io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <zlib.h>

#include "tunet/run_config.hpp"

namespace tunet {

namespace {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
    put_u8(out, static_cast<std::uint8_t>(v));
    put_u8(out, static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) put_u8(out, static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) put_u8(out, static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::string_view bytes, std::size_t pos, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[pos + static_cast<std::size_t>(i)]))
             << (8 * i);
    }
    return v;
}

// Bounds-checked little-endian cursor; errors carry the absolute byte offset.
class Reader {
public:
    Reader(std::string_view bytes, std::uint64_t base) : bytes_(bytes), base_(base) {}

    std::size_t pos() const { return pos_; }
    std::uint64_t offset() const { return base_ + pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) +
                                  " bytes, " + std::to_string(remaining()) + " available",
                              offset());
        }
    }
    std::uint64_t uint(int width, const char* what) {
        need(static_cast<std::size_t>(width), what);
        const auto v = get_le(bytes_, pos_, width);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string_view bytes_;
    std::uint64_t base_;
    std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) { return d == DType::Float32 ? 4 : 8; }

}  // namespace

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string() + " for reading");
    }
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failed for " + path.string());
    }
    return data;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

template <typename Scalar>
std::string encode_tensor(const Tensor<Scalar>& t) {
    if (t.rank() > 255) {
        throw DimensionError("encode_tensor: rank " + std::to_string(t.rank()) + " exceeds 255");
    }
    std::string out = "TNSR";
    put_u16(out, kTensorFileVersion);
    put_u8(out, static_cast<std::uint8_t>(dtype_of<Scalar>()));
    put_u8(out, static_cast<std::uint8_t>(t.rank()));
    for (Index d : t.shape()) {
        if (d > static_cast<Index>(UINT32_MAX)) {
            throw DimensionError("encode_tensor: dimension too large for u32");
        }
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    out.reserve(out.size() + static_cast<std::size_t>(t.numel()) * sizeof(Scalar));
    for (Scalar v : t.data()) {
        if constexpr (std::is_same_v<Scalar, float>) {
            put_u32(out, std::bit_cast<std::uint32_t>(v));
        } else {
            put_u64(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

DecodedHeader decode_tensor_header(std::string_view bytes, std::uint64_t base) {
    Reader r(bytes, base);
    if (r.remaining() < 4 || bytes.substr(0, 4) != "TNSR") {
        throw FormatError("bad TensorFile magic", base);
    }
    r.take(4, "magic");
    const auto version_at = r.offset();
    const auto version = r.uint(2, "version");
    if (version != kTensorFileVersion) {
        throw FormatError("unsupported TensorFile version " + std::to_string(version), version_at);
    }
    const auto dtype_at = r.offset();
    const auto code = r.uint(1, "dtype");
    if (code != 1 && code != 2) {
        throw FormatError("unknown dtype code " + std::to_string(code), dtype_at);
    }
    const auto ndim_at = r.offset();
    const auto ndim = r.uint(1, "ndim");
    if (ndim == 0) {
        throw FormatError("TensorFile rank must be at least 1", ndim_at);
    }
    DecodedHeader h{static_cast<DType>(code), {}, 0, 0};
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < ndim; ++i) {
        const auto dim_at = r.offset();
        const auto d = r.uint(4, "dims");
        if (d == 0) {
            throw FormatError("zero-sized dimension", dim_at);
        }
        count *= d;
        h.shape.push_back(static_cast<Index>(d));
    }
    h.header_bytes = r.pos();
    const std::uint64_t payload = count * dtype_size(h.dtype);
    if (r.remaining() < payload) {
        throw FormatError("truncated payload: dims declare " + std::to_string(count) +
                              " elements (" + std::to_string(payload) + " bytes) but only " +
                              std::to_string(r.remaining()) + " bytes follow",
                          base + bytes.size());
    }
    h.total_bytes = h.header_bytes + static_cast<std::size_t>(payload);
    return h;
}

template <typename Scalar>
Tensor<Scalar> decode_tensor(std::string_view bytes, std::uint64_t base, std::size_t* consumed,
                             bool allow_trailing) {
    const auto h = decode_tensor_header(bytes, base);
    if (!allow_trailing && bytes.size() != h.total_bytes) {
        throw FormatError(std::to_string(bytes.size() - h.total_bytes) +
                              " unexpected trailing bytes after payload",
                          base + h.total_bytes);
    }
    const Index n = numel(h.shape);
    Vector<Scalar> values(n);
    std::size_t pos = h.header_bytes;
    for (Index i = 0; i < n; ++i) {
        if (h.dtype == DType::Float32) {
            values[i] = static_cast<Scalar>(
                std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, pos, 4))));
            pos += 4;
        } else {
            values[i] = static_cast<Scalar>(std::bit_cast<double>(get_le(bytes, pos, 8)));
            pos += 8;
        }
    }
    if (consumed != nullptr) *consumed = h.total_bytes;
    return Tensor<Scalar>(h.shape, std::move(values));
}

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t) {
    write_file(path, encode_tensor(t));
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_tensor<Scalar>(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const TUnetParams<Scalar>& params,
                     const ModelConfig& config) {
    const auto named = params.named();
    std::string out = "TUCK";
    put_u16(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(named.size() + 1));

    const std::string json = model_config_to_json(config);
    put_u16(out, static_cast<std::uint16_t>(kConfigEntry.size()));
    out.append(kConfigEntry);
    put_u32(out, static_cast<std::uint32_t>(json.size()));
    out.append(json);

    for (const auto& [name, tensor] : named) {
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.append(name);
        out.append(encode_tensor(tensor));
    }
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
    put_u32(out, static_cast<std::uint32_t>(crc));
    write_file(path, out);
}

namespace {

struct RawCheckpoint {
    ModelConfig config;
    std::vector<std::pair<std::string, std::size_t>> entries;  // name, body offset
};

RawCheckpoint parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "TUCK") {
        throw FormatError("bad checkpoint magic", 0);
    }
    Reader r(bytes, 0);
    r.take(4, "magic");
    const auto version = r.uint(2, "version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    }
    if (bytes.size() < 14) {
        throw FormatError("checkpoint too short", bytes.size());
    }
    const auto body = bytes.substr(0, bytes.size() - 4);
    const auto stored = static_cast<std::uint32_t>(get_le(bytes, bytes.size() - 4, 4));
    const auto actual = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    if (stored != actual) {
        throw IntegrityError("checkpoint CRC32 mismatch (stored " + std::to_string(stored) +
                             ", computed " + std::to_string(actual) + ")");
    }

    Reader br(body, 0);
    br.take(6, "header");
    const auto count = br.uint(4, "entry count");
    RawCheckpoint raw;
    std::set<std::string> seen;
    for (std::uint64_t e = 0; e < count; ++e) {
        const auto name_len = br.uint(2, "name length");
        std::string name(br.take(static_cast<std::size_t>(name_len), "name"));
        if (!seen.insert(name).second) {
            throw SchemaError("duplicate checkpoint entry '" + name + "'");
        }
        if (e == 0) {
            if (name != kConfigEntry) {
                throw SchemaError("first checkpoint entry must be __config__, got '" + name + "'");
            }
            const auto len = br.uint(4, "config length");
            raw.config = model_config_from_json(std::string(br.take(static_cast<std::size_t>(len), "config")));
            continue;
        }
        const auto at = br.pos();
        const auto h = decode_tensor_header(body.substr(at), at);
        br.take(h.total_bytes, "tensor");
        raw.entries.emplace_back(std::move(name), at);
    }
    if (br.remaining() != 0) {
        throw FormatError("trailing bytes after last checkpoint entry", br.offset());
    }
    return raw;
}

template <typename Scalar>
TUnetParams<Scalar> fill_params(std::string_view bytes, const RawCheckpoint& raw) {
    auto params = make_params<Scalar>(raw.config);
    auto named = params.named();
    std::map<std::string, std::size_t> offsets(raw.entries.begin(), raw.entries.end());
    for (auto& [name, tensor] : named) {
        const auto it = offsets.find(name);
        if (it == offsets.end()) {
            throw SchemaError("checkpoint is missing tensor '" + name + "'");
        }
        const auto loaded =
            decode_tensor<Scalar>(bytes.substr(it->second), it->second, nullptr, true);
        if (loaded.shape() != tensor.shape()) {
            throw SchemaError("tensor '" + name + "' has shape " + to_string(loaded.shape()) +
                              ", config expects " + to_string(tensor.shape()));
        }
        tensor.mutable_value() = loaded.value();
        offsets.erase(it);
    }
    if (!offsets.empty()) {
        throw SchemaError("checkpoint has unexpected tensor '" + offsets.begin()->first + "'");
    }
    return params;
}

}  // namespace

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    const auto raw = parse_checkpoint(bytes);
    return {raw.config, fill_params<Scalar>(bytes, raw)};
}

template <typename Scalar>
TUnetParams<Scalar> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    const auto bytes = read_file(path);
    const auto raw = parse_checkpoint(bytes);
    if (!(raw.config == expected)) {
        throw SchemaError("checkpoint " + path.string() + " was written for config " +
                          model_config_to_json(raw.config) + ", expected " +
                          model_config_to_json(expected));
    }
    return fill_params<Scalar>(bytes, raw);
}

namespace {

std::filesystem::path pair_path(const std::filesystem::path& dir, const char* prefix, std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "%s_%04zu.tnsr", prefix, i);
    return dir / name;
}

}  // namespace

template <typename Scalar>
void save_dataset_dir(const std::filesystem::path& dir, const std::vector<Sample<Scalar>>& samples) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        save_tensor(pair_path(dir, "img", i), samples[i].image);
        save_tensor(pair_path(dir, "msk", i), samples[i].mask);
    }
}

template <typename Scalar>
std::vector<Sample<Scalar>> load_dataset_dir(const std::filesystem::path& dir, bool apply_normalize) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("dataset directory " + dir.string() + " does not exist");
    }
    std::vector<Sample<Scalar>> samples;
    for (std::size_t i = 0;; ++i) {
        const auto img = pair_path(dir, "img", i);
        if (!std::filesystem::exists(img)) break;
        auto image = load_tensor<Scalar>(img);
        auto mask = load_tensor<Scalar>(pair_path(dir, "msk", i));
        if (image.rank() != 3 || mask.shape() != Shape{1, image.dim(1), image.dim(2)}) {
            throw DimensionError("sample " + std::to_string(i) + " in " + dir.string() + ": image " +
                                 to_string(image.shape()) + " and mask " + to_string(mask.shape()) +
                                 " are inconsistent");
        }
        if (apply_normalize) image = normalize(image);
        samples.push_back({std::move(image), std::move(mask)});
    }
    return samples;
}

#define TUNET_INSTANTIATE_IO(S)                                                                    \
    template std::string encode_tensor(const Tensor<S>&);                                          \
    template Tensor<S> decode_tensor<S>(std::string_view, std::uint64_t, std::size_t*, bool);      \
    template void save_tensor(const std::filesystem::path&, const Tensor<S>&);                     \
    template Tensor<S> load_tensor<S>(const std::filesystem::path&);                               \
    template void save_checkpoint(const std::filesystem::path&, const TUnetParams<S>&,             \
                                  const ModelConfig&);                                             \
    template Checkpoint<S> load_checkpoint<S>(const std::filesystem::path&);                       \
    template TUnetParams<S> load_checkpoint<S>(const std::filesystem::path&, const ModelConfig&);   \
    template void save_dataset_dir(const std::filesystem::path&, const std::vector<Sample<S>>&);   \
    template std::vector<Sample<S>> load_dataset_dir<S>(const std::filesystem::path&, bool);

TUNET_INSTANTIATE_IO(float)
TUNET_INSTANTIATE_IO(double)

#undef TUNET_INSTANTIATE_IO

}  // namespace tunet
