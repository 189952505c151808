#include "comflp/activation_store.hpp"

#include "comflp/error.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

namespace comflp {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kLayerMagic = {'C', 'M', 'F', 'L', 'P', 'A', 'C', 'T'};
constexpr std::array<char, 8> kMaskMagic = {'C', 'M', 'F', 'L', 'P', 'M', 'S', 'K'};
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 8 + 8;

template <typename T>
void put_le(std::string& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(u & 0xFF));
        u = static_cast<U>(u >> 8);
    }
}

template <typename T>
T get_le(const char* p) {
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;)
        u = static_cast<std::make_unsigned_t<T>>((u << 8) | static_cast<unsigned char>(p[i]));
    return static_cast<T>(u);
}

std::string layer_file_name(int index) {
    std::ostringstream os;
    os << "layer_" << std::setw(3) << std::setfill('0') << index << ".bin";
    return os.str();
}

std::string mask_file_name(int index) {
    std::ostringstream os;
    os << "mask_" << std::setw(3) << std::setfill('0') << index << ".bin";
    return os.str();
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void dump(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed for " + path.string());
}

std::string encode_header(const std::array<char, 8>& magic, std::uint32_t layer_index,
                          std::uint64_t rows, std::uint64_t cols) {
    std::string out(magic.begin(), magic.end());
    put_le<std::uint32_t>(out, kActivationFormatVersion);
    put_le<std::uint32_t>(out, layer_index);
    put_le<std::uint64_t>(out, rows);
    put_le<std::uint64_t>(out, cols);
    return out;
}

struct BlobHeader {
    std::uint32_t layer_index;
    std::uint64_t rows;
    std::uint64_t cols;
};

BlobHeader decode_header(const std::string& bytes, const std::array<char, 8>& magic,
                         const fs::path& path) {
    if (bytes.size() < kHeaderBytes)
        throw ValidationError("format error: truncated header in " + path.string());
    if (std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
        throw ValidationError("format error: bad magic in " + path.string());
    const char* p = bytes.data() + 8;
    const auto version = get_le<std::uint32_t>(p);
    if (version != kActivationFormatVersion)
        throw ValidationError("format error: unsupported version " + std::to_string(version) +
                              " in " + path.string());
    return {get_le<std::uint32_t>(p + 4), get_le<std::uint64_t>(p + 8), get_le<std::uint64_t>(p + 16)};
}

std::string encode_floats(const std::array<char, 8>& magic, int layer_index, std::uint64_t rows,
                          std::uint64_t cols, const auto& value_at) {
    std::string out = encode_header(magic, static_cast<std::uint32_t>(layer_index), rows, cols);
    out.reserve(out.size() + rows * cols * 4);
    for (std::uint64_t r = 0; r < rows; ++r)
        for (std::uint64_t c = 0; c < cols; ++c)
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(value_at(r, c))));
    return out;
}

struct FloatBlob {
    std::uint64_t rows;
    std::uint64_t cols;
    std::vector<double> values;
};

FloatBlob read_float_blob(const fs::path& path, int expected_index) {
    const std::string bytes = slurp(path);
    const BlobHeader h = decode_header(bytes, kLayerMagic, path);
    if (static_cast<int>(h.layer_index) != expected_index)
        throw ValidationError("format error: " + path.string() + " holds layer " +
                              std::to_string(h.layer_index) + ", manifest expects " +
                              std::to_string(expected_index));
    const std::uint64_t count = h.rows * h.cols;
    if (h.cols != 0 && count / h.cols != h.rows)
        throw ValidationError("format error: dimension overflow in " + path.string());
    if (bytes.size() != kHeaderBytes + count * 4)
        throw ValidationError("format error: truncated or oversized payload in " + path.string() +
                              " (expected " + std::to_string(kHeaderBytes + count * 4) +
                              " bytes, found " + std::to_string(bytes.size()) + ")");
    FloatBlob blob{h.rows, h.cols, std::vector<double>(count)};
    const char* p = bytes.data() + kHeaderBytes;
    for (std::uint64_t i = 0; i < count; ++i) {
        const float f = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
        if (!std::isfinite(f))
            throw ValidationError("non-finite value in " + path.string());
        blob.values[i] = f;
    }
    return blob;
}

std::vector<std::uint8_t> read_mask_blob(const fs::path& path, int expected_index,
                                         std::uint64_t rows, std::uint64_t cols) {
    const std::string bytes = slurp(path);
    const BlobHeader h = decode_header(bytes, kMaskMagic, path);
    if (static_cast<int>(h.layer_index) != expected_index || h.rows != rows || h.cols != cols)
        throw ValidationError("format error: mask " + path.string() + " does not match its layer");
    if (bytes.size() != kHeaderBytes + rows * cols)
        throw ValidationError("format error: truncated mask payload in " + path.string());
    return {bytes.begin() + kHeaderBytes, bytes.end()};
}

void write_manifest(const ActivationManifest& m, const fs::path& dir) {
    nlohmann::ordered_json j;
    j["format"] = "CMFLPACT";
    j["version"] = kActivationFormatVersion;
    j["num_layers"] = m.num_layers;
    j["num_samples"] = m.num_samples;
    j["dtype"] = m.dtype;
    auto& layers = j["layers"];
    layers = nlohmann::ordered_json::array();
    for (const auto& e : m.layers) {
        nlohmann::ordered_json le;
        le["index"] = e.index;
        le["file"] = e.file;
        le["dim"] = e.dim;
        if (e.frames > 0)
            le["frames"] = e.frames;
        if (!e.mask_file.empty())
            le["mask"] = e.mask_file;
        layers.push_back(le);
    }
    j["metadata"] = m.metadata;
    dump(dir / kManifestName, j.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

ActivationMatrix::ActivationMatrix(int layer_index, Eigen::MatrixXd data)
    : layer_index_(layer_index), data_(std::move(data)) {
    if (layer_index_ < 0)
        throw ValidationError("negative layer index");
    if (!data_.allFinite())
        throw ValidationError("layer " + std::to_string(layer_index_) + " has non-finite entries");
}

ActivationMatrix temporal_average(const FrameActivationTensor& t) {
    if (t.frames < 1)
        throw ValidationError("temporal_average needs at least one frame");
    if (t.values.size() != t.samples * t.frames * t.dims)
        throw ValidationError("frame tensor size does not match its dimensions");
    if (t.mask && t.mask->size() != t.samples * t.frames)
        throw ValidationError("frame mask size does not match B x T");

    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t.samples),
                                                static_cast<Eigen::Index>(t.dims));
    for (std::size_t b = 0; b < t.samples; ++b) {
        std::size_t valid = 0;
        for (std::size_t f = 0; f < t.frames; ++f) {
            if (!t.valid(b, f))
                continue;
            ++valid;
            for (std::size_t d = 0; d < t.dims; ++d)
                out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(d)) += t.at(b, f, d);
        }
        if (valid == 0)
            throw ValidationError("empty sample: sample " + std::to_string(b) + " of layer " +
                                  std::to_string(t.layer_index) + " has no valid frame");
        out.row(static_cast<Eigen::Index>(b)) /= static_cast<double>(valid);
    }
    return ActivationMatrix(t.layer_index, std::move(out));
}

ActivationSet::ActivationSet(std::vector<ActivationMatrix> matrices,
                             std::map<std::string, std::string> metadata)
    : matrices_(std::move(matrices)), metadata_(std::move(metadata)) {
    if (matrices_.size() < 2)
        throw ValidationError("an activation set needs layers 0..L with L >= 1");
    const Eigen::Index b = matrices_.front().samples();
    if (b < 2)
        throw ValidationError("an activation set needs at least 2 samples, got " + std::to_string(b));
    for (std::size_t i = 0; i < matrices_.size(); ++i) {
        const auto& m = matrices_[i];
        if (m.layer_index() != static_cast<int>(i))
            throw ValidationError("layer " + std::to_string(i) + " missing or out of order (found index " +
                                  std::to_string(m.layer_index()) + ")");
        if (m.samples() != b)
            throw ValidationError("layer " + std::to_string(i) + " has " + std::to_string(m.samples()) +
                                  " samples, expected " + std::to_string(b));
        if (m.dims() < 1)
            throw ValidationError("layer " + std::to_string(i) + " has zero hidden dimension");
    }
}

ActivationManifest read_manifest(const fs::path& dir) {
    const fs::path path = dir / kManifestName;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("format error: cannot parse " + path.string() + ": " + e.what());
    }
    ActivationManifest m;
    try {
        if (j.at("format").get<std::string>() != "CMFLPACT")
            throw ValidationError("format error: " + path.string() + " is not an activation manifest");
        if (j.at("version").get<std::uint32_t>() != kActivationFormatVersion)
            throw ValidationError("format error: unsupported manifest version in " + path.string());
        m.num_layers = j.at("num_layers").get<int>();
        m.num_samples = j.at("num_samples").get<std::size_t>();
        m.dtype = j.value("dtype", std::string("float32"));
        for (const auto& le : j.at("layers")) {
            LayerEntry e;
            e.index = le.at("index").get<int>();
            e.file = le.at("file").get<std::string>();
            e.dim = le.at("dim").get<std::size_t>();
            e.frames = le.value("frames", std::size_t{0});
            e.mask_file = le.value("mask", std::string());
            m.layers.push_back(std::move(e));
        }
        if (j.contains("metadata"))
            m.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("format error: malformed manifest " + path.string() + ": " + e.what());
    }

    if (m.dtype != "float32")
        throw ValidationError("format error: unsupported dtype '" + m.dtype + "' in " + path.string());
    if (m.num_layers < 1)
        throw ValidationError("manifest " + path.string() + " declares L=" + std::to_string(m.num_layers));
    if (m.num_samples < 2)
        throw ValidationError("manifest " + path.string() + " declares fewer than 2 samples");
    if (m.layers.size() != static_cast<std::size_t>(m.num_layers) + 1)
        throw ValidationError("layer-count mismatch: manifest declares L=" + std::to_string(m.num_layers) +
                              " (needs " + std::to_string(m.num_layers + 1) + " layers) but lists " +
                              std::to_string(m.layers.size()));
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        if (m.layers[i].index != static_cast<int>(i))
            throw ValidationError("manifest " + path.string() + ": layer " + std::to_string(i) +
                                  " missing or out of order");
    return m;
}

void write_activation_set(const ActivationSet& set, const fs::path& dir) {
    ensure_dir(dir);
    ActivationManifest m;
    m.num_layers = set.num_layers();
    m.num_samples = static_cast<std::size_t>(set.num_samples());
    m.metadata = set.metadata();
    for (const auto& layer : set.layers()) {
        const auto& data = layer.data();
        LayerEntry e{layer.layer_index(), layer_file_name(layer.layer_index()),
                     static_cast<std::size_t>(data.cols()), 0, {}};
        dump(dir / e.file,
             encode_floats(kLayerMagic, layer.layer_index(), static_cast<std::uint64_t>(data.rows()),
                           static_cast<std::uint64_t>(data.cols()),
                           [&](std::uint64_t r, std::uint64_t c) {
                               return data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
                           }));
        m.layers.push_back(std::move(e));
    }
    write_manifest(m, dir);
}

void write_frame_activation_set(const std::vector<FrameActivationTensor>& layers, const fs::path& dir,
                                const std::map<std::string, std::string>& metadata) {
    if (layers.size() < 2)
        throw ValidationError("an activation set needs layers 0..L with L >= 1");
    ensure_dir(dir);
    ActivationManifest m;
    m.num_layers = static_cast<int>(layers.size()) - 1;
    m.num_samples = layers.front().samples;
    m.metadata = metadata;
    for (const auto& t : layers) {
        if (t.values.size() != t.samples * t.frames * t.dims)
            throw ValidationError("frame tensor size does not match its dimensions");
        LayerEntry e{t.layer_index, layer_file_name(t.layer_index), t.dims, t.frames, {}};
        dump(dir / e.file, encode_floats(kLayerMagic, t.layer_index, t.samples * t.frames, t.dims,
                                         [&](std::uint64_t r, std::uint64_t c) {
                                             return t.values[r * t.dims + c];
                                         }));
        if (t.mask) {
            e.mask_file = mask_file_name(t.layer_index);
            std::string bytes = encode_header(kMaskMagic, static_cast<std::uint32_t>(t.layer_index),
                                              t.samples, t.frames);
            for (auto v : *t.mask)
                bytes.push_back(v ? 1 : 0);
            dump(dir / e.mask_file, bytes);
        }
        m.layers.push_back(std::move(e));
    }
    write_manifest(m, dir);
}

ActivationSet read_activation_set(const fs::path& dir) {
    const ActivationManifest m = read_manifest(dir);
    std::vector<ActivationMatrix> matrices;
    matrices.reserve(m.layers.size());
    for (const auto& e : m.layers) {
        const fs::path path = dir / e.file;
        FloatBlob blob = read_float_blob(path, e.index);
        const std::uint64_t frames = e.frames > 0 ? e.frames : 1;
        if (blob.cols != e.dim || blob.rows != m.num_samples * frames)
            throw ValidationError("shape mismatch in " + path.string() + ": blob is " +
                                  std::to_string(blob.rows) + "x" + std::to_string(blob.cols) +
                                  ", manifest expects " + std::to_string(m.num_samples * frames) + "x" +
                                  std::to_string(e.dim));
        if (e.frames > 0) {
            FrameActivationTensor t;
            t.layer_index = e.index;
            t.samples = m.num_samples;
            t.frames = e.frames;
            t.dims = e.dim;
            t.values = std::move(blob.values);
            if (!e.mask_file.empty())
                t.mask = read_mask_blob(dir / e.mask_file, e.index, m.num_samples, e.frames);
            matrices.push_back(temporal_average(t));
        } else {
            Eigen::MatrixXd data(static_cast<Eigen::Index>(blob.rows), static_cast<Eigen::Index>(blob.cols));
            for (std::uint64_t r = 0; r < blob.rows; ++r)
                for (std::uint64_t c = 0; c < blob.cols; ++c)
                    data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        blob.values[r * blob.cols + c];
            matrices.emplace_back(e.index, std::move(data));
        }
    }
    return ActivationSet(std::move(matrices), m.metadata);
}

}  // namespace comflp
