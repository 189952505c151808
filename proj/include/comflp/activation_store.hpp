#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace comflp {

// Temporally averaged hidden representation of one layer: B samples x D dims.
// Entries are finite. The B >= 2 requirement of the similarity measures is
// enforced by ActivationSet and by the scoring functions.
class ActivationMatrix {
public:
    ActivationMatrix(int layer_index, Eigen::MatrixXd data);

    int layer_index() const { return layer_index_; }
    const Eigen::MatrixXd& data() const { return data_; }
    Eigen::Index samples() const { return data_.rows(); }
    Eigen::Index dims() const { return data_.cols(); }

    friend bool operator==(const ActivationMatrix& a, const ActivationMatrix& b) {
        return a.layer_index_ == b.layer_index_ && a.data_.rows() == b.data_.rows() &&
               a.data_.cols() == b.data_.cols() && a.data_ == b.data_;
    }

private:
    int layer_index_;
    Eigen::MatrixXd data_;
};

// Frame-level hidden representation B x T x D, stored sample-major
// (values[(b * T + t) * D + d]). mask, when present, is B x T with nonzero
// meaning a valid frame.
struct FrameActivationTensor {
    int layer_index = 0;
    std::size_t samples = 0;
    std::size_t frames = 0;
    std::size_t dims = 0;
    std::vector<double> values;
    std::optional<std::vector<std::uint8_t>> mask;

    double at(std::size_t b, std::size_t t, std::size_t d) const {
        return values[(b * frames + t) * dims + d];
    }
    bool valid(std::size_t b, std::size_t t) const {
        return !mask || (*mask)[b * frames + t] != 0;
    }
};

// Collapses the frame axis by (masked) mean. Throws ValidationError
// ("empty sample") when a sample has no valid frame.
ActivationMatrix temporal_average(const FrameActivationTensor& t);

// Layer outputs H_0..H_L (index 0 is the encoder input).
class ActivationSet {
public:
    ActivationSet(std::vector<ActivationMatrix> matrices,
                  std::map<std::string, std::string> metadata = {});

    int num_layers() const { return static_cast<int>(matrices_.size()) - 1; }
    Eigen::Index num_samples() const { return matrices_.front().samples(); }
    const ActivationMatrix& layer(int index) const { return matrices_.at(static_cast<std::size_t>(index)); }
    const std::vector<ActivationMatrix>& layers() const { return matrices_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    friend bool operator==(const ActivationSet& a, const ActivationSet& b) {
        return a.matrices_ == b.matrices_ && a.metadata_ == b.metadata_;
    }

private:
    std::vector<ActivationMatrix> matrices_;
    std::map<std::string, std::string> metadata_;
};

// On-disk layout: <dir>/manifest.json plus one blob per layer.
//
// Blob: "CMFLPACT" | u32 version | u32 layer_index | u64 rows | u64 cols |
//       rows*cols little-endian float32, row-major.
// Frame-level layers set "frames" (T) in the manifest; their blob has B*T
// rows and an optional "CMFLPMSK" mask blob (B x T bytes) may accompany it.
// Such layers are temporally averaged on read.
inline constexpr std::uint32_t kActivationFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

struct LayerEntry {
    int index = 0;
    std::string file;
    std::size_t dim = 0;
    std::size_t frames = 0;  // 0: already averaged
    std::string mask_file;   // empty: no mask
};

struct ActivationManifest {
    int num_layers = 0;
    std::size_t num_samples = 0;
    std::string dtype = "float32";
    std::vector<LayerEntry> layers;
    std::map<std::string, std::string> metadata;
};

// Parses and validates the manifest only (no blob access).
ActivationManifest read_manifest(const std::filesystem::path& dir);

// Values are stored as float32; a set whose values are float32-representable
// (e.g. any set obtained from read_activation_set) round-trips bit-exactly.
void write_activation_set(const ActivationSet& set, const std::filesystem::path& dir);
ActivationSet read_activation_set(const std::filesystem::path& dir);

// Writes frame-level layers 0..L (with masks where present) in the same format.
void write_frame_activation_set(const std::vector<FrameActivationTensor>& layers,
                                const std::filesystem::path& dir,
                                const std::map<std::string, std::string>& metadata = {});

}  // namespace comflp
