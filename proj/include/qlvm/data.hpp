#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qlvm/matrix.hpp"
#include "qlvm/net.hpp"

namespace qlvm {

enum class ValueKind { binary_pixels, real_valued };

struct Dataset {
    Matrix x;  // n samples by D values
    ValueKind kind = ValueKind::binary_pixels;
    int height = 0, width = 0;  // zero when samples are not images
    std::string name;
    std::vector<int> labels;  // empty when absent

    int count() const { return x.rows; }
    int dim() const { return x.cols; }
};

class idx_magic_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class idx_truncated_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class idx_mismatch_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// IDX image files (magic 0x00000803) with optional labels (0x00000801).
// Pixel bytes are scaled to [0,1] by division by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path = "");
void write_idx_images(const std::string& path, const Dataset& ds);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

// n images of side x side pixels, one Gaussian blob per image centered at
// one of k fixed cluster centers (equally spaced on a circle) plus uniform
// jitter. jitter < 0 selects the default side/(8k). Labels hold the cluster
// index of each sample.
Dataset synth_mixture(std::uint64_t seed, int k, int n, int side, double blob_sigma,
                      double jitter = -1.0);

// Deterministic shuffled split; train gets round(fraction * n) samples,
// clamped so both parts are nonempty.
std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed);

class checkpoint_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class checkpoint_format_error : public checkpoint_error {
    using checkpoint_error::checkpoint_error;
};
class checkpoint_truncated_error : public checkpoint_error {
    using checkpoint_error::checkpoint_error;
};
class checkpoint_version_error : public checkpoint_error {
    using checkpoint_error::checkpoint_error;
};
class checkpoint_crc_error : public checkpoint_error {
    using checkpoint_error::checkpoint_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Self-describing binary snapshot of a training run: one or more named
// networks (decoder, and for baselines an encoder), their optimizer states,
// the run configuration as text, and RNG states. Layout: 8-byte magic
// "QLVMCKPT", u32 version, length-prefixed UTF-8 key-value text entries,
// length-prefixed little-endian f64 arrays, trailing CRC32 over everything
// before it.
struct Checkpoint {
    std::string model_kind;  // qlvm | vae | iwae
    std::int64_t epoch = 0;
    std::map<std::string, std::string> config;
    std::map<std::string, std::string> rng_state;  // stream name -> serialized
    std::vector<std::pair<std::string, Network>> networks;
    std::vector<std::pair<std::string, AdamState>> optimizers;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Text round-trip of a NetworkSpec, used inside checkpoints and resolved
// config files.
std::string spec_to_text(const NetworkSpec& spec);
NetworkSpec spec_from_text(const std::string& text);

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

}  // namespace qlvm
