#ifndef PHASEFORGE_DATA_HPP
#define PHASEFORGE_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "phaseforge/tensor.hpp"

namespace phaseforge {

struct Provenance {
  std::string kind;  // phantom | ingested | synthesized
  std::uint64_t seed = 0;
  std::string source;  // file path for ingested data, phase source for synthesized
};

// One 2-D slice. Magnitude is stored normalized to [0, 1]; the applied scale
// is kept so metrics can be mapped back to acquisition units.
struct SliceRecord {
  std::string patient_id;
  int slice_index = 0;
  Tensor magnitude;
  std::optional<Tensor> phase;   // wrapped to [-pi, pi)
  std::optional<CImage> kspace;  // centered orthonormal convention
  Provenance provenance;
  double norm_scale = 1.0;
};

struct DatasetManifest {
  int format_version = 1;
  std::size_t image_size = 0;
  std::string phase_source;  // "", "gt", "smooth" or "sbdm"
  std::uint64_t seed = 0;
  std::map<std::string, std::string> gen_split;  // patient -> genTrain|genVal|genTest
  std::map<std::string, std::string> rec_split;  // genTest patient -> recTrain|recVal|recTest
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SliceRecord> records;

  std::vector<const SliceRecord*> select_gen(const std::string& split) const;
  std::vector<const SliceRecord*> select_rec(const std::string& split) const;
};

struct PhantomConfig {
  int min_ellipses = 3;
  int max_ellipses = 6;
  int poly_order = 2;                 // phase trend order
  double offset_range = 1.5707963267948966;  // per-ellipse phase offsets in [-pi/2, pi/2]
  double background_noise_std = 0.3;  // radians
};

// Randomized ellipse-composite magnitude in [0,1] with a ground-truth phase:
// low-order polynomial trend + per-ellipse constant offsets + background noise.
SliceRecord generate_phantom(std::uint64_t seed, std::size_t size,
                             const PhantomConfig& cfg = {});

// Crop the central square of k-space, inverse-transform, resize the complex
// image to target x target, re-derive magnitude and wrapped phase.
std::pair<Tensor, Tensor> center_crop_resize(const CImage& kspace, std::size_t target);

// Divide by the 99.5th-percentile of the slice and clip to [0,1]; falls back
// to the max when the percentile is zero. Returns (normalized, scale).
std::pair<Tensor, double> normalize_magnitude(const Tensor& raw);

// Patient-level two-stage split: gen ratios over all patients, rec ratios over
// the genTest patients only. Shuffles patients with the given seed.
void split_dataset(Dataset& ds, const std::array<double, 3>& gen_ratios,
                   const std::array<double, 3>& rec_ratios, std::uint64_t seed);

// fastMRI-style single-coil ingestion: HDF5 file with a complex "kspace"
// dataset of shape (slices, H, W). Multi-coil (4-D) input is rejected.
std::vector<SliceRecord> ingest_hdf5_kspace(const std::filesystem::path& path,
                                            std::size_t target_size);

// Dataset container: <dir>/manifest.json + arrays/*.pfa (little-endian
// IEEE-754, row-major, header with dtype and shape). Rewrites are
// byte-identical for identical content.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Flat array files used by the container.
void write_array(const std::filesystem::path& path, const Tensor& t);
void write_array(const std::filesystem::path& path, const CImage& img);
Tensor read_array_real(const std::filesystem::path& path);
CImage read_array_complex(const std::filesystem::path& path);

}  // namespace phaseforge

#endif
