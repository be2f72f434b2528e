#ifndef PHASEFORGE_VARNET_HPP
#define PHASEFORGE_VARNET_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "phaseforge/data.hpp"
#include "phaseforge/mask.hpp"
#include "phaseforge/nn.hpp"
#include "phaseforge/report.hpp"
#include "phaseforge/score.hpp"  // LossCurvePoint

namespace phaseforge {

struct CascadeConfig {
  int num_cascades = 3;
  int refiner_base = 8;
  int refiner_depth = 2;
  double dc_weight_init = 1.0;
};

struct ReconTrainConfig {
  double lr = 3e-4;
  int batch_size = 4;
  int steps = 300;
  std::uint64_t seed = 0;
  int val_interval = 50;
};

using MaskGrid = std::vector<std::pair<int, int>>;  // (R, n_acs)

// Soft data consistency: k' = k - eta * mask (k - y_ref).
CImage data_consistency(const CImage& k, const CImage& y_ref, const SamplingMask& mask,
                        double eta);

// Single-coil unrolled reconstruction: cascades of soft data consistency with
// a learnable step size and a small image-domain refiner U-Net on the
// (real, imag) channels. Output is the magnitude of the final inverse
// transform. A freshly initialized network has exactly zero refiner output
// (zero-initialized head), i.e. it is a pure DC chain.
class VarNet {
 public:
  VarNet(const CascadeConfig& cfg, std::uint64_t init_seed);

  // training path: masked k-space (N,2,H,W) -> magnitude (N,1,H,W) graph
  nn::Var forward(const nn::Var& y_ref, const SamplingMask& mask) const;

  // inference path, exact magnitude (no smoothing eps)
  Tensor reconstruct(const CImage& masked_kspace, const SamplingMask& mask) const;

  const CascadeConfig& config() const { return cfg_; }
  nn::ParamList& params() { return params_; }
  const nn::ParamList& params() const { return params_; }

 private:
  nn::Var run_cascades(const nn::Var& y_ref, const SamplingMask& mask) const;

  CascadeConfig cfg_;
  nn::ParamList params_;
  std::vector<nn::UNet> refiners_;
  std::vector<nn::Var> etas_;
};

// Differentiable 1 - SSIM objective (uniform 7x7 valid window); both images
// are normalized per sample by data_range before windowing.
nn::Var ssim_loss(const nn::Var& out, const nn::Var& target,
                  const std::vector<double>& data_ranges, int window = 7);

struct ReconCheckpoint {
  CascadeConfig cfg;
  std::vector<std::pair<std::string, Tensor>> params;
  MaskGrid mask_grid;
  MaskKind mask_kind = MaskKind::equispaced;
  std::string phase_source;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  double final_train_loss = 0.0;
  double best_val_loss = 0.0;
};

// Trains against the magnitude of each record's fully sampled inverse
// transform; masks are fixed per (R, n_acs) configuration and cycled across
// steps. Best step selected by validation loss when `val` is nonempty.
ReconCheckpoint train_recon(const std::vector<const SliceRecord*>& train,
                            const std::vector<const SliceRecord*>& val,
                            const MaskGrid& grid, MaskKind kind,
                            const CascadeConfig& cascade_cfg,
                            const ReconTrainConfig& train_cfg,
                            const std::string& phase_source,
                            std::vector<LossCurvePoint>* curve = nullptr);

VarNet varnet_from_checkpoint(const ReconCheckpoint& ckpt);
void save_recon_checkpoint(const std::filesystem::path& path, const ReconCheckpoint& ckpt);
ReconCheckpoint load_recon_checkpoint(const std::filesystem::path& path);

// Per-configuration SSIM/PSNR/NRMSE of the model and the zero-filled baseline
// on records carrying ground-truth k-space.
MetricReport evaluate_recon(const VarNet& model, const std::string& phase_source,
                            const std::vector<const SliceRecord*>& test,
                            const MaskGrid& grid, MaskKind kind);

}  // namespace phaseforge

#endif
