#ifndef PHASEFORGE_MASK_HPP
#define PHASEFORGE_MASK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "phaseforge/tensor.hpp"

namespace phaseforge {

enum class MaskKind { equispaced, random };

MaskKind mask_kind_from_string(const std::string& s);
std::string to_string(MaskKind k);

// Cartesian line mask over phase-encode columns: a centered block of n_acs
// fully sampled lines plus every R-th line (equispaced) or a random draw of
// floor((N - n_acs)/R) lines outside the block.
struct SamplingMask {
  std::vector<std::uint8_t> lines;  // 1 = sampled
  int r = 1;
  int n_acs = 0;
  MaskKind kind = MaskKind::equispaced;
  std::uint64_t seed = 0;

  std::size_t size() const { return lines.size(); }
  std::size_t sampled_count() const;
};

SamplingMask make_mask(std::size_t n, int r, int n_acs, MaskKind kind, std::uint64_t seed = 0);

// R_eff = N / (number of sampled lines).
double effective_acceleration(const SamplingMask& mask);

// Zero the unsampled phase-encode columns; sampled columns pass bit-identically.
CImage apply_mask(const CImage& kspace, const SamplingMask& mask);

// Magnitude of the centered inverse transform.
Tensor zero_filled_recon(const CImage& kspace_masked);

std::string mask_to_json(const SamplingMask& mask);
SamplingMask mask_from_json(const std::string& text);

}  // namespace phaseforge

#endif
