#include "phaseforge/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "phaseforge/errors.hpp"
#include "phaseforge/fft.hpp"
#include "phaseforge/rng.hpp"

namespace phaseforge {

MaskKind mask_kind_from_string(const std::string& s) {
  if (s == "equispaced") return MaskKind::equispaced;
  if (s == "random") return MaskKind::random;
  throw contract_error("unknown mask kind: " + s);
}

std::string to_string(MaskKind k) {
  return k == MaskKind::equispaced ? "equispaced" : "random";
}

std::size_t SamplingMask::sampled_count() const {
  return static_cast<std::size_t>(std::count(lines.begin(), lines.end(), std::uint8_t{1}));
}

SamplingMask make_mask(std::size_t n, int r, int n_acs, MaskKind kind, std::uint64_t seed) {
  if (n == 0) throw contract_error("make_mask: N must be positive");
  if (r < 1) throw contract_error("make_mask: R must be >= 1");
  if (n_acs < 0 || static_cast<std::size_t>(n_acs) > n)
    throw contract_error("make_mask: n_acs outside [0, N]");

  SamplingMask mask;
  mask.lines.assign(n, 0);
  mask.r = r;
  mask.n_acs = n_acs;
  mask.kind = kind;
  mask.seed = seed;

  const std::size_t acs_start = (n - static_cast<std::size_t>(n_acs)) / 2;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_acs); ++i)
    mask.lines[acs_start + i] = 1;

  if (kind == MaskKind::equispaced) {
    for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(r)) mask.lines[i] = 1;
  } else {
    std::vector<std::size_t> outside;
    for (std::size_t i = 0; i < n; ++i)
      if (!mask.lines[i]) outside.push_back(i);
    const std::size_t want = (n - static_cast<std::size_t>(n_acs)) / static_cast<std::size_t>(r);
    Rng rng(seed);
    std::shuffle(outside.begin(), outside.end(), rng.engine());
    for (std::size_t i = 0; i < std::min(want, outside.size()); ++i) mask.lines[outside[i]] = 1;
  }

  if (mask.sampled_count() == 0) throw contract_error("make_mask: empty mask");
  return mask;
}

double effective_acceleration(const SamplingMask& mask) {
  const std::size_t sampled = mask.sampled_count();
  if (sampled == 0) throw contract_error("effective_acceleration: empty mask");
  return static_cast<double>(mask.size()) / static_cast<double>(sampled);
}

CImage apply_mask(const CImage& kspace, const SamplingMask& mask) {
  if (kspace.cols() != mask.size())
    throw contract_error("apply_mask: mask length does not match phase-encode dimension");
  CImage out = kspace;
  for (std::size_t c = 0; c < out.cols(); ++c) {
    if (mask.lines[c]) continue;
    for (std::size_t r = 0; r < out.rows(); ++r) out.at(r, c) = {0.0, 0.0};
  }
  return out;
}

Tensor zero_filled_recon(const CImage& kspace_masked) {
  const CImage img = ifft2c(kspace_masked);
  Tensor out({img.rows(), img.cols()});
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = std::abs(img[i]);
  return out;
}

std::string mask_to_json(const SamplingMask& mask) {
  std::string bits(mask.size(), '0');
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.lines[i]) bits[i] = '1';
  nlohmann::json j{{"N", mask.size()},
                   {"R", mask.r},
                   {"n_acs", mask.n_acs},
                   {"kind", to_string(mask.kind)},
                   {"seed", mask.seed},
                   {"lines", bits}};
  return j.dump();
}

SamplingMask mask_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SamplingMask mask;
  mask.r = j.at("R").get<int>();
  mask.n_acs = j.at("n_acs").get<int>();
  mask.kind = mask_kind_from_string(j.at("kind").get<std::string>());
  mask.seed = j.at("seed").get<std::uint64_t>();
  const std::string bits = j.at("lines").get<std::string>();
  if (bits.size() != j.at("N").get<std::size_t>())
    throw io_error("mask_from_json: lines bitstring length disagrees with N");
  mask.lines.resize(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) mask.lines[i] = bits[i] == '1' ? 1 : 0;
  return mask;
}

}  // namespace phaseforge
