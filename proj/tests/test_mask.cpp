#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "phaseforge/data.hpp"
#include "phaseforge/mask.hpp"
#include "phaseforge/metrics.hpp"
#include "phaseforge/phase_ops.hpp"

using namespace phaseforge;

namespace {

// Independent construction: a line is sampled iff it is in the centered ACS
// block or on the stride grid.
std::set<std::size_t> enumerate_equispaced(std::size_t n, int r, int n_acs) {
  std::set<std::size_t> lines;
  const std::size_t acs_start = (n - static_cast<std::size_t>(n_acs)) / 2;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_acs); ++i) lines.insert(acs_start + i);
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(r)) lines.insert(i);
  return lines;
}

}  // namespace

TEST_CASE("hand-enumerated 8-line example") {
  const auto mask = make_mask(8, 2, 2, MaskKind::equispaced);
  std::set<std::size_t> sampled;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.lines[i]) sampled.insert(i);
  CHECK(sampled == std::set<std::size_t>{0, 2, 3, 4, 6});
  CHECK(effective_acceleration(mask) == doctest::Approx(1.6).epsilon(1e-15));
}

TEST_CASE("degenerate masks") {
  const auto full_r1 = make_mask(16, 1, 0, MaskKind::equispaced);
  CHECK(full_r1.sampled_count() == 16);
  CHECK(effective_acceleration(full_r1) == 1.0);

  const auto full_acs = make_mask(16, 7, 16, MaskKind::equispaced);
  CHECK(full_acs.sampled_count() == 16);

  CHECK_THROWS_AS(make_mask(8, 2, 9, MaskKind::equispaced), contract_error);
  CHECK_THROWS_AS(make_mask(8, 0, 2, MaskKind::equispaced), contract_error);
}

TEST_CASE("equispaced masks match brute-force enumeration on the evaluation grid") {
  const std::size_t n = 256;
  for (int r : {2, 3, 4, 6}) {
    for (int n_acs : {16, 26, 31}) {
      const auto mask = make_mask(n, r, n_acs, MaskKind::equispaced);
      const auto expected = enumerate_equispaced(n, r, n_acs);
      CHECK(mask.sampled_count() == expected.size());
      for (std::size_t i = 0; i < n; ++i)
        CHECK(static_cast<bool>(mask.lines[i]) == (expected.count(i) == 1));

      // ACS contiguity
      const std::size_t acs_start = (n - static_cast<std::size_t>(n_acs)) / 2;
      for (std::size_t i = 0; i < static_cast<std::size_t>(n_acs); ++i)
        CHECK(mask.lines[acs_start + i] == 1);

      const double r_eff = effective_acceleration(mask);
      CHECK(r_eff == static_cast<double>(n) / static_cast<double>(expected.size()));
      CHECK(r_eff <= static_cast<double>(r));

      // deterministic: same parameters, same lines
      const auto again = make_mask(n, r, n_acs, MaskKind::equispaced);
      CHECK(again.lines == mask.lines);
    }
  }
}

TEST_CASE("random masks are seeded and keep the ACS block") {
  const auto a = make_mask(128, 4, 16, MaskKind::random, 12);
  const auto b = make_mask(128, 4, 16, MaskKind::random, 12);
  const auto c = make_mask(128, 4, 16, MaskKind::random, 13);
  CHECK(a.lines == b.lines);
  CHECK(a.lines != c.lines);
  CHECK(a.sampled_count() == 16 + (128 - 16) / 4);
  const std::size_t acs_start = (128 - 16) / 2;
  for (std::size_t i = 0; i < 16; ++i) CHECK(a.lines[acs_start + i] == 1);
}

TEST_CASE("apply_mask zeroes unsampled columns only") {
  SliceRecord rec = generate_phantom(5, 32);
  const CImage k = assemble_kspace(rec.magnitude, *rec.phase);

  const auto full = make_mask(32, 1, 0, MaskKind::equispaced);
  const CImage same = apply_mask(k, full);
  for (std::size_t i = 0; i < k.size(); ++i) CHECK(same[i] == k[i]);

  const auto half = make_mask(32, 2, 4, MaskKind::equispaced);
  const CImage masked = apply_mask(k, half);
  CHECK(masked.norm2() <= k.norm2());
  for (std::size_t r = 0; r < k.rows(); ++r) {
    for (std::size_t c = 0; c < k.cols(); ++c) {
      if (half.lines[c]) {
        CHECK(masked.at(r, c) == k.at(r, c));
      } else {
        CHECK(masked.at(r, c) == std::complex<double>(0.0, 0.0));
      }
    }
  }

  const auto wrong = make_mask(16, 2, 4, MaskKind::equispaced);
  CHECK_THROWS_AS(apply_mask(k, wrong), contract_error);
}

TEST_CASE("zero-filled reconstruction") {
  SliceRecord rec = generate_phantom(9, 32);
  const CImage k = assemble_kspace(rec.magnitude, *rec.phase);

  SUBCASE("full k-space inverts exactly") {
    const Tensor out = zero_filled_recon(k);
    double max_err = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
      max_err = std::max(max_err, std::abs(out[i] - rec.magnitude[i]));
    CHECK(max_err < 1e-6);
  }

  SUBCASE("output is nonnegative") {
    const auto mask = make_mask(32, 4, 4, MaskKind::equispaced);
    const Tensor out = zero_filled_recon(apply_mask(k, mask));
    CHECK(out.min() >= 0.0);
  }

  SUBCASE("degradation grows with acceleration") {
    const auto mask2 = make_mask(32, 2, 4, MaskKind::equispaced);
    const auto mask4 = make_mask(32, 4, 4, MaskKind::equispaced);
    double err2 = 0.0, err4 = 0.0;
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
      SliceRecord p = generate_phantom(seed, 32);
      const CImage kp = assemble_kspace(p.magnitude, *p.phase);
      err2 += nrmse(p.magnitude, zero_filled_recon(apply_mask(kp, mask2)));
      err4 += nrmse(p.magnitude, zero_filled_recon(apply_mask(kp, mask4)));
    }
    CHECK(err4 / 20.0 > err2 / 20.0);
  }
}

TEST_CASE("mask JSON round trip") {
  const auto mask = make_mask(64, 3, 8, MaskKind::random, 77);
  const auto back = mask_from_json(mask_to_json(mask));
  CHECK(back.lines == mask.lines);
  CHECK(back.r == mask.r);
  CHECK(back.n_acs == mask.n_acs);
  CHECK(back.kind == mask.kind);
  CHECK(back.seed == mask.seed);
}
