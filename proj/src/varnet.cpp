#include "phaseforge/varnet.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phaseforge/checkpoint.hpp"
#include "phaseforge/errors.hpp"
#include "phaseforge/fft.hpp"
#include "phaseforge/metrics.hpp"
#include "phaseforge/phase_ops.hpp"

namespace phaseforge {

using nn::Var;

CImage data_consistency(const CImage& k, const CImage& y_ref, const SamplingMask& mask,
                        double eta) {
  if (k.rows() != y_ref.rows() || k.cols() != y_ref.cols())
    throw contract_error("data_consistency: shape mismatch");
  if (k.cols() != mask.size())
    throw contract_error("data_consistency: mask length mismatch");
  CImage out = k;
  for (std::size_t c = 0; c < out.cols(); ++c) {
    if (!mask.lines[c]) continue;
    for (std::size_t r = 0; r < out.rows(); ++r)
      out.at(r, c) -= eta * (k.at(r, c) - y_ref.at(r, c));
  }
  return out;
}

VarNet::VarNet(const CascadeConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  if (cfg.num_cascades < 1) throw contract_error("VarNet: num_cascades must be >= 1");
  Rng rng(init_seed);
  for (int i = 0; i < cfg.num_cascades; ++i) {
    const std::string tag = "cascade" + std::to_string(i);
    refiners_.emplace_back(tag + ".refiner", params_, 2, 2, cfg.refiner_base,
                           cfg.refiner_depth, 0, rng);
    Tensor eta({1});
    eta[0] = cfg.dc_weight_init;
    Var ev = nn::leaf(std::move(eta), true);
    params_.push_back({tag + ".eta", ev});
    etas_.push_back(ev);
  }
}

Var VarNet::run_cascades(const Var& y_ref, const SamplingMask& mask) const {
  const auto& s = y_ref->value.shape();
  if (s.size() != 4 || s[1] != 2) throw contract_error("VarNet: expects (N,2,H,W) k-space");
  if (s[3] != mask.size()) throw contract_error("VarNet: mask does not match k-space");

  Var k = y_ref;
  for (int i = 0; i < cfg_.num_cascades; ++i) {
    const Var dc = nn::sub(
        k, nn::scale_by(nn::mask_columns(nn::sub(k, y_ref), mask.lines),
                        etas_[static_cast<std::size_t>(i)]));
    const Var img = nn::ifft2c_pair(k);
    const Var refined = refiners_[static_cast<std::size_t>(i)](img, nullptr);
    k = nn::sub(dc, nn::fft2c_pair(refined));
    if (!k->value.all_finite())
      throw numeric_error("VarNet: non-finite activations in cascade " + std::to_string(i));
  }
  return k;
}

Var VarNet::forward(const Var& y_ref, const SamplingMask& mask) const {
  return nn::complex_magnitude(nn::ifft2c_pair(run_cascades(y_ref, mask)));
}

Tensor VarNet::reconstruct(const CImage& masked_kspace, const SamplingMask& mask) const {
  nn::NoGradGuard ng;
  const std::size_t h = masked_kspace.rows(), w = masked_kspace.cols();
  Tensor pair({1, 2, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    pair[i] = masked_kspace[i].real();
    pair[h * w + i] = masked_kspace[i].imag();
  }

  const Var k = run_cascades(nn::constant(std::move(pair)), mask);

  // exact magnitude on the inference path
  CImage out(h, w);
  const Tensor& kv = k->value;
  for (std::size_t i = 0; i < h * w; ++i) out[i] = {kv[i], kv[h * w + i]};
  return magnitude_of(ifft2c(out));
}

Var ssim_loss(const Var& out, const Var& target, const std::vector<double>& data_ranges,
              int window) {
  if (!out->value.same_shape(target->value))
    throw contract_error("ssim_loss: shape mismatch");
  if (out->value.rank() != 4) throw contract_error("ssim_loss: expects (N,1,H,W)");
  if (out->value.dim(0) != data_ranges.size())
    throw contract_error("ssim_loss: data_ranges size mismatch");

  std::vector<double> inv(data_ranges.size());
  for (std::size_t i = 0; i < inv.size(); ++i) {
    if (!(data_ranges[i] > 0.0)) throw contract_error("ssim_loss: data_range must be > 0");
    inv[i] = 1.0 / data_ranges[i];
  }
  const Var x = nn::scale_per_sample(out, inv);
  const Var y = nn::scale_per_sample(target, inv);

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double np = static_cast<double>(window) * window;
  const double cov_norm = np / (np - 1.0);

  const Var ux = nn::box_filter_valid(x, window);
  const Var uy = nn::box_filter_valid(y, window);
  const Var uxx = nn::box_filter_valid(nn::mul(x, x), window);
  const Var uyy = nn::box_filter_valid(nn::mul(y, y), window);
  const Var uxy = nn::box_filter_valid(nn::mul(x, y), window);

  const Var vx = nn::scale(nn::sub(uxx, nn::mul(ux, ux)), cov_norm);
  const Var vy = nn::scale(nn::sub(uyy, nn::mul(uy, uy)), cov_norm);
  const Var vxy = nn::scale(nn::sub(uxy, nn::mul(ux, uy)), cov_norm);

  const Var num = nn::mul(nn::add_scalar(nn::scale(nn::mul(ux, uy), 2.0), c1),
                          nn::add_scalar(nn::scale(vxy, 2.0), c2));
  const Var den = nn::mul(nn::add_scalar(nn::add(nn::mul(ux, ux), nn::mul(uy, uy)), c1),
                          nn::add_scalar(nn::add(vx, vy), c2));
  return nn::add_scalar(nn::scale(nn::mean(nn::div(num, den)), -1.0), 1.0);
}

namespace {

Tensor pair_from_kspace(const CImage& k) {
  Tensor out({1, 2, k.rows(), k.cols()});
  const std::size_t hw = k.rows() * k.cols();
  for (std::size_t i = 0; i < hw; ++i) {
    out[i] = k[i].real();
    out[hw + i] = k[i].imag();
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> snapshot_params(const nn::ParamList& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.name, p.var->value);
  return out;
}

struct PreparedRecord {
  const SliceRecord* rec;
  Tensor target;       // |IFFT(full k-space)|
  double data_range;   // max of target
};

PreparedRecord prepare(const SliceRecord& rec) {
  if (!rec.kspace)
    throw config_error("recon: record " + rec.patient_id + "/" +
                       std::to_string(rec.slice_index) + " lacks k-space");
  PreparedRecord out;
  out.rec = &rec;
  out.target = magnitude_of(ifft2c(*rec.kspace));
  out.data_range = std::max(1e-12, out.target.max());
  return out;
}

// batched training forward: stack masked k-space pairs
Var batch_forward(const VarNet& net, const std::vector<const PreparedRecord*>& batch,
                  const SamplingMask& mask) {
  const std::size_t h = batch[0]->target.dim(0), w = batch[0]->target.dim(1);
  Tensor stacked({batch.size(), 2, h, w});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const CImage masked = apply_mask(*batch[b]->rec->kspace, mask);
    const std::size_t hw = h * w;
    for (std::size_t i = 0; i < hw; ++i) {
      stacked[(b * 2) * hw + i] = masked[i].real();
      stacked[(b * 2 + 1) * hw + i] = masked[i].imag();
    }
  }
  return net.forward(nn::constant(std::move(stacked)), mask);
}

double validation_loss(const VarNet& net, const std::vector<PreparedRecord>& val,
                       const std::vector<SamplingMask>& masks, int batch_size) {
  nn::NoGradGuard ng;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& mask : masks) {
    for (std::size_t at = 0; at < val.size(); at += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(val.size(), at + static_cast<std::size_t>(batch_size));
      std::vector<const PreparedRecord*> batch;
      std::vector<double> ranges;
      const std::size_t h = val[0].target.dim(0), w = val[0].target.dim(1);
      Tensor target({end - at, 1, h, w});
      for (std::size_t i = at; i < end; ++i) {
        batch.push_back(&val[i]);
        ranges.push_back(val[i].data_range);
        std::copy(val[i].target.data(), val[i].target.data() + h * w,
                  target.data() + (i - at) * h * w);
      }
      const Var out = batch_forward(net, batch, mask);
      const Var loss = ssim_loss(out, nn::constant(std::move(target)), ranges);
      total += loss->value[0] * static_cast<double>(end - at);
      count += end - at;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

ReconCheckpoint train_recon(const std::vector<const SliceRecord*>& train,
                            const std::vector<const SliceRecord*>& val,
                            const MaskGrid& grid, MaskKind kind,
                            const CascadeConfig& cascade_cfg,
                            const ReconTrainConfig& train_cfg,
                            const std::string& phase_source,
                            std::vector<LossCurvePoint>* curve) {
  if (train.empty()) throw config_error("train_recon: empty training set");
  if (grid.empty()) throw config_error("train_recon: empty mask grid");

  std::vector<PreparedRecord> prepared;
  prepared.reserve(train.size());
  for (const auto* r : train) prepared.push_back(prepare(*r));
  std::vector<PreparedRecord> prepared_val;
  for (const auto* r : val) prepared_val.push_back(prepare(*r));

  const std::size_t n_lines = prepared[0].target.dim(1);
  std::vector<SamplingMask> masks;
  for (const auto& [r, n_acs] : grid)
    masks.push_back(make_mask(n_lines, r, n_acs, kind,
                              derive_seed(train_cfg.seed, "recon-mask")));

  VarNet net(cascade_cfg, derive_seed(train_cfg.seed, "recon-init"));
  std::vector<Var> vars = nn::vars_of(net.params());
  nn::Adam opt(vars);

  Rng order_rng(derive_seed(train_cfg.seed, "recon-batches"));
  std::vector<std::size_t> perm(prepared.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), order_rng.engine());
  std::size_t cursor = 0;

  ReconCheckpoint ckpt;
  ckpt.cfg = cascade_cfg;
  ckpt.mask_grid = grid;
  ckpt.mask_kind = kind;
  ckpt.phase_source = phase_source;
  ckpt.seed = train_cfg.seed;
  ckpt.params = snapshot_params(net.params());
  ckpt.best_val_loss = std::numeric_limits<double>::infinity();

  double last_loss = 0.0;
  for (std::int64_t step = 1; step <= train_cfg.steps; ++step) {
    // configurations cycled uniformly across batches
    const SamplingMask& mask = masks[static_cast<std::size_t>((step - 1) %
                                                              static_cast<std::int64_t>(masks.size()))];
    std::vector<const PreparedRecord*> batch;
    std::vector<double> ranges;
    const std::size_t h = prepared[0].target.dim(0), w = prepared[0].target.dim(1);
    Tensor target({static_cast<std::size_t>(train_cfg.batch_size), 1, h, w});
    for (int b = 0; b < train_cfg.batch_size; ++b) {
      if (cursor == perm.size()) {
        std::shuffle(perm.begin(), perm.end(), order_rng.engine());
        cursor = 0;
      }
      const PreparedRecord& rec = prepared[perm[cursor++]];
      batch.push_back(&rec);
      ranges.push_back(rec.data_range);
      std::copy(rec.target.data(), rec.target.data() + h * w,
                target.data() + static_cast<std::size_t>(b) * h * w);
    }

    nn::zero_grad(vars);
    const Var out = batch_forward(net, batch, mask);
    const Var loss = ssim_loss(out, nn::constant(std::move(target)), ranges);
    if (!std::isfinite(loss->value[0]))
      throw numeric_error("train_recon: non-finite loss at step " + std::to_string(step));
    nn::backward(loss);
    opt.step(train_cfg.lr);
    last_loss = loss->value[0];

    double val_loss = std::numeric_limits<double>::quiet_NaN();
    const bool val_due = !prepared_val.empty() &&
                         (step % train_cfg.val_interval == 0 || step == train_cfg.steps);
    if (val_due) {
      val_loss = validation_loss(net, prepared_val, masks, train_cfg.batch_size);
      if (val_loss < ckpt.best_val_loss) {
        ckpt.best_val_loss = val_loss;
        ckpt.params = snapshot_params(net.params());
        ckpt.steps = step;
      }
    }
    if (curve) curve->push_back({step, last_loss, val_loss});
  }

  if (prepared_val.empty()) {
    ckpt.params = snapshot_params(net.params());
    ckpt.steps = train_cfg.steps;
    ckpt.best_val_loss = std::numeric_limits<double>::quiet_NaN();
  }
  ckpt.final_train_loss = last_loss;
  return ckpt;
}

VarNet varnet_from_checkpoint(const ReconCheckpoint& ckpt) {
  VarNet net(ckpt.cfg, derive_seed(ckpt.seed, "recon-init"));
  if (net.params().size() != ckpt.params.size())
    throw io_error("recon checkpoint: parameter table mismatch");
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    auto& p = net.params()[i];
    if (p.name != ckpt.params[i].first || !p.var->value.same_shape(ckpt.params[i].second))
      throw io_error("recon checkpoint: parameter " + p.name + " mismatch");
    p.var->value = ckpt.params[i].second;
  }
  return net;
}

void save_recon_checkpoint(const std::filesystem::path& path, const ReconCheckpoint& ckpt) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& [r, n_acs] : ckpt.mask_grid) grid.push_back({r, n_acs});
  CheckpointBlob blob;
  blob.header = {
      {"kind", "recon"},
      {"config",
       {{"num_cascades", ckpt.cfg.num_cascades},
        {"refiner_base", ckpt.cfg.refiner_base},
        {"refiner_depth", ckpt.cfg.refiner_depth},
        {"dc_weight_init", ckpt.cfg.dc_weight_init}}},
      {"mask_grid", std::move(grid)},
      {"mask_kind", to_string(ckpt.mask_kind)},
      {"meta",
       {{"phase_source", ckpt.phase_source},
        {"seed", ckpt.seed},
        {"steps", ckpt.steps},
        {"final_train_loss", ckpt.final_train_loss},
        {"best_val_loss", std::isfinite(ckpt.best_val_loss) ? ckpt.best_val_loss : -1.0}}}};
  blob.params = ckpt.params;
  save_checkpoint(path, blob);
}

ReconCheckpoint load_recon_checkpoint(const std::filesystem::path& path) {
  CheckpointBlob blob = load_checkpoint(path);
  if (blob.header.at("kind") != "recon")
    throw io_error("not a recon checkpoint: " + path.string());
  ReconCheckpoint ckpt;
  const auto& cfg = blob.header.at("config");
  ckpt.cfg.num_cascades = cfg.at("num_cascades").get<int>();
  ckpt.cfg.refiner_base = cfg.at("refiner_base").get<int>();
  ckpt.cfg.refiner_depth = cfg.at("refiner_depth").get<int>();
  ckpt.cfg.dc_weight_init = cfg.at("dc_weight_init").get<double>();
  for (const auto& g : blob.header.at("mask_grid"))
    ckpt.mask_grid.emplace_back(g[0].get<int>(), g[1].get<int>());
  ckpt.mask_kind = mask_kind_from_string(blob.header.at("mask_kind").get<std::string>());
  const auto& meta = blob.header.at("meta");
  ckpt.phase_source = meta.at("phase_source").get<std::string>();
  ckpt.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.steps = meta.at("steps").get<std::int64_t>();
  ckpt.final_train_loss = meta.at("final_train_loss").get<double>();
  ckpt.best_val_loss = meta.at("best_val_loss").get<double>();
  if (ckpt.best_val_loss < 0.0)
    ckpt.best_val_loss = std::numeric_limits<double>::quiet_NaN();
  ckpt.params = std::move(blob.params);
  return ckpt;
}

MetricReport evaluate_recon(const VarNet& model, const std::string& phase_source,
                            const std::vector<const SliceRecord*>& test,
                            const MaskGrid& grid, MaskKind kind) {
  if (test.empty()) throw config_error("evaluate_recon: empty test set");
  std::vector<PreparedRecord> prepared;
  for (const auto* r : test) prepared.push_back(prepare(*r));
  const std::size_t n_lines = prepared[0].target.dim(1);

  MetricReport report;
  for (const auto& [r, n_acs] : grid) {
    const SamplingMask mask = make_mask(n_lines, r, n_acs, kind, /*seed=*/0);
    const double r_eff = effective_acceleration(mask);

    std::vector<double> model_nrmse(prepared.size()), model_psnr(prepared.size()),
        model_ssim(prepared.size());
    std::vector<double> zf_nrmse(prepared.size()), zf_psnr(prepared.size()),
        zf_ssim(prepared.size());

#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(prepared.size()); ++i) {
      const auto& pr = prepared[static_cast<std::size_t>(i)];
      const CImage masked = apply_mask(*pr.rec->kspace, mask);
      const Tensor recon = model.reconstruct(masked, mask);
      const Tensor zf = zero_filled_recon(masked);
      const auto idx = static_cast<std::size_t>(i);
      model_nrmse[idx] = nrmse(pr.target, recon);
      model_psnr[idx] = psnr(pr.target, recon, pr.data_range);
      model_ssim[idx] = ssim(pr.target, recon, pr.data_range);
      zf_nrmse[idx] = nrmse(pr.target, zf);
      zf_psnr[idx] = psnr(pr.target, zf, pr.data_range);
      zf_ssim[idx] = ssim(pr.target, zf, pr.data_range);
    }

    auto push = [&](const std::string& method, const std::string& source,
                    const std::string& metric, const std::vector<double>& vals) {
      report.rows.push_back({method, source, r, n_acs, r_eff, metric, mean_of(vals),
                             std_of(vals), vals.size()});
    };
    push("varnet", phase_source, "nrmse", model_nrmse);
    push("varnet", phase_source, "psnr", model_psnr);
    push("varnet", phase_source, "ssim", model_ssim);
    push("zero_filled", "", "nrmse", zf_nrmse);
    push("zero_filled", "", "psnr", zf_psnr);
    push("zero_filled", "", "ssim", zf_ssim);
  }
  return report;
}

}  // namespace phaseforge
