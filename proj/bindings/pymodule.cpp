#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "phaseforge/data.hpp"
#include "phaseforge/fft.hpp"
#include "phaseforge/mask.hpp"
#include "phaseforge/metrics.hpp"
#include "phaseforge/phase_ops.hpp"
#include "phaseforge/score.hpp"
#include "phaseforge/sde.hpp"
#include "phaseforge/synthesis.hpp"
#include "phaseforge/varnet.hpp"

namespace py = pybind11;
using namespace phaseforge;

namespace {

using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ComplexArray = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const RealArray& a) {
  if (a.ndim() != 2) throw contract_error("expected a 2-D float array");
  Tensor t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
  std::copy(a.data(), a.data() + t.size(), t.data());
  return t;
}

RealArray array_from(const Tensor& t) {
  if (t.rank() != 2) throw contract_error("expected a 2-D tensor");
  RealArray out({t.dim(0), t.dim(1)});
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

CImage cimage_from(const ComplexArray& a) {
  if (a.ndim() != 2) throw contract_error("expected a 2-D complex array");
  CImage img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + img.size(), img.data());
  return img;
}

ComplexArray array_from(const CImage& img) {
  ComplexArray out({img.rows(), img.cols()});
  std::copy(img.data(), img.data() + img.size(), out.mutable_data());
  return out;
}

SamplingMask mask_from_lines(const py::array_t<bool, py::array::c_style | py::array::forcecast>& lines) {
  SamplingMask mask;
  mask.lines.resize(static_cast<std::size_t>(lines.size()));
  for (py::ssize_t i = 0; i < lines.size(); ++i)
    mask.lines[static_cast<std::size_t>(i)] = lines.data()[i] ? 1 : 0;
  return mask;
}

}  // namespace

PYBIND11_MODULE(_phaseforge, m) {
  m.doc() = "Core operations: VE-SDE schedule, phase synthesis, k-space masks, "
            "reconstruction and image metrics";

  py::register_exception<contract_error>(m, "ContractError", PyExc_ValueError);
  py::register_exception<config_error>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<io_error>(m, "IoError", PyExc_IOError);
  py::register_exception<numeric_error>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def(py::init<double, double, int, double>(), py::arg("sigma_min") = 0.01,
           py::arg("sigma_max") = 378.0, py::arg("t_steps") = 1000,
           py::arg("eps") = 1e-5)
      .def_readonly("sigma_min", &NoiseSchedule::sigma_min)
      .def_readonly("sigma_max", &NoiseSchedule::sigma_max)
      .def_readonly("t_steps", &NoiseSchedule::t_steps)
      .def_readonly("eps", &NoiseSchedule::eps)
      .def("sigma_at", &NoiseSchedule::sigma_at, py::arg("t"))
      .def("diffusion_coeff", &NoiseSchedule::diffusion_coeff, py::arg("t"))
      .def("discretize_times", &NoiseSchedule::discretize_times);

  m.def("marginal_perturb",
        [](const NoiseSchedule& sched, const RealArray& x0, double t, std::uint64_t seed) {
          Rng rng(seed);
          auto [xt, z] = marginal_perturb(sched, tensor_from(x0), t, rng);
          return py::make_tuple(array_from(xt), array_from(z));
        },
        py::arg("schedule"), py::arg("x0"), py::arg("t"), py::arg("seed"));

  m.def("wrap_phase",
        [](const RealArray& raw) { return array_from(wrap_phase(tensor_from(raw))); },
        py::arg("raw"));

  m.def("assemble_kspace",
        [](const RealArray& magnitude, const RealArray& phase) {
          return array_from(assemble_kspace(tensor_from(magnitude), tensor_from(phase)));
        },
        py::arg("magnitude"), py::arg("phase"));

  m.def("fft2c", [](const ComplexArray& img) { return array_from(fft2c(cimage_from(img))); });
  m.def("ifft2c", [](const ComplexArray& img) { return array_from(ifft2c(cimage_from(img))); });

  m.def("smooth_phase",
        [](std::size_t rows, std::size_t cols, std::uint64_t seed, int low_res,
           double amplitude) {
          Rng rng(seed);
          return array_from(smooth_phase_baseline(rows, cols, rng, low_res, amplitude));
        },
        py::arg("rows"), py::arg("cols"), py::arg("seed"), py::arg("low_res") = 8,
        py::arg("amplitude") = 1.5707963267948966);

  m.def("generate_phantom",
        [](std::uint64_t seed, std::size_t size) {
          const SliceRecord rec = generate_phantom(seed, size);
          return py::make_tuple(array_from(rec.magnitude), array_from(*rec.phase));
        },
        py::arg("seed"), py::arg("size"));

  m.def("center_crop_resize",
        [](const ComplexArray& kspace, std::size_t target) {
          auto [mag, phase] = center_crop_resize(cimage_from(kspace), target);
          return py::make_tuple(array_from(mag), array_from(phase));
        },
        py::arg("kspace"), py::arg("target"));

  m.def("normalize_magnitude",
        [](const RealArray& raw) {
          auto [out, scale] = normalize_magnitude(tensor_from(raw));
          return py::make_tuple(array_from(out), scale);
        },
        py::arg("raw"));

  m.def("make_mask",
        [](std::size_t n, int r, int n_acs, const std::string& kind, std::uint64_t seed) {
          const SamplingMask mask = make_mask(n, r, n_acs, mask_kind_from_string(kind), seed);
          py::array_t<bool> lines(static_cast<py::ssize_t>(mask.size()));
          for (std::size_t i = 0; i < mask.size(); ++i)
            lines.mutable_data()[i] = mask.lines[i] != 0;
          return lines;
        },
        py::arg("n"), py::arg("r"), py::arg("n_acs"), py::arg("kind") = "equispaced",
        py::arg("seed") = 0);

  m.def("effective_acceleration",
        [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& lines) {
          return effective_acceleration(mask_from_lines(lines));
        },
        py::arg("lines"));

  m.def("apply_mask",
        [](const ComplexArray& kspace,
           const py::array_t<bool, py::array::c_style | py::array::forcecast>& lines) {
          return array_from(apply_mask(cimage_from(kspace), mask_from_lines(lines)));
        },
        py::arg("kspace"), py::arg("lines"));

  m.def("zero_filled_recon",
        [](const ComplexArray& kspace) {
          return array_from(zero_filled_recon(cimage_from(kspace)));
        },
        py::arg("kspace_masked"));

  m.def("nrmse",
        [](const RealArray& gt, const RealArray& est) {
          return nrmse(tensor_from(gt), tensor_from(est));
        },
        py::arg("gt"), py::arg("est"));
  m.def("psnr",
        [](const RealArray& gt, const RealArray& est, double data_range) {
          return psnr(tensor_from(gt), tensor_from(est), data_range);
        },
        py::arg("gt"), py::arg("est"), py::arg("data_range"));
  m.def("ssim",
        [](const RealArray& gt, const RealArray& est, double data_range, int window) {
          return ssim(tensor_from(gt), tensor_from(est), data_range, window);
        },
        py::arg("gt"), py::arg("est"), py::arg("data_range"), py::arg("window") = 7);

  m.def("embed_features",
        [](const std::vector<RealArray>& images, std::uint64_t seed, int dim) {
          std::vector<Tensor> tensors;
          tensors.reserve(images.size());
          for (const auto& img : images) tensors.push_back(tensor_from(img));
          const FeatureStats st = embed_features(tensors, random_conv_extractor(seed, dim));
          py::array_t<double> mean(static_cast<py::ssize_t>(st.mean.size()));
          std::copy(st.mean.data(), st.mean.data() + st.mean.size(), mean.mutable_data());
          py::array_t<double> cov({st.cov.rows(), st.cov.cols()});
          for (Eigen::Index i = 0; i < st.cov.rows(); ++i)
            for (Eigen::Index j = 0; j < st.cov.cols(); ++j)
              cov.mutable_data()[i * st.cov.cols() + j] = st.cov(i, j);
          return py::make_tuple(mean, cov);
        },
        py::arg("images"), py::arg("seed") = 17, py::arg("dim") = 64);

  m.def("frechet_distance",
        [](const RealArray& mean_a, const RealArray& cov_a, const RealArray& mean_b,
           const RealArray& cov_b) {
          auto stats = [](const RealArray& mean, const RealArray& cov) {
            FeatureStats st;
            st.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
            st.cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                    Eigen::RowMajor>>(
                cov.data(), cov.shape(0), cov.shape(1));
            st.n = 1;
            return st;
          };
          return frechet_distance(stats(mean_a, cov_a), stats(mean_b, cov_b));
        },
        py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));

  m.def("sample_phase",
        [](const std::string& checkpoint_path, const RealArray& magnitude,
           int predictor_steps, int corrector_steps, double snr, std::uint64_t seed) {
          const ScoreModel model =
              model_from_checkpoint(load_score_checkpoint(checkpoint_path));
          SamplerConfig cfg;
          cfg.predictor_steps = predictor_steps;
          cfg.corrector_steps = corrector_steps;
          cfg.snr = snr;
          Rng rng(seed);
          return array_from(sample_phase(model, tensor_from(magnitude), cfg, rng));
        },
        py::arg("checkpoint_path"), py::arg("magnitude"), py::arg("predictor_steps") = 200,
        py::arg("corrector_steps") = 1, py::arg("snr") = 0.16, py::arg("seed") = 0);

  m.def("varnet_reconstruct",
        [](const std::string& checkpoint_path, const ComplexArray& masked_kspace,
           const py::array_t<bool, py::array::c_style | py::array::forcecast>& lines) {
          const VarNet net = varnet_from_checkpoint(load_recon_checkpoint(checkpoint_path));
          return array_from(net.reconstruct(cimage_from(masked_kspace), mask_from_lines(lines)));
        },
        py::arg("checkpoint_path"), py::arg("masked_kspace"), py::arg("lines"));
}
