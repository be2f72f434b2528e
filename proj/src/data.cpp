#include "phaseforge/data.hpp"

#include <hdf5.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "phaseforge/errors.hpp"
#include "phaseforge/fft.hpp"
#include "phaseforge/phase_ops.hpp"
#include "phaseforge/rng.hpp"

namespace phaseforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<const SliceRecord*> Dataset::select_gen(const std::string& split) const {
  std::vector<const SliceRecord*> out;
  for (const auto& r : records) {
    auto it = manifest.gen_split.find(r.patient_id);
    if (it != manifest.gen_split.end() && it->second == split) out.push_back(&r);
  }
  return out;
}

std::vector<const SliceRecord*> Dataset::select_rec(const std::string& split) const {
  std::vector<const SliceRecord*> out;
  for (const auto& r : records) {
    auto it = manifest.rec_split.find(r.patient_id);
    if (it != manifest.rec_split.end() && it->second == split) out.push_back(&r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Phantom generation

namespace {

struct Ellipse {
  double cx, cy, ax, ay, theta, intensity, phase_offset;
};

bool inside(const Ellipse& e, double u, double v) {
  const double du = u - e.cx, dv = v - e.cy;
  const double ct = std::cos(e.theta), st = std::sin(e.theta);
  const double ru = (du * ct + dv * st) / e.ax;
  const double rv = (-du * st + dv * ct) / e.ay;
  return ru * ru + rv * rv <= 1.0;
}

}  // namespace

SliceRecord generate_phantom(std::uint64_t seed, std::size_t size, const PhantomConfig& cfg) {
  if (size < 16) throw contract_error("generate_phantom: size must be >= 16");

  Rng rng(seed);
  std::vector<Ellipse> ellipses;

  Ellipse body;
  body.cx = rng.uniform(-0.08, 0.08);
  body.cy = rng.uniform(-0.08, 0.08);
  body.ax = rng.uniform(0.55, 0.8);
  body.ay = rng.uniform(0.55, 0.8);
  body.theta = rng.uniform(0.0, 3.141592653589793);
  body.intensity = rng.uniform(0.35, 0.6);
  body.phase_offset = rng.uniform(-cfg.offset_range / 2.0, cfg.offset_range / 2.0);
  ellipses.push_back(body);

  const int extra = cfg.min_ellipses +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(
                        cfg.max_ellipses - cfg.min_ellipses + 1)));
  for (int i = 0; i < extra; ++i) {
    Ellipse e;
    e.cx = body.cx + rng.uniform(-0.45, 0.45) * body.ax;
    e.cy = body.cy + rng.uniform(-0.45, 0.45) * body.ay;
    e.ax = rng.uniform(0.07, 0.3);
    e.ay = rng.uniform(0.07, 0.3);
    e.theta = rng.uniform(0.0, 3.141592653589793);
    e.intensity = rng.uniform(0.1, 0.4) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    e.phase_offset = rng.uniform(-cfg.offset_range / 2.0, cfg.offset_range / 2.0);
    ellipses.push_back(e);
  }

  // Low-order polynomial phase trend over [-1,1]^2.
  std::vector<double> poly(6, 0.0);
  poly[0] = rng.uniform(-1.2, 1.2);
  poly[1] = rng.uniform(-1.0, 1.0);
  poly[2] = rng.uniform(-1.0, 1.0);
  if (cfg.poly_order >= 2) {
    poly[3] = rng.uniform(-0.8, 0.8);
    poly[4] = rng.uniform(-0.8, 0.8);
    poly[5] = rng.uniform(-0.8, 0.8);
  }

  Tensor mag({size, size});
  Tensor phase({size, size});
  for (std::size_t r = 0; r < size; ++r) {
    const double v = 2.0 * (static_cast<double>(r) + 0.5) / static_cast<double>(size) - 1.0;
    for (std::size_t c = 0; c < size; ++c) {
      const double u = 2.0 * (static_cast<double>(c) + 0.5) / static_cast<double>(size) - 1.0;
      double m = 0.0;
      double ph = poly[0] + poly[1] * u + poly[2] * v + poly[3] * u * u +
                  poly[4] * u * v + poly[5] * v * v;
      for (const auto& e : ellipses) {
        if (inside(e, u, v)) {
          m += e.intensity;
          ph += e.phase_offset;
        }
      }
      mag.at(r, c) = std::clamp(m, 0.0, 1.0);
      phase.at(r, c) = ph;
    }
  }
  for (std::size_t i = 0; i < phase.size(); ++i)
    phase[i] += cfg.background_noise_std * rng.normal();

  SliceRecord rec;
  rec.patient_id = "phantom";
  rec.slice_index = 0;
  auto [norm, scale] = normalize_magnitude(mag);
  rec.magnitude = std::move(norm);
  rec.norm_scale = scale;
  rec.phase = wrap_phase(phase);
  rec.provenance = {"phantom", seed, ""};
  return rec;
}

// ---------------------------------------------------------------------------
// Preprocessing

std::pair<Tensor, Tensor> center_crop_resize(const CImage& kspace, std::size_t target) {
  const std::size_t m = std::min(kspace.rows(), kspace.cols());
  if (target > m) throw contract_error("center_crop_resize: target larger than source");

  const std::size_t r0 = (kspace.rows() - m) / 2;
  const std::size_t c0 = (kspace.cols() - m) / 2;
  CImage crop(m, m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < m; ++c) crop.at(r, c) = kspace.at(r0 + r, c0 + c);

  const CImage img = resize_bilinear(ifft2c(crop), target, target);
  return {magnitude_of(img), phase_of(img)};
}

std::pair<Tensor, double> normalize_magnitude(const Tensor& raw) {
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (raw[i] < 0.0) throw contract_error("normalize_magnitude: negative input");

  std::vector<double> sorted(raw.raw());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const std::size_t idx =
      std::min(n - 1, static_cast<std::size_t>(std::ceil(0.995 * static_cast<double>(n))) - 1);
  double scale = sorted[idx];
  if (scale == 0.0) scale = sorted.back();  // nearly-empty slice: fall back to max
  if (scale == 0.0) {
    Tensor zeros(raw.shape());
    return {zeros, 1.0};
  }
  Tensor out = raw;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(1.0, out[i] / scale);
  return {out, scale};
}

// ---------------------------------------------------------------------------
// Splits

namespace {

std::vector<std::size_t> split_counts(std::size_t n, const std::array<double, 3>& ratios) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw config_error("split ratios must sum to 1");
  std::vector<std::size_t> counts(3);
  std::vector<std::pair<double, std::size_t>> rem(3);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = {exact - static_cast<double>(counts[i]), i};
    assigned += counts[i];
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) counts[rem[k % 3].second]++;
  return counts;
}

std::map<std::string, std::string> assign_split(std::vector<std::string> patients,
                                                const std::array<double, 3>& ratios,
                                                const std::array<const char*, 3>& names,
                                                std::uint64_t seed) {
  std::size_t nonzero = 0;
  for (double r : ratios)
    if (r > 0.0) ++nonzero;
  if (patients.size() < nonzero)
    throw config_error("split_dataset: fewer patients than requested splits");

  std::sort(patients.begin(), patients.end());
  std::mt19937_64 gen(seed);
  std::shuffle(patients.begin(), patients.end(), gen);

  const auto counts = split_counts(patients.size(), ratios);
  std::map<std::string, std::string> out;
  std::size_t at = 0;
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < counts[g]; ++i) out[patients[at++]] = names[g];
  return out;
}

}  // namespace

void split_dataset(Dataset& ds, const std::array<double, 3>& gen_ratios,
                   const std::array<double, 3>& rec_ratios, std::uint64_t seed) {
  std::vector<std::string> patients;
  for (const auto& r : ds.records)
    if (std::find(patients.begin(), patients.end(), r.patient_id) == patients.end())
      patients.push_back(r.patient_id);

  ds.manifest.gen_split = assign_split(patients, gen_ratios,
                                       {"genTrain", "genVal", "genTest"}, seed);

  std::vector<std::string> test_patients;
  for (const auto& [p, s] : ds.manifest.gen_split)
    if (s == "genTest") test_patients.push_back(p);
  ds.manifest.rec_split = assign_split(test_patients, rec_ratios,
                                       {"recTrain", "recVal", "recTest"},
                                       derive_seed(seed, "rec-split"));
}

// ---------------------------------------------------------------------------
// HDF5 ingestion

namespace {

struct H5Closer {
  herr_t (*close)(hid_t);
  hid_t id;
  ~H5Closer() {
    if (id >= 0) close(id);
  }
};

}  // namespace

std::vector<SliceRecord> ingest_hdf5_kspace(const fs::path& path, std::size_t target_size) {
  const hid_t file = H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
  if (file < 0) throw io_error("ingest: cannot open HDF5 file " + path.string());
  H5Closer file_closer{H5Fclose, file};

  if (H5Lexists(file, "kspace", H5P_DEFAULT) <= 0)
    throw io_error("ingest: no 'kspace' dataset in " + path.string());

  const hid_t dset = H5Dopen2(file, "kspace", H5P_DEFAULT);
  if (dset < 0) throw io_error("ingest: cannot open 'kspace' in " + path.string());
  H5Closer dset_closer{H5Dclose, dset};

  const hid_t space = H5Dget_space(dset);
  H5Closer space_closer{H5Sclose, space};
  const int rank = H5Sget_simple_extent_ndims(space);
  if (rank == 4)
    throw io_error("ingest: multi-coil unsupported (4-D kspace) in " + path.string());
  if (rank != 3)
    throw io_error("ingest: expected 3-D (slices, H, W) kspace in " + path.string());
  hsize_t dims[3];
  H5Sget_simple_extent_dims(space, dims, nullptr);
  const std::size_t slices = dims[0], h = dims[1], w = dims[2];
  if (target_size > std::min(h, w))
    throw io_error("ingest: target size exceeds source k-space in " + path.string());

  const hid_t ftype = H5Dget_type(dset);
  H5Closer ftype_closer{H5Tclose, ftype};
  if (H5Tget_class(ftype) != H5T_COMPOUND || H5Tget_nmembers(ftype) != 2)
    throw io_error("ingest: 'kspace' is not complex (2-member compound) in " + path.string());

  // Read through a double-pair compound matching the file's member names
  // (h5py writes {'r','i'}).
  char* name0 = H5Tget_member_name(ftype, 0);
  char* name1 = H5Tget_member_name(ftype, 1);
  const hid_t mtype = H5Tcreate(H5T_COMPOUND, 2 * sizeof(double));
  H5Tinsert(mtype, name0, 0, H5T_NATIVE_DOUBLE);
  H5Tinsert(mtype, name1, sizeof(double), H5T_NATIVE_DOUBLE);
  H5free_memory(name0);
  H5free_memory(name1);
  H5Closer mtype_closer{H5Tclose, mtype};

  std::vector<double> buf(slices * h * w * 2);
  if (H5Dread(dset, mtype, H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.data()) < 0)
    throw io_error("ingest: failed reading 'kspace' from " + path.string());

  std::vector<SliceRecord> out;
  out.reserve(slices);
  const std::string patient = path.stem().string();
  for (std::size_t s = 0; s < slices; ++s) {
    CImage k(h, w);
    const double* p = buf.data() + s * h * w * 2;
    for (std::size_t i = 0; i < h * w; ++i) k[i] = {p[2 * i], p[2 * i + 1]};

    auto [mag, phase] = center_crop_resize(k, target_size);
    auto [norm, scale] = normalize_magnitude(mag);

    SliceRecord rec;
    rec.patient_id = patient;
    rec.slice_index = static_cast<int>(s);
    rec.magnitude = std::move(norm);
    rec.norm_scale = scale;
    rec.phase = std::move(phase);
    // Store k-space consistent with the stored magnitude/phase.
    rec.kspace = assemble_kspace(rec.magnitude, *rec.phase);
    rec.provenance = {"ingested", 0, path.string()};
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Container IO

namespace {

constexpr char kArrayMagic[] = "PFARRAY1";

void write_array_file(const fs::path& path, const std::string& dtype,
                      std::size_t rows, std::size_t cols, const void* bytes,
                      std::size_t nbytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("cannot write " + path.string());
  json header{{"dtype", dtype}, {"shape", {rows, cols}}};
  f << kArrayMagic << '\n' << header.dump() << '\n';
  f.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(nbytes));
  if (!f) throw io_error("short write to " + path.string());
}

json read_array_header(std::ifstream& f, const fs::path& path) {
  std::string magic, header;
  std::getline(f, magic);
  std::getline(f, header);
  if (magic != kArrayMagic) throw io_error("bad array magic in " + path.string());
  return json::parse(header);
}

std::string record_stem(const SliceRecord& r) {
  return r.patient_id + "_" + std::to_string(r.slice_index);
}

}  // namespace

void write_array(const fs::path& path, const Tensor& t) {
  if (t.rank() != 2) throw contract_error("write_array: expects 2-D tensors");
  write_array_file(path, "f64", t.dim(0), t.dim(1), t.data(), t.size() * sizeof(double));
}

void write_array(const fs::path& path, const CImage& img) {
  write_array_file(path, "c128", img.rows(), img.cols(), img.data(),
                   img.size() * 2 * sizeof(double));
}

Tensor read_array_real(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot read " + path.string());
  const json h = read_array_header(f, path);
  if (h.at("dtype") != "f64") throw io_error("expected f64 array in " + path.string());
  Tensor t({h.at("shape")[0].get<std::size_t>(), h.at("shape")[1].get<std::size_t>()});
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!f) throw io_error("short read from " + path.string());
  return t;
}

CImage read_array_complex(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot read " + path.string());
  const json h = read_array_header(f, path);
  if (h.at("dtype") != "c128") throw io_error("expected c128 array in " + path.string());
  CImage img(h.at("shape")[0].get<std::size_t>(), h.at("shape")[1].get<std::size_t>());
  f.read(reinterpret_cast<char*>(img.data()),
         static_cast<std::streamsize>(img.size() * 2 * sizeof(double)));
  if (!f) throw io_error("short read from " + path.string());
  return img;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "arrays");

  json records = json::array();
  for (const auto& r : ds.records) {
    const std::string stem = record_stem(r);
    json jr{{"patient_id", r.patient_id},
            {"slice_index", r.slice_index},
            {"norm_scale", r.norm_scale},
            {"provenance",
             {{"kind", r.provenance.kind}, {"seed", r.provenance.seed}, {"source", r.provenance.source}}}};

    const std::string mag_file = "arrays/" + stem + "_mag.pfa";
    write_array(dir / mag_file, r.magnitude);
    jr["magnitude"] = mag_file;

    if (r.phase) {
      const std::string phase_file = "arrays/" + stem + "_phase.pfa";
      write_array(dir / phase_file, *r.phase);
      jr["phase"] = phase_file;
    } else {
      jr["phase"] = nullptr;
    }
    if (r.kspace) {
      const std::string k_file = "arrays/" + stem + "_kspace.pfa";
      write_array(dir / k_file, *r.kspace);
      jr["kspace"] = k_file;
    } else {
      jr["kspace"] = nullptr;
    }
    records.push_back(std::move(jr));
  }

  json manifest{{"format_version", ds.manifest.format_version},
                {"image_size", ds.manifest.image_size},
                {"seed", ds.manifest.seed},
                {"gen_split", ds.manifest.gen_split},
                {"rec_split", ds.manifest.rec_split},
                {"records", std::move(records)}};
  if (!ds.manifest.phase_source.empty()) manifest["phase_source"] = ds.manifest.phase_source;

  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw io_error("cannot write manifest in " + dir.string());
  f << manifest.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw io_error("cannot read manifest in " + dir.string());
  json manifest = json::parse(f);

  Dataset ds;
  ds.manifest.format_version = manifest.at("format_version").get<int>();
  if (ds.manifest.format_version != 1)
    throw io_error("unsupported dataset format_version in " + dir.string());
  ds.manifest.image_size = manifest.at("image_size").get<std::size_t>();
  ds.manifest.seed = manifest.at("seed").get<std::uint64_t>();
  if (manifest.contains("phase_source"))
    ds.manifest.phase_source = manifest.at("phase_source").get<std::string>();
  ds.manifest.gen_split =
      manifest.at("gen_split").get<std::map<std::string, std::string>>();
  ds.manifest.rec_split =
      manifest.at("rec_split").get<std::map<std::string, std::string>>();

  for (const auto& jr : manifest.at("records")) {
    SliceRecord r;
    r.patient_id = jr.at("patient_id").get<std::string>();
    r.slice_index = jr.at("slice_index").get<int>();
    r.norm_scale = jr.at("norm_scale").get<double>();
    const auto& prov = jr.at("provenance");
    r.provenance = {prov.at("kind").get<std::string>(), prov.at("seed").get<std::uint64_t>(),
                    prov.at("source").get<std::string>()};
    r.magnitude = read_array_real(dir / jr.at("magnitude").get<std::string>());
    if (!jr.at("phase").is_null())
      r.phase = read_array_real(dir / jr.at("phase").get<std::string>());
    if (!jr.at("kspace").is_null())
      r.kspace = read_array_complex(dir / jr.at("kspace").get<std::string>());
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace phaseforge
