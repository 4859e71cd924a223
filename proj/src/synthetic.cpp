#include "dta/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "dta/dataset.hpp"
#include "dta/pgm.hpp"
#include "dta/rng.hpp"

namespace fs = std::filesystem;

namespace dta {

namespace {

// Bilinearly upsampled coarse random grid: cheap smooth texture.
std::vector<double> smooth_noise(RngState& rng, int64_t size, int64_t coarse) {
  std::vector<double> grid(static_cast<size_t>(coarse * coarse));
  for (double& v : grid) v = rng.u01();
  std::vector<double> out(static_cast<size_t>(size * size));
  double scale = static_cast<double>(coarse - 1) / static_cast<double>(size - 1);
  for (int64_t r = 0; r < size; ++r)
    for (int64_t c = 0; c < size; ++c) {
      double gr = static_cast<double>(r) * scale;
      double gc = static_cast<double>(c) * scale;
      int64_t r0 = std::min<int64_t>(coarse - 2, static_cast<int64_t>(gr));
      int64_t c0 = std::min<int64_t>(coarse - 2, static_cast<int64_t>(gc));
      double fr = gr - static_cast<double>(r0);
      double fc = gc - static_cast<double>(c0);
      double v = (1 - fr) * ((1 - fc) * grid[static_cast<size_t>(r0 * coarse + c0)] +
                             fc * grid[static_cast<size_t>(r0 * coarse + c0 + 1)]) +
                 fr * ((1 - fc) * grid[static_cast<size_t>((r0 + 1) * coarse + c0)] +
                       fc * grid[static_cast<size_t>((r0 + 1) * coarse + c0 + 1)]);
      out[static_cast<size_t>(r * size + c)] = v;
    }
  return out;
}

struct Ellipse {
  double cy, cx, a, b, phi;

  bool contains(double y, double x) const {
    double dy = y - cy, dx = x - cx;
    double u = std::cos(phi) * dx + std::sin(phi) * dy;
    double v = -std::sin(phi) * dx + std::cos(phi) * dy;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

void paint_ellipse(std::vector<int32_t>& mask, int64_t size, const Ellipse& e, int32_t label) {
  for (int64_t r = 0; r < size; ++r)
    for (int64_t c = 0; c < size; ++c)
      if (e.contains(static_cast<double>(r), static_cast<double>(c)))
        mask[static_cast<size_t>(r * size + c)] = label;
}

ImageU8 mask_to_pgm(int64_t size, const std::vector<int32_t>& mask) {
  ImageU8 img;
  img.w = size;
  img.h = size;
  img.pix.resize(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) img.pix[i] = static_cast<uint8_t>(mask[i]);
  return img;
}

}  // namespace

std::string generate_synthetic(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.size % 16 != 0)
    throw std::invalid_argument("generate: size must be divisible by 16");
  if (cfg.count < cfg.folds)
    throw std::invalid_argument("generate: need at least one sample per fold");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "lesion", ec);
  fs::create_directories(fs::path(out_dir) / "organ", ec);
  if (!fs::is_directory(fs::path(out_dir) / "images"))
    throw std::runtime_error("generate: cannot create " + out_dir);

  RngState root(cfg.seed);
  int64_t size = cfg.size;
  double fsize = static_cast<double>(size);
  std::vector<ManifestRecord> records;
  std::vector<int> folds = kfold_split(cfg.count, cfg.folds, root.stream("folds"));

  for (int64_t i = 0; i < cfg.count; ++i) {
    char idbuf[24];
    std::snprintf(idbuf, sizeof idbuf, "s%04lld", static_cast<long long>(i));
    std::string id = idbuf;
    RngState rng = root.stream("sample." + id);

    std::vector<double> bg = smooth_noise(rng, size, 9);
    std::vector<double> organ_tex = smooth_noise(rng, size, 7);
    std::vector<int32_t> organ(static_cast<size_t>(size * size), 0);

    int n_ell = rng.u01() < 0.5 ? 1 : 2;
    Ellipse first{rng.uniform(0.34, 0.66) * fsize, rng.uniform(0.34, 0.66) * fsize,
                  rng.uniform(0.17, 0.30) * fsize, rng.uniform(0.17, 0.30) * fsize,
                  rng.uniform(0.0, 3.141592653589793)};
    paint_ellipse(organ, size, first, 1);
    if (n_ell == 2) {
      Ellipse second{first.cy + rng.uniform(-0.12, 0.12) * fsize,
                     first.cx + rng.uniform(-0.12, 0.12) * fsize,
                     rng.uniform(0.12, 0.22) * fsize, rng.uniform(0.12, 0.22) * fsize,
                     rng.uniform(0.0, 3.141592653589793)};
      paint_ellipse(organ, size, second, 1);
    }

    std::vector<int32_t> lesion(static_cast<size_t>(size * size), 0);
    int n_les = rng.u01() < 0.2 ? 0 : 1 + static_cast<int>(rng.uniform_int(4));
    for (int l = 0; l < n_les; ++l) {
      // center on an organ pixel; intersecting with the organ afterwards
      // guarantees lesion strictly inside it
      double cy = first.cy, cx = first.cx;
      for (int attempt = 0; attempt < 200; ++attempt) {
        double ty = rng.uniform(0.0, fsize - 1.0);
        double tx = rng.uniform(0.0, fsize - 1.0);
        if (organ[static_cast<size_t>(std::lround(ty) * size + std::lround(tx))] == 1) {
          cy = ty;
          cx = tx;
          break;
        }
      }
      Ellipse blob{cy, cx, rng.uniform(0.05, 0.11) * fsize, rng.uniform(0.05, 0.11) * fsize,
                   rng.uniform(0.0, 3.141592653589793)};
      int32_t label = 1;
      if (cfg.multiclass) label = rng.u01() < 0.5 ? 1 : 2;
      for (int64_t r = 0; r < size; ++r)
        for (int64_t c = 0; c < size; ++c) {
          size_t o = static_cast<size_t>(r * size + c);
          if (organ[o] == 1 && blob.contains(static_cast<double>(r), static_cast<double>(c)))
            lesion[o] = label;
        }
    }

    std::vector<float> img(static_cast<size_t>(size * size));
    for (int64_t p = 0; p < size * size; ++p) {
      size_t o = static_cast<size_t>(p);
      double v = 0.08 + 0.10 * bg[o];
      if (organ[o] == 1) v = 0.45 + 0.10 * organ_tex[o];
      if (lesion[o] == 1) v = cfg.multiclass ? 0.70 + 0.05 * organ_tex[o] + rng.uniform(-0.05, 0.05)
                                             : 0.78 + 0.06 * organ_tex[o];
      if (lesion[o] == 2) v = 0.90 + 0.04 * organ_tex[o];
      v += rng.normal() * 0.05;
      img[o] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }

    write_pgm((fs::path(out_dir) / "images" / (id + ".pgm")).string(),
              from_unit_floats(size, size, img));
    write_pgm((fs::path(out_dir) / "lesion" / (id + ".pgm")).string(), mask_to_pgm(size, lesion));
    write_pgm((fs::path(out_dir) / "organ" / (id + ".pgm")).string(), mask_to_pgm(size, organ));

    ManifestRecord r;
    r.id = id;
    r.image = "images/" + id + ".pgm";
    r.lesion = "lesion/" + id + ".pgm";
    r.organ = "organ/" + id + ".pgm";
    r.fold = folds[static_cast<size_t>(i)];
    records.push_back(std::move(r));
  }

  std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  write_manifest(manifest_path, records);
  return manifest_path;
}

}  // namespace dta
