#include "dta/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace dta {

namespace {
constexpr const char* kManifestHeader = "dtrattunet-manifest v1";
constexpr double kDegToRad = 0.017453292519943295;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw std::runtime_error("manifest: bad header in " + path);
  Manifest m;
  m.dir = fs::path(path).parent_path().string();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRecord r;
    std::string fold;
    if (!std::getline(ls, r.id, '\t') || !std::getline(ls, r.image, '\t') ||
        !std::getline(ls, r.lesion, '\t') || !std::getline(ls, r.organ, '\t') ||
        !std::getline(ls, fold))
      throw std::runtime_error("manifest: malformed record in " + path);
    r.fold = std::stoi(fold);
    for (const std::string* p : {&r.image, &r.lesion, &r.organ})
      if (!fs::exists(fs::path(m.dir) / *p))
        throw std::runtime_error("manifest: missing file " + *p);
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write " + path);
  out << kManifestHeader << "\n";
  for (const auto& r : records)
    out << r.id << '\t' << r.image << '\t' << r.lesion << '\t' << r.organ << '\t' << r.fold
        << "\n";
}

std::vector<int> kfold_split(int64_t n, int64_t k, RngState rng) {
  if (n < k) throw std::invalid_argument("kfold: need at least k samples");
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(i + 1))]);
  std::vector<int> folds(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j)
    folds[static_cast<size_t>(idx[static_cast<size_t>(j)])] = static_cast<int>(j % k);
  return folds;
}

namespace {

SampleF load_sample(const Manifest& m, const ManifestRecord& r) {
  SampleF s;
  s.id = r.id;
  ImageU8 img = read_pgm((fs::path(m.dir) / r.image).string());
  ImageU8 les = read_pgm((fs::path(m.dir) / r.lesion).string());
  ImageU8 org = read_pgm((fs::path(m.dir) / r.organ).string());
  if (les.w != img.w || les.h != img.h || org.w != img.w || org.h != img.h)
    throw std::runtime_error("dataset: mask dims differ from image for " + r.id);
  s.h = img.h;
  s.w = img.w;
  s.image = to_unit_floats(img);
  s.lesion.assign(les.pix.begin(), les.pix.end());
  s.organ.assign(org.pix.begin(), org.pix.end());
  return s;
}

}  // namespace

Dataset Dataset::load_split(const Manifest& m, int fold, bool validation) {
  Dataset ds;
  for (const auto& r : m.records)
    if ((r.fold == fold) == validation) ds.samples_.push_back(load_sample(m, r));
  if (ds.samples_.empty()) throw std::runtime_error("dataset: empty split");
  return ds;
}

Dataset Dataset::load_all(const Manifest& m) {
  Dataset ds;
  for (const auto& r : m.records) ds.samples_.push_back(load_sample(m, r));
  if (ds.samples_.empty()) throw std::runtime_error("dataset: empty manifest");
  return ds;
}

namespace {

void rotate_shared(SampleF& s, double angle_deg) {
  double a = angle_deg * kDegToRad;
  double ca = std::cos(a), sa = std::sin(a);
  double cy = static_cast<double>(s.h - 1) / 2.0;
  double cx = static_cast<double>(s.w - 1) / 2.0;
  std::vector<float> img(static_cast<size_t>(s.h * s.w), 0.0f);
  std::vector<int32_t> les(img.size(), 0), org(img.size(), 0);
  for (int64_t r = 0; r < s.h; ++r)
    for (int64_t c = 0; c < s.w; ++c) {
      double dy = static_cast<double>(r) - cy;
      double dx = static_cast<double>(c) - cx;
      double sr = ca * dy - sa * dx + cy;
      double sc = sa * dy + ca * dx + cx;
      size_t o = static_cast<size_t>(r * s.w + c);
      // nearest-neighbor source pixel drives both masks identically
      int64_t nr = static_cast<int64_t>(std::lround(sr));
      int64_t nc = static_cast<int64_t>(std::lround(sc));
      if (nr >= 0 && nr < s.h && nc >= 0 && nc < s.w) {
        les[o] = s.lesion[static_cast<size_t>(nr * s.w + nc)];
        org[o] = s.organ[static_cast<size_t>(nr * s.w + nc)];
      }
      int64_t r0 = static_cast<int64_t>(std::floor(sr));
      int64_t c0 = static_cast<int64_t>(std::floor(sc));
      double fr = sr - static_cast<double>(r0);
      double fc = sc - static_cast<double>(c0);
      double acc = 0;
      for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 2; ++dc) {
          int64_t rr = r0 + dr, cc = c0 + dc;
          if (rr < 0 || rr >= s.h || cc < 0 || cc >= s.w) continue;
          double wgt = (dr ? fr : 1.0 - fr) * (dc ? fc : 1.0 - fc);
          acc += wgt * s.image[static_cast<size_t>(rr * s.w + cc)];
        }
      img[o] = static_cast<float>(acc);
    }
  s.image = std::move(img);
  s.lesion = std::move(les);
  s.organ = std::move(org);
}

void flip_h(SampleF& s) {
  for (int64_t r = 0; r < s.h; ++r)
    for (int64_t c = 0; c < s.w / 2; ++c) {
      size_t a = static_cast<size_t>(r * s.w + c);
      size_t b = static_cast<size_t>(r * s.w + (s.w - 1 - c));
      std::swap(s.image[a], s.image[b]);
      std::swap(s.lesion[a], s.lesion[b]);
      std::swap(s.organ[a], s.organ[b]);
    }
}

void flip_v(SampleF& s) {
  for (int64_t r = 0; r < s.h / 2; ++r)
    for (int64_t c = 0; c < s.w; ++c) {
      size_t a = static_cast<size_t>(r * s.w + c);
      size_t b = static_cast<size_t>((s.h - 1 - r) * s.w + c);
      std::swap(s.image[a], s.image[b]);
      std::swap(s.lesion[a], s.lesion[b]);
      std::swap(s.organ[a], s.organ[b]);
    }
}

}  // namespace

void augment_sample(SampleF& s, const AugmentationConfig& cfg, RngState rng) {
  if (rng.u01() < cfg.p_rotate) {
    double angle = rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg);
    rotate_shared(s, angle);
  }
  if (rng.u01() < cfg.p_hflip) flip_h(s);
  if (rng.u01() < cfg.p_vflip) flip_v(s);
}

std::vector<Batch> make_epoch_batches(const Dataset& ds, int64_t batch_size, bool train,
                                      int64_t epoch, uint64_t seed,
                                      const AugmentationConfig& aug, int64_t in_channels) {
  if (ds.size() == 0) throw std::invalid_argument("batches: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("batches: batch size must be >= 1");
  std::vector<int64_t> order(static_cast<size_t>(ds.size()));
  std::iota(order.begin(), order.end(), 0);
  RngState root(seed);
  if (train) {
    RngState sh = root.stream("epoch." + std::to_string(epoch));
    for (int64_t i = ds.size() - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(sh.uniform_int(i + 1))]);
  }
  std::vector<Batch> batches;
  int64_t h = ds.samples()[0].h, w = ds.samples()[0].w;
  for (int64_t start = 0; start < ds.size(); start += batch_size) {
    int64_t bs = std::min(batch_size, ds.size() - start);
    Batch b;
    b.images = Tensor<float>({bs, in_channels, h, w});
    b.lesion = IntMask({bs, h, w});
    b.organ = IntMask({bs, h, w});
    auto img = b.images.mutable_data();
    for (int64_t i = 0; i < bs; ++i) {
      SampleF s = ds.samples()[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
      if (s.h != h || s.w != w) throw std::runtime_error("batches: mixed sample sizes");
      if (train)
        augment_sample(s, aug,
                       root.stream("aug." + std::to_string(epoch) + "." + s.id));
      for (int64_t c = 0; c < in_channels; ++c)
        std::copy(s.image.begin(), s.image.end(),
                  img.begin() + static_cast<size_t>((i * in_channels + c) * h * w));
      std::copy(s.lesion.begin(), s.lesion.end(),
                b.lesion.v.begin() + static_cast<size_t>(i * h * w));
      std::copy(s.organ.begin(), s.organ.end(),
                b.organ.v.begin() + static_cast<size_t>(i * h * w));
      b.ids.push_back(s.id);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace dta
