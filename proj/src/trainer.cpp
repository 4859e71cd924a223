#include "dta/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;

namespace dta {

namespace {

std::vector<int32_t> lesion_classes_of(const DTrAttUnet<float>& model) {
  if (model.config().lesion_classes == 1) return {1};
  std::vector<int32_t> cls;
  for (int64_t c = 1; c < model.config().lesion_classes; ++c)
    cls.push_back(static_cast<int32_t>(c));
  return cls;
}

// ---- checkpoint meta encoding: small exact integers in f32 tensors ----------

NamedTensor meta_tensor(const std::string& name, const std::vector<float>& vals) {
  return {name, {static_cast<int64_t>(vals.size())}, vals};
}

std::vector<float> seed_chunks(uint64_t seed) {
  std::vector<float> v(4);
  for (int i = 0; i < 4; ++i)
    v[static_cast<size_t>(i)] = static_cast<float>((seed >> (16 * i)) & 0xffffULL);
  return v;
}

uint64_t seed_from_chunks(const std::vector<float>& v) {
  uint64_t s = 0;
  for (int i = 0; i < 4 && i < static_cast<int>(v.size()); ++i)
    s |= static_cast<uint64_t>(static_cast<uint16_t>(v[static_cast<size_t>(i)])) << (16 * i);
  return s;
}

const NamedTensor& find_tensor(const CheckpointData& data, const std::string& name) {
  for (const auto& t : data.tensors)
    if (t.name == name) return t;
  throw std::runtime_error("checkpoint: missing tensor " + name);
}

}  // namespace

void save_model_checkpoint(const std::string& path, const DTrAttUnet<float>& model,
                           int64_t epoch, const Adam* opt) {
  CheckpointData data;
  const auto& cfg = model.config();
  data.tensors.push_back(meta_tensor(
      "meta.variant",
      {cfg.ag ? 1.0f : 0.0f, cfg.dd ? 1.0f : 0.0f, cfg.trec ? 1.0f : 0.0f,
       static_cast<float>(cfg.base_width), static_cast<float>(cfg.image_size),
       static_cast<float>(cfg.in_channels), static_cast<float>(cfg.lesion_classes)}));
  std::vector<float> tf = {static_cast<float>(cfg.transformer.layers),
                           static_cast<float>(cfg.transformer.heads),
                           static_cast<float>(cfg.transformer.embed_dim),
                           static_cast<float>(cfg.transformer.mlp_dim),
                           static_cast<float>(cfg.transformer.patch),
                           cfg.transformer.use_pos_embed ? 1.0f : 0.0f};
  for (int t : cfg.transformer.tap_layers) tf.push_back(static_cast<float>(t));
  data.tensors.push_back(meta_tensor("meta.transformer", tf));
  data.tensors.push_back(meta_tensor("meta.epoch", {static_cast<float>(epoch)}));
  data.tensors.push_back(meta_tensor("meta.seed", seed_chunks(model.seed())));

  for (const auto& e : model.registry().entries()) {
    NamedTensor t;
    t.name = e.name;
    t.dims = e.tensor.dims();
    auto d = e.tensor.data();
    t.data.assign(d.begin(), d.end());
    data.tensors.push_back(std::move(t));
  }
  if (opt) {
    data.has_opt = true;
    for (const auto& s : opt->slots()) {
      data.opt.push_back({s.name + ".adam_m", {static_cast<int64_t>(s.m.size())}, s.m});
      data.opt.push_back({s.name + ".adam_v", {static_cast<int64_t>(s.v.size())}, s.v});
    }
    data.opt.push_back(meta_tensor("adam.t", {static_cast<float>(opt->step_count())}));
  }
  save_checkpoint(path, data);
}

LoadedModel load_model_checkpoint(const std::string& path) {
  CheckpointData data = load_checkpoint(path);
  const auto& var = find_tensor(data, "meta.variant").data;
  const auto& tf = find_tensor(data, "meta.transformer").data;
  if (var.size() != 7 || tf.size() < 6)
    throw std::runtime_error("checkpoint: malformed meta tensors");
  ModelVariantConfig cfg;
  cfg.ag = var[0] != 0.0f;
  cfg.dd = var[1] != 0.0f;
  cfg.trec = var[2] != 0.0f;
  cfg.base_width = static_cast<int64_t>(var[3]);
  cfg.image_size = static_cast<int64_t>(var[4]);
  cfg.in_channels = static_cast<int64_t>(var[5]);
  cfg.lesion_classes = static_cast<int64_t>(var[6]);
  cfg.transformer.layers = static_cast<int64_t>(tf[0]);
  cfg.transformer.heads = static_cast<int64_t>(tf[1]);
  cfg.transformer.embed_dim = static_cast<int64_t>(tf[2]);
  cfg.transformer.mlp_dim = static_cast<int64_t>(tf[3]);
  cfg.transformer.patch = static_cast<int>(tf[4]);
  cfg.transformer.use_pos_embed = tf[5] != 0.0f;
  cfg.transformer.tap_layers.clear();
  for (size_t i = 6; i < tf.size(); ++i)
    cfg.transformer.tap_layers.push_back(static_cast<int>(tf[i]));

  LoadedModel lm;
  lm.epoch = static_cast<int64_t>(find_tensor(data, "meta.epoch").data.at(0));
  uint64_t seed = seed_from_chunks(find_tensor(data, "meta.seed").data);
  lm.model = std::make_unique<DTrAttUnet<float>>(cfg, seed, /*skip_init=*/true);

  std::map<std::string, const NamedTensor*> table;
  for (const auto& t : data.tensors) table[t.name] = &t;
  for (auto& e : const_cast<std::vector<ParamEntry<float>>&>(lm.model->registry().entries())) {
    auto it = table.find(e.name);
    if (it == table.end())
      throw std::runtime_error("checkpoint: missing tensor " + e.name);
    if (it->second->dims != e.tensor.dims())
      throw std::runtime_error("checkpoint: shape mismatch for " + e.name);
    auto dst = e.tensor.mutable_data();
    std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
  }
  if (data.has_opt) {
    lm.has_opt = true;
    std::map<std::string, const NamedTensor*> opt;
    for (const auto& t : data.opt) opt[t.name] = &t;
    for (const auto& e : lm.model->registry().entries()) {
      if (!e.is_param) continue;
      auto mi = opt.find(e.name + ".adam_m");
      auto vi = opt.find(e.name + ".adam_v");
      if (mi == opt.end() || vi == opt.end())
        throw std::runtime_error("checkpoint: incomplete optimizer state");
      lm.opt_slots.push_back({e.name, mi->second->data, vi->second->data});
    }
    auto ti = opt.find("adam.t");
    if (ti == opt.end()) throw std::runtime_error("checkpoint: missing tensor adam.t");
    lm.opt_t = static_cast<int64_t>(ti->second->data.at(0));
  }
  return lm;
}

// ---- prediction helpers -------------------------------------------------------

std::vector<std::vector<int32_t>> lesion_pred_masks(const Tensor<float>& logits) {
  int64_t B = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  int64_t hw = H * W;
  const float* z = logits.data().data();
  std::vector<std::vector<int32_t>> masks(static_cast<size_t>(B));
  for (int64_t n = 0; n < B; ++n) {
    auto& m = masks[static_cast<size_t>(n)];
    m.assign(static_cast<size_t>(hw), 0);
    if (C == 1) {
      const float* p = z + n * hw;
      for (int64_t i = 0; i < hw; ++i) {
        double prob = 1.0 / (1.0 + std::exp(-static_cast<double>(p[i])));
        m[static_cast<size_t>(i)] = prob > 0.5 ? 1 : 0;
      }
    } else {
      for (int64_t i = 0; i < hw; ++i) {
        const float* base = z + n * C * hw + i;
        int32_t best = 0;
        float bv = base[0];
        for (int64_t c = 1; c < C; ++c)
          if (base[c * hw] > bv) {
            bv = base[c * hw];
            best = static_cast<int32_t>(c);
          }
        m[static_cast<size_t>(i)] = best;
      }
    }
  }
  return masks;
}

std::vector<std::vector<int32_t>> organ_pred_masks(const Tensor<float>& logits) {
  return lesion_pred_masks(logits);  // single channel, same 0.5 threshold
}

// ---- evaluation ----------------------------------------------------------------

double validation_dice(DTrAttUnet<float>& model, const Dataset& split, int64_t batch_size) {
  NoGradGuard ng;
  AugmentationConfig no_aug;
  auto batches = make_epoch_batches(split, batch_size, false, 0, 0, no_aug,
                                    model.config().in_channels);
  auto classes = lesion_classes_of(model);
  std::map<int32_t, std::vector<ConfusionCounts>> per_image;
  for (const auto& b : batches) {
    auto out = model.forward(b.images, false);
    auto masks = lesion_pred_masks(out.lesion_logits);
    int64_t hw = b.lesion.dim(1) * b.lesion.dim(2);
    for (size_t n = 0; n < masks.size(); ++n) {
      std::span<const int32_t> gt(b.lesion.v.data() + static_cast<int64_t>(n) * hw,
                                  static_cast<size_t>(hw));
      for (int32_t c : classes)
        per_image[c].push_back(confusion(masks[n], gt, c));
    }
  }
  double s = 0;
  for (int32_t c : classes) s += dice_macro_percent(per_image[c]);
  return s / static_cast<double>(classes.size());
}

MetricsReport evaluate_model(DTrAttUnet<float>& model, const Dataset& split,
                             int64_t batch_size) {
  NoGradGuard ng;
  AugmentationConfig no_aug;
  auto batches = make_epoch_batches(split, batch_size, false, 0, 0, no_aug,
                                    model.config().in_channels);
  auto classes = lesion_classes_of(model);
  int64_t h = split.samples()[0].h, w = split.samples()[0].w;
  int64_t hw = h * w;

  std::map<int32_t, ConfusionCounts> micro;
  std::map<int32_t, std::vector<ConfusionCounts>> per_image;
  std::map<int32_t, std::vector<double>> hd_values;
  std::map<int32_t, int64_t> hd_undefined;
  ConfusionCounts organ_micro;
  std::vector<ConfusionCounts> organ_per_image;
  std::vector<double> organ_hd;
  int64_t organ_hd_undef = 0;
  int64_t samples = 0;

  for (const auto& b : batches) {
    auto out = model.forward(b.images, false);
    auto les = lesion_pred_masks(out.lesion_logits);
    std::vector<std::vector<int32_t>> org;
    if (out.organ_logits.defined()) org = organ_pred_masks(out.organ_logits);
    for (size_t n = 0; n < les.size(); ++n) {
      ++samples;
      std::span<const int32_t> gt(b.lesion.v.data() + static_cast<int64_t>(n) * hw,
                                  static_cast<size_t>(hw));
      for (int32_t c : classes) {
        ConfusionCounts cc = confusion(les[n], gt, c);
        micro[c] += cc;
        per_image[c].push_back(cc);
        Hd95 hd = hd95(gt, les[n], h, w, c);
        if (hd.defined) hd_values[c].push_back(hd.value);
        else hd_undefined[c]++;
      }
      if (!org.empty()) {
        std::span<const int32_t> ogt(b.organ.v.data() + static_cast<int64_t>(n) * hw,
                                     static_cast<size_t>(hw));
        ConfusionCounts oc = confusion(org[n], ogt, 1);
        organ_micro += oc;
        organ_per_image.push_back(oc);
        Hd95 hd = hd95(ogt, org[n], h, w, 1);
        if (hd.defined) organ_hd.push_back(hd.value);
        else organ_hd_undef++;
      }
    }
  }

  MetricsReport rep;
  rep.counts["samples"] = samples;
  double mf1 = 0, miou = 0, mdice = 0;
  for (int32_t c : classes) {
    std::string p = "lesion.class" + std::to_string(c) + ".";
    double f1 = f1_percent(micro[c]);
    double io = iou_percent(micro[c]);
    double di = dice_macro_percent(per_image[c]);
    rep.values[p + "f1"] = f1;
    rep.values[p + "iou"] = io;
    rep.values[p + "dice"] = di;
    double hdsum = 0;
    for (double v : hd_values[c]) hdsum += v;
    rep.values[p + "hd95"] =
        hd_values[c].empty() ? 0.0 : hdsum / static_cast<double>(hd_values[c].size());
    rep.counts[p + "hd95_undefined"] = hd_undefined[c];
    mf1 += f1;
    miou += io;
    mdice += di;
  }
  double nc = static_cast<double>(classes.size());
  rep.values["lesion.mean.f1"] = mf1 / nc;
  rep.values["lesion.mean.iou"] = miou / nc;
  rep.values["lesion.mean.dice"] = mdice / nc;
  if (!organ_per_image.empty()) {
    rep.values["organ.f1"] = f1_percent(organ_micro);
    rep.values["organ.iou"] = iou_percent(organ_micro);
    rep.values["organ.dice"] = dice_macro_percent(organ_per_image);
    double hdsum = 0;
    for (double v : organ_hd) hdsum += v;
    rep.values["organ.hd95"] =
        organ_hd.empty() ? 0.0 : hdsum / static_cast<double>(organ_hd.size());
    rep.counts["organ.hd95_undefined"] = organ_hd_undef;
  }
  return rep;
}

// ---- training loop --------------------------------------------------------------

TrainResult train_model(DTrAttUnet<float>& model, const Manifest& manifest,
                        const TrainConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  Dataset train_ds = Dataset::load_split(manifest, cfg.val_fold, false);
  Dataset val_ds = Dataset::load_split(manifest, cfg.val_fold, true);
  Adam opt(model.registry(), cfg.adam);

  TrainResult res;
  res.log_path = (fs::path(cfg.out_dir) / "run.log").string();
  res.best_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
  res.final_path = (fs::path(cfg.out_dir) / "final.ckpt").string();
  std::ofstream log(res.log_path);
  if (!log) throw std::runtime_error("train: cannot write " + res.log_path);

  res.best_dice = -1.0;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = make_epoch_batches(train_ds, cfg.batch_size, true, epoch, cfg.seed,
                                      cfg.aug, model.config().in_channels);
    double loss_sum = 0;
    int64_t bi = 0;
    for (const auto& b : batches) {
      ++bi;
      auto out = model.forward(b.images, true);
      Tensor<float> loss =
          hybrid_loss(out.lesion_logits, out.organ_logits, b.lesion, b.organ, cfg.loss);
      double lv = loss.item();
      if (!std::isfinite(lv))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(bi));
      model.registry().zero_grad();
      backward(loss);
      opt.step();
      loss_sum += lv;
    }
    double mean_loss = loss_sum / static_cast<double>(batches.size());
    double vd = validation_dice(model, val_ds, cfg.batch_size);
    res.epoch_loss.push_back(mean_loss);
    res.val_dice.push_back(vd);

    char line[128];
    std::snprintf(line, sizeof line, "epoch=%lld train_loss=%.6f val_dice=%.6f",
                  static_cast<long long>(epoch), mean_loss, vd);
    log << line << "\n";
    log.flush();
    std::cerr << line << "\n";

    if (vd > res.best_dice) {
      res.best_dice = vd;
      res.best_epoch = epoch;
      save_model_checkpoint(res.best_path, model, epoch, nullptr);
    }
  }
  save_model_checkpoint(res.final_path, model, cfg.epochs, &opt);
  return res;
}

// ---- prediction export -----------------------------------------------------------

void predict_to_files(DTrAttUnet<float>& model, const std::string& image_path,
                      const std::string& out_dir) {
  ImageU8 img = read_pgm(image_path);
  int64_t sz = model.config().image_size;
  if (img.w % 16 != 0 || img.h % 16 != 0)
    throw std::runtime_error("predict: image extents must be divisible by 16");
  if (img.w != sz || img.h != sz)
    throw std::runtime_error("predict: image is " + std::to_string(img.w) + "x" +
                             std::to_string(img.h) + " but the checkpoint expects " +
                             std::to_string(sz) + "x" + std::to_string(sz));
  fs::create_directories(out_dir);

  std::vector<float> unit = to_unit_floats(img);
  int64_t cin = model.config().in_channels;
  Tensor<float> x({1, cin, img.h, img.w});
  auto xd = x.mutable_data();
  for (int64_t c = 0; c < cin; ++c)
    std::copy(unit.begin(), unit.end(), xd.begin() + static_cast<size_t>(c * img.h * img.w));

  NoGradGuard ng;
  auto out = model.forward(x, false);
  auto les = lesion_pred_masks(out.lesion_logits)[0];
  std::vector<int32_t> org;
  if (out.organ_logits.defined()) org = organ_pred_masks(out.organ_logits)[0];

  ImageU8 les_img;
  les_img.w = img.w;
  les_img.h = img.h;
  les_img.pix.resize(les.size());
  for (size_t i = 0; i < les.size(); ++i) les_img.pix[i] = static_cast<uint8_t>(les[i]);
  write_pgm((fs::path(out_dir) / "lesion.pgm").string(), les_img);

  if (!org.empty()) {
    ImageU8 org_img;
    org_img.w = img.w;
    org_img.h = img.h;
    org_img.pix.resize(org.size());
    for (size_t i = 0; i < org.size(); ++i) org_img.pix[i] = static_cast<uint8_t>(org[i]);
    write_pgm((fs::path(out_dir) / "organ.pgm").string(), org_img);
  }

  // overlay: grayscale base, lesion class 1 green / class 2 red, organ outline blue
  std::vector<uint8_t> rgb(static_cast<size_t>(img.w * img.h * 3));
  for (int64_t i = 0; i < img.w * img.h; ++i) {
    uint8_t v = img.pix[static_cast<size_t>(i)];
    rgb[static_cast<size_t>(3 * i)] = v;
    rgb[static_cast<size_t>(3 * i + 1)] = v;
    rgb[static_cast<size_t>(3 * i + 2)] = v;
  }
  auto set_px = [&](int64_t i, uint8_t r, uint8_t g, uint8_t b) {
    rgb[static_cast<size_t>(3 * i)] = r;
    rgb[static_cast<size_t>(3 * i + 1)] = g;
    rgb[static_cast<size_t>(3 * i + 2)] = b;
  };
  for (int64_t i = 0; i < img.w * img.h; ++i) {
    if (les[static_cast<size_t>(i)] == 1) set_px(i, 0, 255, 0);
    else if (les[static_cast<size_t>(i)] == 2) set_px(i, 255, 0, 0);
  }
  if (!org.empty()) {
    for (int64_t r = 0; r < img.h; ++r)
      for (int64_t c = 0; c < img.w; ++c) {
        size_t o = static_cast<size_t>(r * img.w + c);
        if (org[o] != 1) continue;
        bool boundary = r == 0 || r == img.h - 1 || c == 0 || c == img.w - 1 ||
                        org[o - 1] == 0 || org[o + 1] == 0 ||
                        org[o - static_cast<size_t>(img.w)] == 0 ||
                        org[o + static_cast<size_t>(img.w)] == 0;
        if (boundary) set_px(r * img.w + c, 0, 0, 255);
      }
  }
  write_ppm((fs::path(out_dir) / "overlay.ppm").string(), img.w, img.h, rgb);
}

}  // namespace dta
