#include "forec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

#include <json.hpp>

#include "forec/checkpoint.hpp"
#include "forec/errors.hpp"
#include "forec/metrics.hpp"
#include "forec/ops.hpp"
#include "forec/pseudolabel.hpp"
#include "forec/tape.hpp"

namespace forec {
namespace {

using nlohmann::json;

constexpr int kEvalBatch = 8;

}  // namespace

const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Supervised: return "supervised";
    case TrainMode::Baseline: return "baseline";
    case TrainMode::Rec: return "baseline+rec";
    case TrainMode::Forec: return "baseline+forec";
    case TrainMode::FgBg: return "baseline+fgbg";
  }
  throw ConfigError("unhandled train mode");
}

TrainMode mode_from_name(const std::string& name) {
  if (name == "supervised") return TrainMode::Supervised;
  if (name == "baseline") return TrainMode::Baseline;
  if (name == "baseline+rec") return TrainMode::Rec;
  if (name == "baseline+forec") return TrainMode::Forec;
  if (name == "baseline+fgbg") return TrainMode::FgBg;
  throw ConfigError("unknown train mode \"" + name +
                    "\" (expected supervised, baseline, baseline+rec, baseline+forec or "
                    "baseline+fgbg)");
}

net::AuxKind TrainConfig::aux_kind() const {
  switch (mode) {
    case TrainMode::Rec:
    case TrainMode::Forec: return net::AuxKind::Reconstruction;
    case TrainMode::FgBg: return net::AuxKind::FgBg;
    default: return net::AuxKind::None;
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (lambda1 < 0.f || !std::isfinite(lambda1)) fail("train.lambda1 must be >= 0");
  if (lambda2 < 0.f || !std::isfinite(lambda2)) fail("train.lambda2 must be >= 0");
  if (!(tau >= 0.f && tau <= 1.f)) fail("pseudo.tau must be in [0,1]");
  if (!(ema_alpha >= 0.f && ema_alpha <= 1.f)) fail("train.ema_alpha must be in [0,1]");
  if (batch < 1) fail("train.batch must be >= 1");
  if (epochs < 0) fail("train.epochs must be >= 0");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) fail("opt.lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("opt.momentum must be in [0,1)");
  if (weight_decay < 0.0 || !std::isfinite(weight_decay)) fail("opt.weight_decay must be >= 0");
  if (power < 0.0 || !std::isfinite(power)) fail("opt.power must be >= 0");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    fail("data.labeled_fraction must be in (0,1]");
  if (object_classes.empty()) fail("pseudo.object_classes must not be empty");
  for (int c : object_classes)
    if (c < 0 || c >= net.num_classes)
      fail("pseudo.object_classes entry " + std::to_string(c) + " is outside [0," +
           std::to_string(net.num_classes) + ")");
  try {
    net.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  const AugConfig& a = augment;
  auto prob = [&](double p, const char* key) {
    if (!(p >= 0.0 && p <= 1.0)) fail(std::string(key) + " must be in [0,1]");
  };
  prob(a.flip_p, "aug.flip_p");
  prob(a.gray_p, "aug.gray_p");
  prob(a.blur_p, "aug.blur_p");
  prob(a.cutmix_p, "aug.cutmix_p");
  if (!(a.zoom_lo > 0.0 && a.zoom_lo <= a.zoom_hi)) fail("aug.zoom range must satisfy 0 < lo <= hi");
  if (!(a.jitter_gain >= 0.0 && a.jitter_gain <= 1.0)) fail("aug.jitter_gain must be in [0,1]");
  if (a.jitter_shift < 0.0) fail("aug.jitter_shift must be >= 0");
  if (!(a.blur_sigma_lo >= 0.0 && a.blur_sigma_lo <= a.blur_sigma_hi))
    fail("aug.blur_sigma range must satisfy 0 <= lo <= hi");
  if (!(a.cutmix_area_lo > 0.0 && a.cutmix_area_lo <= a.cutmix_area_hi && a.cutmix_area_hi <= 1.0))
    fail("aug.cutmix_area range must satisfy 0 < lo <= hi <= 1");
  if (!(a.cutmix_aspect_lo > 0.0 && a.cutmix_aspect_lo <= a.cutmix_aspect_hi))
    fail("aug.cutmix_aspect range must satisfy 0 < lo <= hi");
}

namespace {

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key " + key + " must be a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("config key " + key + " must be an integer");
  return v.get<int>();
}

uint64_t as_u64(const json& v, const std::string& key) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<int64_t>() < 0))
    throw ConfigError("config key " + key + " must be a non-negative integer");
  return v.get<uint64_t>();
}

std::string as_str(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key " + key + " must be a string");
  return v.get<std::string>();
}

std::vector<int> as_int_array(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("config key " + key + " must be an array of integers");
  std::vector<int> out;
  for (const json& e : v) out.push_back(as_int(e, key));
  return out;
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "train.mode") c.mode = mode_from_name(as_str(v, key));
    else if (key == "train.lambda1") c.lambda1 = float(as_number(v, key));
    else if (key == "train.lambda2") c.lambda2 = float(as_number(v, key));
    else if (key == "train.ema_alpha") c.ema_alpha = float(as_number(v, key));
    else if (key == "train.batch") c.batch = as_int(v, key);
    else if (key == "train.epochs") c.epochs = as_int(v, key);
    else if (key == "train.seed") c.seed = as_u64(v, key);
    else if (key == "pseudo.tau") c.tau = float(as_number(v, key));
    else if (key == "pseudo.object_classes") c.object_classes = as_int_array(v, key);
    else if (key == "opt.lr0") c.lr0 = as_number(v, key);
    else if (key == "opt.momentum") c.momentum = as_number(v, key);
    else if (key == "opt.weight_decay") c.weight_decay = as_number(v, key);
    else if (key == "opt.power") c.power = as_number(v, key);
    else if (key == "data.dir") c.data_dir = as_str(v, key);
    else if (key == "data.labeled_fraction") c.labeled_fraction = as_number(v, key);
    else if (key == "data.partition_seed") c.partition_seed = as_u64(v, key);
    else if (key == "net.base_width") c.net.base_width = as_int(v, key);
    else if (key == "net.stages") c.net.stages = as_int(v, key);
    else if (key == "net.latent_dim") c.net.latent_dim = as_int(v, key);
    else if (key == "net.num_classes") c.net.num_classes = as_int(v, key);
    else if (key == "aug.flip_p") c.augment.flip_p = as_number(v, key);
    else if (key == "aug.zoom_lo") c.augment.zoom_lo = as_number(v, key);
    else if (key == "aug.zoom_hi") c.augment.zoom_hi = as_number(v, key);
    else if (key == "aug.jitter_gain") c.augment.jitter_gain = as_number(v, key);
    else if (key == "aug.jitter_shift") c.augment.jitter_shift = as_number(v, key);
    else if (key == "aug.gray_p") c.augment.gray_p = as_number(v, key);
    else if (key == "aug.blur_p") c.augment.blur_p = as_number(v, key);
    else if (key == "aug.blur_sigma_lo") c.augment.blur_sigma_lo = as_number(v, key);
    else if (key == "aug.blur_sigma_hi") c.augment.blur_sigma_hi = as_number(v, key);
    else if (key == "aug.cutmix_p") c.augment.cutmix_p = as_number(v, key);
    else if (key == "aug.cutmix_area_lo") c.augment.cutmix_area_lo = as_number(v, key);
    else if (key == "aug.cutmix_area_hi") c.augment.cutmix_area_hi = as_number(v, key);
    else if (key == "aug.cutmix_aspect_lo") c.augment.cutmix_aspect_lo = as_number(v, key);
    else if (key == "aug.cutmix_aspect_hi") c.augment.cutmix_aspect_hi = as_number(v, key);
    else throw ConfigError("unknown config key: " + key);
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_train_config(text);
}

std::string dump_train_config(const TrainConfig& c) {
  json j;
  j["train.mode"] = mode_name(c.mode);
  j["train.lambda1"] = c.lambda1;
  j["train.lambda2"] = c.lambda2;
  j["train.ema_alpha"] = c.ema_alpha;
  j["train.batch"] = c.batch;
  j["train.epochs"] = c.epochs;
  j["train.seed"] = c.seed;
  j["pseudo.tau"] = c.tau;
  j["pseudo.object_classes"] = c.object_classes;
  j["opt.lr0"] = c.lr0;
  j["opt.momentum"] = c.momentum;
  j["opt.weight_decay"] = c.weight_decay;
  j["opt.power"] = c.power;
  j["data.dir"] = c.data_dir;
  j["data.labeled_fraction"] = c.labeled_fraction;
  j["data.partition_seed"] = c.partition_seed;
  j["net.base_width"] = c.net.base_width;
  j["net.stages"] = c.net.stages;
  j["net.latent_dim"] = c.net.latent_dim;
  j["net.num_classes"] = c.net.num_classes;
  j["aug.flip_p"] = c.augment.flip_p;
  j["aug.zoom_lo"] = c.augment.zoom_lo;
  j["aug.zoom_hi"] = c.augment.zoom_hi;
  j["aug.jitter_gain"] = c.augment.jitter_gain;
  j["aug.jitter_shift"] = c.augment.jitter_shift;
  j["aug.gray_p"] = c.augment.gray_p;
  j["aug.blur_p"] = c.augment.blur_p;
  j["aug.blur_sigma_lo"] = c.augment.blur_sigma_lo;
  j["aug.blur_sigma_hi"] = c.augment.blur_sigma_hi;
  j["aug.cutmix_p"] = c.augment.cutmix_p;
  j["aug.cutmix_area_lo"] = c.augment.cutmix_area_lo;
  j["aug.cutmix_area_hi"] = c.augment.cutmix_area_hi;
  j["aug.cutmix_aspect_lo"] = c.augment.cutmix_aspect_lo;
  j["aug.cutmix_aspect_hi"] = c.augment.cutmix_aspect_hi;
  return j.dump(2) + "\n";
}

namespace {

Tensor stack_images(const std::vector<Sample>& batch) {
  int n = int(batch.size());
  int h = batch[0].image.dim(1), w = batch[0].image.dim(2);
  Tensor out = Tensor::zeros({n, 3, h, w});
  size_t per = size_t(3) * size_t(h) * size_t(w);
  for (int i = 0; i < n; ++i)
    std::copy(batch[size_t(i)].image.data.begin(), batch[size_t(i)].image.data.end(),
              out.data.begin() + size_t(i) * per);
  return out;
}

std::vector<LabelMap> labels_of(const std::vector<Sample>& batch) {
  std::vector<LabelMap> out;
  out.reserve(batch.size());
  for (const Sample& s : batch) out.push_back(s.label);
  return out;
}

/// [C,H,W] copy of one batch entry.
Tensor slice_batch(const Tensor& t, int n) {
  int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  size_t per = size_t(c) * size_t(h) * size_t(w);
  std::vector<float> d(t.data.begin() + size_t(n) * per, t.data.begin() + size_t(n + 1) * per);
  return Tensor({c, h, w}, std::move(d));
}

struct StackedTarget {
  Tensor target;  // [N,3,H,W]
  Tensor mask;    // [N,1,H,W]
};

StackedTarget stack_targets(const std::vector<MaskedTarget>& ts) {
  int n = int(ts.size());
  int h = ts[0].target.dim(1), w = ts[0].target.dim(2);
  StackedTarget out{Tensor::zeros({n, 3, h, w}), Tensor::zeros({n, 1, h, w})};
  size_t tper = size_t(3) * size_t(h) * size_t(w), mper = size_t(h) * size_t(w);
  for (int i = 0; i < n; ++i) {
    std::copy(ts[size_t(i)].target.data.begin(), ts[size_t(i)].target.data.end(),
              out.target.data.begin() + size_t(i) * tper);
    std::copy(ts[size_t(i)].mask.data.begin(), ts[size_t(i)].mask.data.end(),
              out.mask.data.begin() + size_t(i) * mper);
  }
  return out;
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, Dataset ds)
    : cfg_(cfg),
      ds_(std::move(ds)),
      sgd_(optim::SgdConfig{float(cfg.lr0), float(cfg.momentum), float(cfg.weight_decay),
                            float(cfg.power)}) {
  cfg_.validate();
  if (ds_.count() == 0) throw ValueError("trainer: dataset is empty");
  if (cfg_.net.num_classes != ds_.num_classes)
    throw ConfigError("config: net.num_classes = " + std::to_string(cfg_.net.num_classes) +
                      " but the dataset has " + std::to_string(ds_.num_classes) + " classes");
  if (ds_.val_count < 1) throw ValueError("trainer: dataset has no validation samples");

  part_ = make_partition(ds_, cfg_.labeled_fraction, cfg_.partition_seed);
  if (cfg_.uses_unlabeled() && part_.unlabeled.empty())
    throw ValueError(std::string("trainer: mode ") + mode_name(cfg_.mode) +
                     " needs unlabeled samples but labeled_fraction leaves none");

  int b = cfg_.batch;
  const std::vector<int>& pace = part_.unlabeled.empty() ? part_.labeled : part_.unlabeled;
  steps_per_epoch_ = int((int64_t(pace.size()) + b - 1) / b);
  total_steps_ = int64_t(cfg_.epochs) * steps_per_epoch_;

  net::NetworkConfig ncfg = cfg_.net;
  ncfg.in_channels = 3;
  ncfg.aux = cfg_.aux_kind();
  nets_ = net::build(ncfg, cfg_.seed);

  Rng master(cfg_.seed);
  aug_rng_ = master.fork("augment");
  labeled_rng_ = master.fork("sample-labeled");
  unlabeled_rng_ = master.fork("sample-unlabeled");
  labeled_sampler_.emplace(part_.labeled, b, steps_per_epoch_);
  if (cfg_.uses_unlabeled()) unlabeled_sampler_.emplace(part_.unlabeled, b, steps_per_epoch_);
}

double Trainer::schedule_lr(int64_t completed) const {
  if (total_steps_ == 0) return cfg_.lr0;
  return optim::poly_lr(cfg_.lr0, completed, total_steps_, cfg_.power);
}

StepLosses Trainer::step() {
  const int b = cfg_.batch;
  const bool semi = cfg_.uses_unlabeled();
  const bool aux = cfg_.uses_aux();
  const int64_t hw = int64_t(ds_.h) * int64_t(ds_.w);

  std::vector<int> lab_ids = labeled_sampler_->next(labeled_rng_);
  std::vector<int> ul_ids;
  if (semi) ul_ids = unlabeled_sampler_->next(unlabeled_rng_);

  std::vector<Sample> lab_weak(static_cast<size_t>(b)), ul_weak;
  std::vector<AugRecord> lab_rec(static_cast<size_t>(b)), ul_rec;
  for (int i = 0; i < b; ++i)
    lab_weak[size_t(i)] =
        weak_aug(ds_.samples[size_t(lab_ids[size_t(i)])], cfg_.augment, aug_rng_, lab_rec[size_t(i)]);
  if (semi) {
    ul_weak.resize(size_t(b));
    ul_rec.resize(size_t(b));
    for (int i = 0; i < b; ++i)
      ul_weak[size_t(i)] =
          weak_aug(ds_.samples[size_t(ul_ids[size_t(i)])], cfg_.augment, aug_rng_, ul_rec[size_t(i)]);
  }

  StepLosses out;

  // Teacher pass over the weak unlabeled views.
  std::vector<PseudoLabelMap> pseudo(size_t(semi ? b : 0));
  std::vector<LabelMap> codes(size_t(cfg_.mode == TrainMode::Forec ? b : 0));
  if (semi) {
    Tensor logits = net::forward_seg(nets_.teacher, stack_images(ul_weak));
    Tensor probs = ops::softmax_channels(logits);
    for (int i = 0; i < b; ++i) {
      Tensor p = slice_batch(probs, i);
      pseudo[size_t(i)] = make_pseudo_labels(p, cfg_.tau);
      for (uint8_t v : pseudo[size_t(i)].label.v)
        if (v != kIgnoreLabel) ++out.pseudo_pixels;
      if (cfg_.mode == TrainMode::Forec) {
        codes[size_t(i)] = forec_scenarios(p, cfg_.tau, cfg_.object_classes);
        for (uint8_t v : codes[size_t(i)].v)
          if (v == kScenarioIgnore) ++out.scenario3_pixels;
      }
    }
    out.unlabeled_pixels = int64_t(b) * hw;
  }

  // Strong views; the CutMix partner is the next batch entry.
  std::vector<Sample> lab_strong(static_cast<size_t>(b)), ul_strong;
  for (int i = 0; i < b; ++i)
    lab_strong[size_t(i)] = strong_aug(lab_weak[size_t(i)], lab_weak[size_t((i + 1) % b)],
                                       cfg_.augment, aug_rng_, lab_rec[size_t(i)]);
  if (semi) {
    ul_strong.resize(size_t(b));
    for (int i = 0; i < b; ++i)
      ul_strong[size_t(i)] = strong_aug(ul_weak[size_t(i)], ul_weak[size_t((i + 1) % b)],
                                        cfg_.augment, aug_rng_, ul_rec[size_t(i)]);
  }

  // Teacher maps carried into the strong geometry.
  std::vector<LabelMap> pseudo_strong(size_t(semi ? b : 0));
  std::vector<LabelMap> codes_strong(codes.size());
  if (semi) {
    for (int i = 0; i < b; ++i) {
      pseudo_strong[size_t(i)] =
          transport_map(pseudo[size_t(i)].label, pseudo[size_t((i + 1) % b)].label,
                        ul_rec[size_t(i)], kIgnoreLabel);
      if (cfg_.mode == TrainMode::Forec)
        codes_strong[size_t(i)] = transport_map(codes[size_t(i)], codes[size_t((i + 1) % b)],
                                                ul_rec[size_t(i)], kScenarioIgnore);
    }
  }

  tape::Tape t;
  net::ForwardResult fl =
      net::forward(nets_.student, t, t.input(stack_images(lab_strong)), true, aux);
  net::ForwardResult fu;
  if (semi) fu = net::forward(nets_.student, t, t.input(stack_images(ul_strong)), true, aux);

  tape::NodeId ls_node = t.softmax_ce(fl.seg_logits, labels_of(lab_strong));
  tape::NodeId lul_node = tape::kNoNode;
  if (semi) lul_node = t.softmax_ce(fu.seg_logits, pseudo_strong);

  tape::NodeId rec_l = tape::kNoNode, rec_u = tape::kNoNode;
  if (aux) {
    if (cfg_.mode == TrainMode::FgBg) {
      std::vector<LabelMap> fg_l, fg_u;
      for (int i = 0; i < b; ++i)
        fg_l.push_back(fgbg_target(lab_strong[size_t(i)].label, cfg_.object_classes));
      for (int i = 0; i < b; ++i)
        fg_u.push_back(fgbg_target(pseudo_strong[size_t(i)], cfg_.object_classes));
      rec_l = t.softmax_ce(fl.aux_output, std::move(fg_l));
      rec_u = t.softmax_ce(fu.aux_output, std::move(fg_u));
    } else {
      std::vector<MaskedTarget> mt_l(static_cast<size_t>(b)), mt_u(static_cast<size_t>(b));
      for (int i = 0; i < b; ++i) {
        const Sample& s = lab_strong[size_t(i)];
        mt_l[size_t(i)] = cfg_.mode == TrainMode::Forec
                              ? forec_target_labeled(s.image, s.label, cfg_.object_classes)
                              : standard_rec_target(s.image);
      }
      for (int i = 0; i < b; ++i) {
        const Sample& s = ul_strong[size_t(i)];
        mt_u[size_t(i)] = cfg_.mode == TrainMode::Forec
                              ? forec_target_from_scenarios(s.image, codes_strong[size_t(i)])
                              : standard_rec_target(s.image);
      }
      StackedTarget st_l = stack_targets(mt_l), st_u = stack_targets(mt_u);
      rec_l = t.masked_mse(fl.aux_output, std::move(st_l.target), std::move(st_l.mask));
      rec_u = t.masked_mse(fu.aux_output, std::move(st_u.target), std::move(st_u.mask));
    }
  }

  out.loss_s = t.scalar(ls_node);
  out.loss_ul = semi ? t.scalar(lul_node) : 0.f;
  out.loss_rec = aux ? 0.5f * (t.scalar(rec_l) + t.scalar(rec_u)) : 0.f;
  out.total = out.loss_s + cfg_.lambda1 * out.loss_ul + cfg_.lambda2 * out.loss_rec;
  if (!std::isfinite(out.total) || !std::isfinite(out.loss_s) || !std::isfinite(out.loss_ul) ||
      !std::isfinite(out.loss_rec)) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "train step %lld: non-finite loss (s=%g ul=%g rec=%g)",
                  (long long)global_step_, double(out.loss_s), double(out.loss_ul),
                  double(out.loss_rec));
    throw NumericError(buf);
  }

  nets_.student.zero_grads();
  t.backward(ls_node, 1.f);
  if (semi) t.backward(lul_node, cfg_.lambda1);
  if (aux) {
    t.backward(rec_l, 0.5f * cfg_.lambda2);
    t.backward(rec_u, 0.5f * cfg_.lambda2);
  }

  out.lr = schedule_lr(global_step_);
  sgd_.step(nets_.student.params(), out.lr);
  net::ema_update(nets_.teacher, nets_.student, cfg_.ema_alpha);
  ++global_step_;
  return out;
}

double Trainer::evaluate() const {
  ConfusionMatrix cm(ds_.num_classes);
  const std::vector<int>& val = part_.validation;
  for (size_t start = 0; start < val.size(); start += kEvalBatch) {
    size_t n = std::min(size_t(kEvalBatch), val.size() - start);
    std::vector<Sample> batch;
    batch.reserve(n);
    for (size_t i = 0; i < n; ++i) batch.push_back(ds_.samples[size_t(val[start + i])]);
    Tensor logits = net::forward_seg(nets_.teacher, stack_images(batch));
    for (size_t i = 0; i < n; ++i)
      cm.accumulate(ops::argmax_channels(logits, int(i)), batch[i].label);
  }
  return miou(cm).mean;
}

namespace {

void write_csv_row(std::ofstream& out, int epoch, int64_t step, double lr, const StepLosses& l,
                   double val_miou) {
  double pf = l.unlabeled_pixels ? double(l.pseudo_pixels) / double(l.unlabeled_pixels) : 0.0;
  double sf = l.unlabeled_pixels ? double(l.scenario3_pixels) / double(l.unlabeled_pixels) : 0.0;
  // %.17g round-trips doubles exactly, %.9g round-trips the float losses.
  char buf[320];
  std::snprintf(buf, sizeof(buf), "%d,%lld,%.17g,%.9g,%.9g,%.9g,%.9g,%.17g,%.17g,%.17g\n", epoch,
                (long long)step, lr, double(l.loss_s), double(l.loss_ul), double(l.loss_rec),
                double(l.total), pf, sf, val_miou);
  out << buf;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  if (cfg.data_dir.empty()) throw ConfigError("config: data.dir is required for training");
  LoadedDataset loaded = load_dataset(cfg.data_dir);
  Trainer trainer(cfg, std::move(loaded.dataset));

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream rc(out_dir / "resolved-config.json", std::ios::binary);
    if (!rc) throw IoError("cannot write " + (out_dir / "resolved-config.json").string());
    rc << dump_train_config(cfg);
  }

  std::ofstream csv(out_dir / "metrics.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
  csv << "epoch,step,lr,loss_s,loss_ul,loss_rec,total,pseudo_pixel_frac,scenario3_frac,val_miou\n";

  TrainResult result;
  result.epochs = cfg.epochs;
  result.total_steps = trainer.total_steps();

  StepLosses last;
  double val = trainer.evaluate();
  write_csv_row(csv, 0, 0, trainer.schedule_lr(0), last, val);
  csv.flush();

  for (int e = 1; e <= cfg.epochs; ++e) {
    for (int s = 0; s < trainer.steps_per_epoch(); ++s) last = trainer.step();
    val = trainer.evaluate();
    write_csv_row(csv, e, trainer.global_step(), trainer.schedule_lr(trainer.global_step()), last,
                  val);
    csv.flush();
  }
  result.final_val_miou = val;

  ckpt::CheckpointData data;
  data.tensors = ckpt::collect(trainer.student(), "student.");
  std::vector<ckpt::NamedTensor> teacher = ckpt::collect(trainer.teacher(), "teacher.");
  data.tensors.insert(data.tensors.end(), teacher.begin(), teacher.end());
  data.step = uint64_t(trainer.global_step());
  for (int i = 0; i < 8; ++i) data.rng_state[size_t(i)] = uint8_t(cfg.seed >> (8 * i));
  ckpt::write_checkpoint(data, out_dir / "final.ckpt");
  return result;
}

}  // namespace forec
