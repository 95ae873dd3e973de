#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "forec/checkpoint.hpp"
#include "forec/dataset.hpp"
#include "forec/errors.hpp"
#include "forec/net.hpp"
#include "forec/ops.hpp"
#include "forec/optim.hpp"
#include "forec/pseudolabel.hpp"
#include "forec/tape.hpp"
#include "forec/trainer.hpp"

using namespace forec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("forec-tr-" + std::to_string(::getpid()) + "-" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter;
};
int TempDir::counter = 0;

Dataset tiny_ds(int train = 12, int val = 4, uint64_t seed = 11) {
  Dataset ds = gen_shapes(train + val, 32, 32, 3, seed);
  ds.val_count = val;
  return ds;
}

TrainConfig tiny_cfg(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.batch = 2;
  c.epochs = 2;
  c.seed = 77;
  c.labeled_fraction = 0.25;
  c.partition_seed = 5;
  c.net.base_width = 8;
  c.net.latent_dim = 8;
  return c;
}

bool all_zero(const Tensor& t) {
  for (float v : t.data)
    if (v != 0.f) return false;
  return true;
}

bool any_nonzero_grad(const std::vector<net::ConvLayer>& layers) {
  for (const net::ConvLayer& l : layers) {
    if (!all_zero(l.w.grad)) return true;
    if (l.has_bias && !all_zero(l.b.grad)) return true;
  }
  return false;
}

bool params_equal(const net::Network& a, const net::Network& b) {
  auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->value.data != pb[i]->value.data) return false;
  return true;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(bool(in));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<double> split_csv_row(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("train_config") {
  TEST_CASE("empty document keeps every default") {
    TrainConfig c = parse_train_config("{}");
    CHECK(c.mode == TrainMode::Forec);
    CHECK(c.lambda1 == 0.5f);
    CHECK(c.lambda2 == 1.0f);
    CHECK(c.tau == 0.95f);
    CHECK(c.ema_alpha == 0.99f);
    CHECK(c.batch == 4);
    CHECK(c.epochs == 60);
    CHECK(c.lr0 == 1e-3);
    CHECK(c.momentum == 0.9);
    CHECK(c.weight_decay == 1e-4);
    CHECK(c.power == 0.8);
    CHECK(c.labeled_fraction == 1.0 / 16.0);
    CHECK(c.object_classes == std::vector<int>{1, 2, 3});
    CHECK(c.net.base_width == 16);
    CHECK(c.net.stages == 2);
    CHECK(c.net.latent_dim == 16);
    CHECK(c.net.num_classes == 4);
  }

  TEST_CASE("dump and parse round-trip every field") {
    TrainConfig c;
    c.mode = TrainMode::FgBg;
    c.lambda1 = 0.25f;
    c.lambda2 = 2.5f;
    c.tau = 0.7f;
    c.ema_alpha = 0.95f;
    c.batch = 3;
    c.epochs = 7;
    c.seed = 0xDEADBEEFCAFEBABEull;
    c.lr0 = 2e-3;
    c.momentum = 0.85;
    c.weight_decay = 3e-5;
    c.power = 1.1;
    c.data_dir = "/tmp/somewhere";
    c.labeled_fraction = 0.5;
    c.partition_seed = 99;
    c.object_classes = {2, 3};
    c.net.base_width = 8;
    c.net.stages = 3;
    c.net.latent_dim = 12;
    c.net.num_classes = 4;
    c.augment.flip_p = 0.4;
    c.augment.zoom_lo = 0.8;
    c.augment.zoom_hi = 1.5;
    c.augment.jitter_gain = 0.1;
    c.augment.jitter_shift = 0.05;
    c.augment.gray_p = 0.3;
    c.augment.blur_p = 0.25;
    c.augment.blur_sigma_lo = 0.2;
    c.augment.blur_sigma_hi = 0.9;
    c.augment.cutmix_p = 0.6;
    c.augment.cutmix_area_lo = 0.25;
    c.augment.cutmix_area_hi = 0.4;
    c.augment.cutmix_aspect_lo = 0.6;
    c.augment.cutmix_aspect_hi = 1.8;

    TrainConfig r = parse_train_config(dump_train_config(c));
    CHECK(r.mode == c.mode);
    CHECK(r.lambda1 == c.lambda1);
    CHECK(r.lambda2 == c.lambda2);
    CHECK(r.tau == c.tau);
    CHECK(r.ema_alpha == c.ema_alpha);
    CHECK(r.batch == c.batch);
    CHECK(r.epochs == c.epochs);
    CHECK(r.seed == c.seed);
    CHECK(r.lr0 == c.lr0);
    CHECK(r.momentum == c.momentum);
    CHECK(r.weight_decay == c.weight_decay);
    CHECK(r.power == c.power);
    CHECK(r.data_dir == c.data_dir);
    CHECK(r.labeled_fraction == c.labeled_fraction);
    CHECK(r.partition_seed == c.partition_seed);
    CHECK(r.object_classes == c.object_classes);
    CHECK(r.net.base_width == c.net.base_width);
    CHECK(r.net.stages == c.net.stages);
    CHECK(r.net.latent_dim == c.net.latent_dim);
    CHECK(r.net.num_classes == c.net.num_classes);
    CHECK(r.augment.flip_p == c.augment.flip_p);
    CHECK(r.augment.zoom_lo == c.augment.zoom_lo);
    CHECK(r.augment.zoom_hi == c.augment.zoom_hi);
    CHECK(r.augment.jitter_gain == c.augment.jitter_gain);
    CHECK(r.augment.jitter_shift == c.augment.jitter_shift);
    CHECK(r.augment.gray_p == c.augment.gray_p);
    CHECK(r.augment.blur_p == c.augment.blur_p);
    CHECK(r.augment.blur_sigma_lo == c.augment.blur_sigma_lo);
    CHECK(r.augment.blur_sigma_hi == c.augment.blur_sigma_hi);
    CHECK(r.augment.cutmix_p == c.augment.cutmix_p);
    CHECK(r.augment.cutmix_area_lo == c.augment.cutmix_area_lo);
    CHECK(r.augment.cutmix_area_hi == c.augment.cutmix_area_hi);
    CHECK(r.augment.cutmix_aspect_lo == c.augment.cutmix_aspect_lo);
    CHECK(r.augment.cutmix_aspect_hi == c.augment.cutmix_aspect_hi);
  }

  TEST_CASE("unknown keys are rejected by name") {
    try {
      parse_train_config(R"({"train.modee": "supervised"})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.modee") != std::string::npos);
    }
  }

  TEST_CASE("wrong value types name the key") {
    try {
      parse_train_config(R"({"train.batch": "four"})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.batch") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_train_config(R"({"pseudo.object_classes": 3})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"train.seed": -4})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"data.dir": 7})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("[1,2]"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("not json"), ConfigError);
  }

  TEST_CASE("every mode name parses and bad ones do not") {
    CHECK(mode_from_name("supervised") == TrainMode::Supervised);
    CHECK(mode_from_name("baseline") == TrainMode::Baseline);
    CHECK(mode_from_name("baseline+rec") == TrainMode::Rec);
    CHECK(mode_from_name("baseline+forec") == TrainMode::Forec);
    CHECK(mode_from_name("baseline+fgbg") == TrainMode::FgBg);
    CHECK_THROWS_AS(mode_from_name("forec"), ConfigError);
    for (TrainMode m : {TrainMode::Supervised, TrainMode::Baseline, TrainMode::Rec,
                        TrainMode::Forec, TrainMode::FgBg})
      CHECK(mode_from_name(mode_name(m)) == m);
  }

  TEST_CASE("invalid values are rejected") {
    CHECK_THROWS_AS(parse_train_config(R"({"train.lambda1": -0.5})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"pseudo.tau": 1.5})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"train.batch": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"train.epochs": -1})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"opt.lr0": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"opt.momentum": 1.0})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"data.labeled_fraction": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"data.labeled_fraction": 1.5})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"pseudo.object_classes": []})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"pseudo.object_classes": [1, 9]})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"aug.zoom_lo": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"aug.cutmix_area_lo": 0.6, "aug.cutmix_area_hi": 0.5})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_train_config(R"({"net.stages": 0})"), ConfigError);
  }

  TEST_CASE("load_train_config reads files and reports missing ones") {
    TempDir tmp;
    fs::path p = tmp.path / "cfg.json";
    {
      std::ofstream out(p);
      out << R"({"train.mode": "baseline", "train.epochs": 3})";
    }
    TrainConfig c = load_train_config(p);
    CHECK(c.mode == TrainMode::Baseline);
    CHECK(c.epochs == 3);
    CHECK_THROWS_AS(load_train_config(tmp.path / "absent.json"), IoError);
  }
}

TEST_SUITE("trainer_setup") {
  TEST_CASE("steps_per_epoch follows the unlabeled pool") {
    Dataset ds = tiny_ds();  // 12 train, 4 val
    TrainConfig c = tiny_cfg(TrainMode::Forec);
    // fraction 0.25 of 12 -> 3 labeled, 9 unlabeled; batch 2 -> ceil(9/2) = 5.
    Trainer t(c, ds);
    CHECK(t.steps_per_epoch() == 5);
    CHECK(t.total_steps() == 10);
    CHECK(t.partition().labeled.size() == 3);
    CHECK(t.partition().unlabeled.size() == 9);
    CHECK(t.partition().validation.size() == 4);

    TrainConfig sup = tiny_cfg(TrainMode::Supervised);
    Trainer t2(sup, ds);
    CHECK(t2.steps_per_epoch() == 5);  // same budget as the semi arms

    sup.labeled_fraction = 1.0;
    Trainer t3(sup, ds);
    CHECK(t3.steps_per_epoch() == 6);  // ceil(12/2) once no unlabeled pool exists
  }

  TEST_CASE("semi-supervised modes need an unlabeled pool") {
    TrainConfig c = tiny_cfg(TrainMode::Baseline);
    c.labeled_fraction = 1.0;
    CHECK_THROWS_AS(Trainer(c, tiny_ds()), ValueError);
  }

  TEST_CASE("class count must match the dataset") {
    TrainConfig c = tiny_cfg(TrainMode::Forec);
    c.net.num_classes = 5;
    c.object_classes = {1, 2, 3};
    CHECK_THROWS_AS(Trainer(c, tiny_ds()), ConfigError);
  }

  TEST_CASE("a validation split is required") {
    Dataset ds = tiny_ds();
    ds.val_count = 0;
    CHECK_THROWS_AS(Trainer(tiny_cfg(TrainMode::Forec), ds), ValueError);
  }

  TEST_CASE("aux decoder presence follows the mode") {
    Dataset ds = tiny_ds();
    CHECK(Trainer(tiny_cfg(TrainMode::Supervised), ds).student().aux.empty());
    CHECK(Trainer(tiny_cfg(TrainMode::Baseline), ds).student().aux.empty());
    CHECK_FALSE(Trainer(tiny_cfg(TrainMode::Rec), ds).student().aux.empty());
    Trainer fg(tiny_cfg(TrainMode::FgBg), ds);
    CHECK(fg.student().aux.back().w.value.dim(0) == 2);
    Trainer fo(tiny_cfg(TrainMode::Forec), ds);
    CHECK(fo.student().aux.back().w.value.dim(0) == 3);
    CHECK_FALSE(fo.student().aux.back().has_bias);
    CHECK(fo.teacher().aux.empty());
  }

  TEST_CASE("shared initialization is identical across modes") {
    Dataset ds = tiny_ds();
    Trainer base(tiny_cfg(TrainMode::Baseline), ds);
    Trainer forec(tiny_cfg(TrainMode::Forec), ds);
    auto a = base.student().shared_params();
    auto b = forec.student().shared_params();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->name == b[i]->name);
      CHECK(a[i]->value.data == b[i]->value.data);
    }
  }
}

TEST_SUITE("train_step") {
  TEST_CASE("supervised mode zeroes the auxiliary terms") {
    Trainer t(tiny_cfg(TrainMode::Supervised), tiny_ds());
    StepLosses l = t.step();
    CHECK(l.loss_s > 0.f);
    CHECK(l.loss_ul == 0.f);
    CHECK(l.loss_rec == 0.f);
    CHECK(l.total == l.loss_s);
    CHECK(l.pseudo_pixels == 0);
    CHECK(l.unlabeled_pixels == 0);
  }

  TEST_CASE("zero weights collapse the total onto the supervised loss") {
    TrainConfig c = tiny_cfg(TrainMode::Forec);
    c.lambda1 = 0.f;
    c.lambda2 = 0.f;
    Trainer t(c, tiny_ds());
    StepLosses l = t.step();
    CHECK(l.total == l.loss_s);
  }

  TEST_CASE("loss composition is exact in 32-bit arithmetic") {
    for (TrainMode m : {TrainMode::Supervised, TrainMode::Baseline, TrainMode::Rec,
                        TrainMode::Forec, TrainMode::FgBg}) {
      CAPTURE(mode_name(m));
      TrainConfig c = tiny_cfg(m);
      c.tau = 0.3f;  // let some pseudo-labels through even early
      Trainer t(c, tiny_ds());
      for (int i = 0; i < 3; ++i) {
        StepLosses l = t.step();
        CHECK(l.total == l.loss_s + c.lambda1 * l.loss_ul + c.lambda2 * l.loss_rec);
      }
    }
  }

  TEST_CASE("an impossible threshold silences the unlabeled losses") {
    TrainConfig c = tiny_cfg(TrainMode::Forec);
    c.tau = 1.0f;
    Trainer t(c, tiny_ds());
    StepLosses l = t.step();
    CHECK(l.loss_ul == 0.f);
    CHECK(l.pseudo_pixels == 0);
    CHECK(l.scenario3_pixels == l.unlabeled_pixels);
    CHECK(l.loss_rec > 0.f);  // the labeled half still reconstructs
  }

  TEST_CASE("a permissive threshold pseudo-labels every pixel") {
    TrainConfig c = tiny_cfg(TrainMode::Baseline);
    c.tau = 0.f;
    Trainer t(c, tiny_ds());
    StepLosses l = t.step();
    CHECK(l.pseudo_pixels == l.unlabeled_pixels);
    CHECK(l.loss_ul > 0.f);
    CHECK(l.loss_rec == 0.f);
  }

  TEST_CASE("the lr trace follows the poly schedule exactly") {
    TrainConfig c = tiny_cfg(TrainMode::Rec);
    Trainer t(c, tiny_ds());
    for (int64_t i = 0; i < t.total_steps(); ++i) {
      StepLosses l = t.step();
      CHECK(l.lr == optim::poly_lr(c.lr0, i, t.total_steps(), c.power));
    }
  }

  TEST_CASE("the teacher never accumulates gradients") {
    Trainer t(tiny_cfg(TrainMode::Forec), tiny_ds());
    for (int i = 0; i < 3; ++i) t.step();
    for (const tape::Parameter* p : t.teacher().params()) CHECK(all_zero(p->grad));
  }

  TEST_CASE("ema alpha extremes copy or freeze the teacher") {
    Dataset ds = tiny_ds();
    TrainConfig c = tiny_cfg(TrainMode::Baseline);
    c.ema_alpha = 0.f;
    Trainer t(c, ds);
    t.step();
    auto tp = t.teacher().shared_params();
    auto sp = t.student().shared_params();
    for (size_t i = 0; i < tp.size(); ++i) {
      for (size_t j = 0; j < tp[i]->value.data.size(); ++j)
        CHECK(tp[i]->value.data[j] == sp[i]->value.data[j]);
    }

    c.ema_alpha = 1.f;
    Trainer t2(c, ds);
    std::vector<Tensor> before;
    for (const tape::Parameter* p : t2.teacher().shared_params()) before.push_back(p->value);
    t2.step();
    auto tp2 = t2.teacher().shared_params();
    for (size_t i = 0; i < tp2.size(); ++i) CHECK(tp2[i]->value.data == before[i].data);
  }

  TEST_CASE("ema moves the teacher between its old value and the student") {
    TrainConfig c = tiny_cfg(TrainMode::Baseline);
    Trainer t(c, tiny_ds());
    Tensor t0 = t.teacher().shared_params()[0]->value;
    t.step();
    const Tensor& t1 = t.teacher().shared_params()[0]->value;
    const Tensor& s1 = t.student().shared_params()[0]->value;
    for (size_t j = 0; j < t1.data.size(); ++j) {
      double expect = 0.99 * double(t0.data[j]) + 0.01 * double(s1.data[j]);
      CHECK(double(t1.data[j]) == doctest::Approx(expect).epsilon(1e-5));
    }
  }

  TEST_CASE("same seed gives identical steps, different seeds diverge") {
    TrainConfig c = tiny_cfg(TrainMode::Forec);
    Trainer a(c, tiny_ds());
    Trainer b(c, tiny_ds());
    for (int i = 0; i < 3; ++i) {
      StepLosses la = a.step();
      StepLosses lb = b.step();
      CHECK(la.loss_s == lb.loss_s);
      CHECK(la.loss_ul == lb.loss_ul);
      CHECK(la.loss_rec == lb.loss_rec);
      CHECK(la.pseudo_pixels == lb.pseudo_pixels);
    }
    CHECK(params_equal(a.student(), b.student()));

    TrainConfig c2 = c;
    c2.seed = 78;
    Trainer d(c2, tiny_ds());
    for (int i = 0; i < 3; ++i) d.step();
    CHECK_FALSE(params_equal(a.student(), d.student()));
  }

  TEST_CASE("a poisoned parameter aborts the step with diagnostics") {
    Trainer t(tiny_cfg(TrainMode::Rec), tiny_ds());
    t.student().enc[0].w.value.data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(t.step(), NumericError);
  }

  TEST_CASE("evaluation returns a sane miou for the fresh teacher") {
    Trainer t(tiny_cfg(TrainMode::Baseline), tiny_ds());
    double v = t.evaluate();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_SUITE("trainer_gradients") {
  TEST_CASE("seg and aux losses train disjoint decoders through one encoder") {
    Dataset ds = tiny_ds();
    net::NetworkConfig ncfg;
    ncfg.base_width = 8;
    ncfg.latent_dim = 8;
    ncfg.aux = net::AuxKind::Reconstruction;
    net::BuildResult nets = net::build(ncfg, 3);

    Tensor x = Tensor::zeros({2, 3, 32, 32});
    std::vector<LabelMap> gt;
    for (int i = 0; i < 2; ++i) {
      const Sample& s = ds.samples[size_t(i)];
      std::copy(s.image.data.begin(), s.image.data.end(),
                x.data.begin() + size_t(i) * s.image.data.size());
      gt.push_back(s.label);
    }

    tape::Tape t;
    net::ForwardResult f = net::forward(nets.student, t, t.input(x), true, true);

    SUBCASE("reconstruction loss leaves the seg decoder untouched") {
      MaskedTarget m0 = standard_rec_target(ds.samples[0].image);
      Tensor target = Tensor::zeros({2, 3, 32, 32});
      Tensor mask = Tensor::full({2, 1, 32, 32}, 1.f);
      std::copy(m0.target.data.begin(), m0.target.data.end(), target.data.begin());
      tape::NodeId rec = t.masked_mse(f.aux_output, target, mask);
      nets.student.zero_grads();
      t.backward(rec, 1.f);
      CHECK_FALSE(any_nonzero_grad(nets.student.seg));
      CHECK(any_nonzero_grad(nets.student.enc));
      CHECK(any_nonzero_grad(nets.student.aux));
    }

    SUBCASE("segmentation loss leaves the aux decoder untouched") {
      tape::NodeId ce = t.softmax_ce(f.seg_logits, gt);
      nets.student.zero_grads();
      t.backward(ce, 1.f);
      CHECK_FALSE(any_nonzero_grad(nets.student.aux));
      CHECK(any_nonzero_grad(nets.student.enc));
      CHECK(any_nonzero_grad(nets.student.seg));
    }
  }

  TEST_CASE("masked and ignored pixels carry zero gradient") {
    Dataset ds = tiny_ds();
    net::NetworkConfig ncfg;
    ncfg.base_width = 8;
    ncfg.latent_dim = 8;
    ncfg.aux = net::AuxKind::Reconstruction;
    net::BuildResult nets = net::build(ncfg, 9);

    const Sample& s = ds.samples[0];
    Tensor x({1, 3, 32, 32}, s.image.data);

    tape::Tape t;
    net::ForwardResult f = net::forward(nets.student, t, t.input(x), true, true);

    SUBCASE("scenario-3 style mask zeroes the reconstruction gradient") {
      Tensor target({1, 3, 32, 32}, s.image.data);
      Tensor mask = Tensor::full({1, 1, 32, 32}, 1.f);
      for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 32; ++xx) mask.at4(0, 0, y, xx) = 0.f;
      tape::NodeId rec = t.masked_mse(f.aux_output, target, mask);
      float loss = t.scalar(rec);
      t.backward(rec, 1.f);
      const Tensor& g = t.grad(f.aux_output);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
          for (int xx = 0; xx < 32; ++xx) CHECK(g.at4(0, c, y, xx) == 0.f);

      // Perturbing a masked-out target pixel cannot change the loss.
      Tensor target2 = target;
      target2.at4(0, 1, 2, 3) += 100.f;
      tape::Tape t2;
      net::ForwardResult f2 = net::forward(nets.student, t2, t2.input(x), false, true);
      tape::NodeId rec2 = t2.masked_mse(f2.aux_output, target2, mask);
      CHECK(t2.scalar(rec2) == loss);
    }

    SUBCASE("ignore labels zero the segmentation gradient") {
      LabelMap lbl = s.label;
      for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 32; ++xx) lbl.at(y, xx) = kIgnoreLabel;
      tape::NodeId ce = t.softmax_ce(f.seg_logits, {lbl});
      t.backward(ce, 1.f);
      const Tensor& g = t.grad(f.seg_logits);
      for (int c = 0; c < 4; ++c)
        for (int y = 0; y < 8; ++y)
          for (int xx = 0; xx < 32; ++xx) CHECK(g.at4(0, c, y, xx) == 0.f);
    }
  }
}

TEST_SUITE("train_run") {
  TEST_CASE("train writes metrics, checkpoint and resolved config") {
    TempDir data, out;
    Dataset ds = tiny_ds();
    Partition part = make_partition(ds, 1.0, 1);
    save_dataset(ds, part, data.path);

    TrainConfig c = tiny_cfg(TrainMode::Forec);
    c.data_dir = data.path.string();
    TrainResult r = train(c, out.path);
    CHECK(r.epochs == 2);
    CHECK(r.total_steps == 10);

    std::vector<std::string> lines = read_lines(out.path / "metrics.csv");
    REQUIRE(lines.size() == 4);  // header + epoch 0..2
    CHECK(lines[0] ==
          "epoch,step,lr,loss_s,loss_ul,loss_rec,total,pseudo_pixel_frac,scenario3_frac,val_miou");

    std::vector<double> row0 = split_csv_row(lines[1]);
    REQUIRE(row0.size() == 10);
    CHECK(row0[0] == 0.0);
    CHECK(row0[1] == 0.0);
    CHECK(row0[2] == c.lr0);
    for (int k = 3; k <= 8; ++k) CHECK(row0[size_t(k)] == 0.0);
    CHECK(row0[9] >= 0.0);

    Trainer probe(c, ds);
    for (size_t i = 1; i < lines.size(); ++i) {
      std::vector<double> row = split_csv_row(lines[i]);
      int64_t step = int64_t(row[1]);
      CHECK(step == int64_t(i - 1) * probe.steps_per_epoch());
      CHECK(row[2] == probe.schedule_lr(step));
      CHECK(row[6] == doctest::Approx(row[3] + c.lambda1 * row[4] + c.lambda2 * row[5])
                          .epsilon(1e-6));
    }
    std::vector<double> last = split_csv_row(lines.back());
    CHECK(r.final_val_miou == last[9]);

    TrainConfig resolved = load_train_config(out.path / "resolved-config.json");
    CHECK(resolved.mode == c.mode);
    CHECK(resolved.seed == c.seed);
    CHECK(resolved.data_dir == c.data_dir);

    ckpt::CheckpointData data2 = ckpt::read_checkpoint(out.path / "final.ckpt");
    CHECK(data2.step == 10);
    bool student_seen = false, teacher_seen = false;
    for (const ckpt::NamedTensor& nt : data2.tensors) {
      if (nt.name.rfind("student.", 0) == 0) student_seen = true;
      if (nt.name.rfind("teacher.", 0) == 0) teacher_seen = true;
    }
    CHECK(student_seen);
    CHECK(teacher_seen);
    net::Network evalnet = ckpt::load_checkpoint(out.path / "final.ckpt");
    CHECK(evalnet.cfg.num_classes == 4);
  }

  TEST_CASE("zero epochs still evaluates the initialized model") {
    TempDir data, out;
    Dataset ds = tiny_ds();
    save_dataset(ds, make_partition(ds, 1.0, 1), data.path);
    TrainConfig c = tiny_cfg(TrainMode::Supervised);
    c.epochs = 0;
    c.data_dir = data.path.string();
    TrainResult r = train(c, out.path);
    CHECK(r.total_steps == 0);
    std::vector<std::string> lines = read_lines(out.path / "metrics.csv");
    CHECK(lines.size() == 2);
    CHECK(r.final_val_miou >= 0.0);
    CHECK(fs::exists(out.path / "final.ckpt"));
  }

  TEST_CASE("identical runs produce byte-identical outputs") {
    TempDir data, out1, out2;
    Dataset ds = tiny_ds();
    save_dataset(ds, make_partition(ds, 1.0, 1), data.path);
    TrainConfig c = tiny_cfg(TrainMode::Forec);
    c.epochs = 1;
    c.data_dir = data.path.string();
    train(c, out1.path);
    train(c, out2.path);
    CHECK(slurp(out1.path / "metrics.csv") == slurp(out2.path / "metrics.csv"));
    CHECK(slurp(out1.path / "final.ckpt") == slurp(out2.path / "final.ckpt"));
    CHECK(slurp(out1.path / "resolved-config.json") == slurp(out2.path / "resolved-config.json"));
  }

  TEST_CASE("every mode completes a short run") {
    TempDir data;
    Dataset ds = tiny_ds();
    save_dataset(ds, make_partition(ds, 1.0, 1), data.path);
    for (TrainMode m : {TrainMode::Supervised, TrainMode::Baseline, TrainMode::Rec,
                        TrainMode::Forec, TrainMode::FgBg}) {
      CAPTURE(mode_name(m));
      TempDir out;
      TrainConfig c = tiny_cfg(m);
      c.epochs = 1;
      c.data_dir = data.path.string();
      TrainResult r = train(c, out.path);
      CHECK(read_lines(out.path / "metrics.csv").size() == 3);
      CHECK(r.final_val_miou >= 0.0);
    }
  }

  TEST_CASE("training requires a dataset path") {
    TrainConfig c = tiny_cfg(TrainMode::Forec);
    TempDir out;
    CHECK_THROWS_AS(train(c, out.path), ConfigError);
    c.data_dir = (out.path / "nope").string();
    CHECK_THROWS_AS(train(c, out.path), IoError);
  }
}
