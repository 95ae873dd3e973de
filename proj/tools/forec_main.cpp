// forec: dataset generation, training, evaluation, latent export and
// gradient checking for the semi-supervised shapes lab.
//
// Exit codes: 0 success, 1 check failure, 2 usage or config error,
// 3 numerical failure during training.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "forec/checkpoint.hpp"
#include "forec/dataset.hpp"
#include "forec/errors.hpp"
#include "forec/gradcheck.hpp"
#include "forec/image_io.hpp"
#include "forec/latentviz.hpp"
#include "forec/metrics.hpp"
#include "forec/net.hpp"
#include "forec/ops.hpp"
#include "forec/pseudolabel.hpp"
#include "forec/tensor.hpp"
#include "forec/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace forec;

void parse_size(const std::string& s, int* h, int* w) {
  char extra = 0;
  if (std::sscanf(s.c_str(), "%dx%d%c", h, w, &extra) != 2)
    throw ConfigError("gen-data: --size expects HxW, got '" + s + "'");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_json(const json& j) { std::printf("%s\n", j.dump().c_str()); }

Tensor stack_images(const Dataset& ds, const std::vector<int>& ids, size_t first, int n) {
  Tensor out = Tensor::zeros({n, 3, ds.h, ds.w});
  int64_t stride = int64_t(3) * ds.h * ds.w;
  for (int i = 0; i < n; ++i) {
    const Tensor& img = ds.samples[size_t(ids[first + size_t(i)])].image;
    std::copy(img.data.begin(), img.data.end(), out.data.begin() + i * stride);
  }
  return out;
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::string out;
  int count = 256;
  int val = 64;
  std::string size = "64x64";
  int classes = 3;
  uint64_t seed = 1;
};

int run_gen(const GenArgs& a) {
  int h = 0, w = 0;
  parse_size(a.size, &h, &w);
  fs::path out = a.out;
  if (fs::exists(out))
    throw ConfigError("gen-data: output path already exists: " + out.string());

  Dataset ds = gen_shapes(a.count + a.val, h, w, a.classes, a.seed);
  ds.val_count = a.val;
  Partition part = make_partition(ds, 1.0, a.seed);

  // Write into a sibling temp dir and rename so a crash never leaves a
  // half-written dataset at the target path.
  fs::path tmp = out;
  tmp += ".tmp-" + std::to_string(uint64_t(::getpid()));
  fs::remove_all(tmp);
  try {
    save_dataset(ds, part, tmp);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  fs::rename(tmp, out);

  print_json(json{{"out", out.string()},
                  {"count", ds.count()},
                  {"train", ds.train_count()},
                  {"val", ds.val_count},
                  {"height", ds.h},
                  {"width", ds.w},
                  {"object_classes", a.classes},
                  {"num_classes", ds.num_classes},
                  {"seed", a.seed}});
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string out;
  std::string mode;
  std::string data;
  uint64_t seed = 0;
  bool seed_set = false;
  int epochs = -1;
  double fraction = 0.0;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? parse_train_config("{}") : load_train_config(a.config);
  if (!a.mode.empty()) cfg.mode = mode_from_name(a.mode);
  if (a.seed_set) cfg.seed = a.seed;
  if (!a.data.empty()) cfg.data_dir = a.data;
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  if (a.fraction > 0) cfg.labeled_fraction = a.fraction;

  TrainResult r = train(cfg, a.out);
  print_json(json{{"out", a.out},
                  {"mode", mode_name(cfg.mode)},
                  {"epochs", r.epochs},
                  {"total_steps", r.total_steps},
                  {"final_val_miou", r.final_val_miou}});
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt;
  std::string data;
  bool as_json = false;
};

int run_eval(const EvalArgs& a) {
  net::Network model = ckpt::load_checkpoint(a.ckpt);
  LoadedDataset ld = load_dataset(a.data);
  const Dataset& ds = ld.dataset;
  if (model.cfg.num_classes != ds.num_classes)
    throw ConfigError("eval: checkpoint expects " + std::to_string(model.cfg.num_classes) +
                      " classes, dataset has " + std::to_string(ds.num_classes));
  const std::vector<int>& ids = ld.partition.validation;
  if (ids.empty()) throw ValueError("eval: dataset has no validation split");

  ConfusionMatrix cm(ds.num_classes);
  constexpr int kBatch = 8;
  for (size_t i = 0; i < ids.size(); i += kBatch) {
    int n = int(std::min(ids.size() - i, size_t(kBatch)));
    Tensor logits = net::forward_seg(model, stack_images(ds, ids, i, n));
    for (int j = 0; j < n; ++j)
      cm.accumulate(ops::argmax_channels(logits, j), ds.samples[size_t(ids[i + size_t(j)])].label);
  }
  IouResult iou = miou(cm);

  if (a.as_json) {
    print_json(json{{"miou", iou.mean},
                    {"per_class", iou.per_class},
                    {"valid", iou.valid},
                    {"pixel_accuracy", pixel_accuracy(cm)},
                    {"samples", ids.size()}});
  } else {
    std::printf("val_miou %.6f over %zu images\n", iou.mean, ids.size());
  }
  return 0;
}

// ------------------------------------------------------------------ latent

struct LatentArgs {
  std::string ckpt;
  std::string image;
  std::string out;
  std::string label;
  int topk = 0;
};

int run_latent(const LatentArgs& a) {
  net::Network student = load_student_network(a.ckpt);
  Tensor img = read_ppm(a.image);
  LatentSlices slices = extract_latents(student, img);

  std::vector<int> objects;
  for (int c = 1; c < student.cfg.num_classes; ++c) objects.push_back(c);

  LabelMap mask;
  if (!a.label.empty()) {
    mask = fgbg_target(read_pgm(a.label), objects);
  } else {
    // No ground truth given: rank against the student's own prediction.
    Tensor batch = Tensor::zeros({1, img.dim(0), img.dim(1), img.dim(2)});
    std::copy(img.data.begin(), img.data.end(), batch.data.begin());
    mask = fgbg_target(ops::argmax_channels(net::forward_seg(student, batch), 0), objects);
  }
  for (uint8_t& v : mask.v)
    if (v == kIgnoreLabel) v = 0;  // ignore pixels count as background

  std::vector<SliceScore> ranking = rank_by_foreground(slices.raw, mask);
  LatentExport ex = export_grid(slices, ranking, a.out, a.topk);

  json manifest = json::parse(slurp(ex.manifest));
  print_json(json{{"out", a.out},
                  {"latent_dim", slices.raw.dim(0)},
                  {"exported", ex.files.size()},
                  {"mean_top3_score", manifest.at("mean_top3_score")},
                  {"manifest", ex.manifest.string()}});
  return 0;
}

// -------------------------------------------------------------- grad-check

struct GradArgs {
  std::string op;
  int trials = 20;
  uint64_t seed = 1;
};

int run_gradcheck(const GradArgs& a) {
  std::vector<gradcheck::CheckResult> results;
  if (a.op.empty())
    results = gradcheck::run_all(a.trials, a.seed);
  else
    results.push_back(gradcheck::run_op(a.op, a.trials, a.seed));

  bool all_pass = true;
  for (const gradcheck::CheckResult& r : results) {
    std::printf("%-18s trials %-4d max_rel_err %.3e tol %.0e %s\n", r.op.c_str(), r.trials,
                r.max_rel_err, r.tolerance, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised shapes segmentation lab"};
  app.require_subcommand(1);

  GenArgs g;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic shapes dataset");
  gen->add_option("--out", g.out, "output directory")->required();
  gen->add_option("--count", g.count, "training image count");
  gen->add_option("--val", g.val, "validation image count");
  gen->add_option("--size", g.size, "image size as HxW");
  gen->add_option("--classes", g.classes, "object class count");
  gen->add_option("--seed", g.seed, "generator seed");

  TrainArgs t;
  CLI::App* train_cmd = app.add_subcommand("train", "run a training experiment");
  train_cmd->add_option("--config", t.config, "JSON config file");
  train_cmd->add_option("--out", t.out, "run output directory")->required();
  train_cmd->add_option("--mode", t.mode, "training mode override");
  CLI::Option* seed_opt = train_cmd->add_option("--seed", t.seed, "seed override");
  train_cmd->add_option("--data", t.data, "dataset directory override");
  train_cmd->add_option("--epochs", t.epochs, "epoch count override");
  train_cmd->add_option("--fraction", t.fraction, "labeled fraction override");

  EvalArgs e;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", e.ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", e.data, "dataset directory")->required();
  eval_cmd->add_flag("--json", e.as_json, "print full JSON report");

  LatentArgs l;
  CLI::App* latent_cmd = app.add_subcommand("latent", "export latent slice images");
  latent_cmd->add_option("--ckpt", l.ckpt, "checkpoint file")->required();
  latent_cmd->add_option("--image", l.image, "input PPM image")->required();
  latent_cmd->add_option("--out", l.out, "output directory")->required();
  latent_cmd->add_option("--label", l.label, "PGM label map for the foreground mask");
  latent_cmd->add_option("--topk", l.topk, "export only the top k slices (0 = all)");

  GradArgs gc;
  CLI::App* grad_cmd = app.add_subcommand("grad-check", "finite-difference gradient check");
  grad_cmd->add_option("--op", gc.op, "check a single op");
  grad_cmd->add_option("--trials", gc.trials, "random trials per op");
  grad_cmd->add_option("--seed", gc.seed, "trial seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    int rc = app.exit(ex);
    return rc == 0 ? 0 : 2;
  }
  t.seed_set = seed_opt->count() > 0;

  try {
    if (gen->parsed()) return run_gen(g);
    if (train_cmd->parsed()) return run_train(t);
    if (eval_cmd->parsed()) return run_eval(e);
    if (latent_cmd->parsed()) return run_latent(l);
    if (grad_cmd->parsed()) return run_gradcheck(gc);
  } catch (const forec::NumericError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 3;
  } catch (const forec::Error& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
