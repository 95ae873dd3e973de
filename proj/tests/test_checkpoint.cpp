#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "forec/checkpoint.hpp"
#include "forec/net.hpp"
#include "forec/rng.hpp"

using namespace forec;
using namespace forec::ckpt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("forec-ckpt-" + std::to_string(::getpid()) + "-" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter;
};
int TempDir::counter = 0;

net::NetworkConfig small_cfg() {
  net::NetworkConfig cfg;
  cfg.num_classes = 4;
  cfg.base_width = 8;
  cfg.stages = 2;
  cfg.latent_dim = 6;
  return cfg;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("network round trip is bit exact") {
    TempDir tmp;
    auto nets = net::build(small_cfg(), 42);
    fs::path p = tmp.path / "net.ckpt";
    save_checkpoint(nets.student, p);
    net::Network loaded = load_checkpoint(p);

    auto orig = nets.student.params();
    auto back = loaded.params();
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) {
      CHECK(orig[i]->name == back[i]->name);
      CHECK(orig[i]->value.shape == back[i]->value.shape);
      CHECK(orig[i]->value.data == back[i]->value.data);
    }
    CHECK(loaded.cfg.num_classes == 4);
    CHECK(loaded.cfg.base_width == 8);
    CHECK(loaded.cfg.stages == 2);
    CHECK(loaded.cfg.latent_dim == 6);
    CHECK(loaded.cfg.aux == net::AuxKind::Reconstruction);
  }

  TEST_CASE("default config tensor count matches the architecture fixture") {
    TempDir tmp;
    auto nets = net::build(net::NetworkConfig{}, 1);
    fs::path p = tmp.path / "net.ckpt";
    save_checkpoint(nets.student, p);
    CheckpointData data = read_checkpoint(p);
    CHECK(data.tensors.size() == 19);  // 8 encoder + 6 seg + 5 aux tensors
  }

  TEST_CASE("step counter and rng state round trip") {
    TempDir tmp;
    CheckpointData data;
    data.tensors.push_back({"t", Tensor({2, 2}, {1.f, 2.f, 3.f, 4.f})});
    data.step = 123456789ull;
    for (size_t i = 0; i < data.rng_state.size(); ++i) data.rng_state[i] = uint8_t(i * 3);
    fs::path p = tmp.path / "s.ckpt";
    write_checkpoint(data, p);
    CheckpointData back = read_checkpoint(p);
    CHECK(back.step == data.step);
    CHECK(back.rng_state == data.rng_state);
    REQUIRE(back.tensors.size() == 1);
    CHECK(back.tensors[0].value.data == data.tensors[0].value.data);
  }

  TEST_CASE("corrupting a header byte breaks the magic") {
    TempDir tmp;
    auto nets = net::build(small_cfg(), 2);
    fs::path p = tmp.path / "net.ckpt";
    save_checkpoint(nets.student, p);
    {
      std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(3);
      f.put('x');
    }
    CHECK_THROWS_AS(load_checkpoint(p), IoError);
  }

  TEST_CASE("truncated files are rejected") {
    TempDir tmp;
    auto nets = net::build(small_cfg(), 3);
    fs::path full = tmp.path / "full.ckpt";
    save_checkpoint(nets.student, full);
    auto size = fs::file_size(full);
    std::ifstream in(full, std::ios::binary);
    std::string bytes(size_t(size), '\0');
    in.read(bytes.data(), std::streamsize(size));
    fs::path cut = tmp.path / "cut.ckpt";
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), std::streamsize(size / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(cut), IoError);
  }

  TEST_CASE("missing file raises") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/never.ckpt"), IoError);
  }

  TEST_CASE("prefixed trainer checkpoints prefer the teacher") {
    TempDir tmp;
    auto nets = net::build(small_cfg(), 4);
    // make student and teacher distinguishable
    nets.teacher.enc[0].w.value.fill(0.25f);
    CheckpointData data;
    for (auto& t : collect(nets.student, "student.")) data.tensors.push_back(std::move(t));
    for (auto& t : collect(nets.teacher, "teacher.")) data.tensors.push_back(std::move(t));
    fs::path p = tmp.path / "both.ckpt";
    write_checkpoint(data, p);

    net::Network loaded = load_checkpoint(p);
    CHECK(loaded.cfg.aux == net::AuxKind::None);  // teacher carries no aux decoder
    for (float v : loaded.enc[0].w.value.data) CHECK(v == 0.25f);
  }

  TEST_CASE("student-only prefix falls back to the student") {
    TempDir tmp;
    auto nets = net::build(small_cfg(), 5);
    CheckpointData data;
    for (auto& t : collect(nets.student, "student.")) data.tensors.push_back(std::move(t));
    fs::path p = tmp.path / "stu.ckpt";
    write_checkpoint(data, p);
    net::Network loaded = load_checkpoint(p);
    CHECK(loaded.cfg.aux == net::AuxKind::Reconstruction);
    CHECK(loaded.enc[0].w.value.data == nets.student.enc[0].w.value.data);
  }

  TEST_CASE("fgbg aux head shape is recognized on load") {
    TempDir tmp;
    net::NetworkConfig cfg = small_cfg();
    cfg.aux = net::AuxKind::FgBg;
    auto nets = net::build(cfg, 6);
    fs::path p = tmp.path / "fgbg.ckpt";
    save_checkpoint(nets.student, p);
    CHECK(load_checkpoint(p).cfg.aux == net::AuxKind::FgBg);
  }

  TEST_CASE("foreign tensors are rejected") {
    TempDir tmp;
    auto nets = net::build(small_cfg(), 7);
    CheckpointData data;
    data.tensors = collect(nets.student);
    data.tensors.push_back({"mystery.w", Tensor({1}, {0.f})});
    fs::path p = tmp.path / "x.ckpt";
    write_checkpoint(data, p);
    CHECK_THROWS_AS(load_checkpoint(p), IoError);
  }
}
