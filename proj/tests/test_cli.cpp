// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the command-line surface, run as subprocesses.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "mffu/image_io.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  if (const char* env = std::getenv("MFFU_CLI")) return env;
  return "../tools/mffu";  // ctest working directory is build/tests
}

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  const std::string cmd = env_prefix + cli_path() + " " + args + " 2>&1";
  std::FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  std::array<char, 512> buf;
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("help exits 0 on every subcommand") {
  CHECK(run_cli("--help").exit_code == 0);
  for (const char* sub : {"synth", "preprocess", "train", "evaluate", "predict", "gradcheck"}) {
    auto r = run_cli(std::string(sub) + " --help");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("--") != std::string::npos);  // flags with defaults listed
  }
}

TEST_CASE("flag validation failures exit 1") {
  CHECK(run_cli("synth --n 4").exit_code == 1);              // missing --out
  CHECK(run_cli("synth --out /tmp/x --bogus 1").exit_code == 1);  // unknown flag
  CHECK(run_cli("train --data /tmp --epochs 0").exit_code == 1);
  CHECK(run_cli("").exit_code == 1);  // subcommand required
}

TEST_CASE("synth: writes pairs, reruns are byte-identical") {
  TempDir d1("mffu_cli_synth1"), d2("mffu_cli_synth2");
  auto r1 = run_cli("synth --out " + d1.str() + " --n 3 --size 32 --seed 5");
  CHECK(r1.exit_code == 0);
  CHECK(r1.output.find("3") != std::string::npos);

  int pairs = 0;
  for (const auto& e : fs::directory_iterator(d1.path / "images")) {
    CHECK(fs::exists(d1.path / "masks" / e.path().filename()));
    ++pairs;
  }
  CHECK(pairs == 3);

  CHECK(run_cli("synth --out " + d2.str() + " --n 3 --size 32 --seed 5").exit_code == 0);
  for (const auto& e : fs::directory_iterator(d1.path / "images"))
    CHECK(file_bytes(e.path()) == file_bytes(d2.path / "images" / e.path().filename()));
}

TEST_CASE("full pipeline: preprocess, train, evaluate, predict") {
  TempDir raw("mffu_cli_raw"), prep("mffu_cli_prep"), out("mffu_cli_out");
  REQUIRE(run_cli("synth --out " + raw.str() + " --n 6 --size 32 --seed 2").exit_code == 0);

  // inject one all-black slice; preprocess must drop it
  mffu::GrayImage black{32, 32, std::vector<std::uint8_t>(1024, 0)};
  mffu::save_gray8((raw.path / "images" / "zz_000.png").string(), black);
  mffu::save_gray8((raw.path / "masks" / "zz_000.png").string(), black);

  auto rp = run_cli("preprocess --input " + raw.str() + " --output " + prep.str() +
                    " --size 16 --min-foreground 0.001");
  CHECK(rp.exit_code == 0);
  CHECK(rp.output.find("retained 6") != std::string::npos);
  CHECK(rp.output.find("dropped 1") != std::string::npos);
  for (const auto& e : fs::directory_iterator(prep.path / "images")) {
    auto img = mffu::load_gray8(e.path().string());
    CHECK(img.w == 16);
    CHECK(img.h == 16);
  }

  const std::string ckpt = out.str() + "/model.mffu";
  const std::string hist = out.str() + "/history.csv";
  auto rt = run_cli("train --data " + prep.str() +
                    " --epochs 2 --batch-size 2 --lr 0.001 --base-width 4 --classes 3"
                    " --patience 5 --seed 3 --checkpoint " + ckpt + " --history " + hist);
  CHECK(rt.exit_code == 0);
  CHECK(rt.output.find("final train_dsc") != std::string::npos);
  CHECK(fs::exists(ckpt));
  {
    std::ifstream f(hist);
    std::string header;
    std::getline(f, header);
    CHECK(header == "epoch,train_loss,train_dsc,val_loss,val_dsc");
    int rows = 0;
    std::string line;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 2);
  }

  // identical flags and inputs: byte-identical checkpoint and history
  const std::string ckpt2 = out.str() + "/model2.mffu";
  const std::string hist2 = out.str() + "/history2.csv";
  REQUIRE(run_cli("train --data " + prep.str() +
                  " --epochs 2 --batch-size 2 --lr 0.001 --base-width 4 --classes 3"
                  " --patience 5 --seed 3 --checkpoint " + ckpt2 + " --history " + hist2)
              .exit_code == 0);
  CHECK(file_bytes(ckpt) == file_bytes(ckpt2));
  CHECK(file_bytes(hist) == file_bytes(hist2));

  const std::string report = out.str() + "/report.txt";
  auto re = run_cli("evaluate --data " + prep.str() + " --checkpoint " + ckpt + " --report " +
                    report);
  CHECK(re.exit_code == 0);
  {
    std::ifstream f(report);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    for (const char* key : {"eval.samples = 6", "eval.class0.dsc = ", "eval.class1.ji = ",
                            "eval.class2.dsc = ", "eval.foreground.dsc = ", "eval.foreground.ji = "})
      CHECK(text.find(key) != std::string::npos);
  }

  // predict: mismatched input auto-resizes; output has the config size
  const std::string some_image = (raw.path / "images" / "case0000_000.png").string();  // 32x32
  const std::string mask_out = out.str() + "/pred.png";
  auto rpred = run_cli("predict --image " + some_image + " --checkpoint " + ckpt + " --out " +
                       mask_out);
  CHECK(rpred.exit_code == 0);
  auto mask = mffu::load_gray8(mask_out);
  CHECK(mask.w == 16);
  CHECK(mask.h == 16);
  for (auto v : mask.pixels) CHECK(v <= 2);  // pixel = class id

  // runtime failures exit 2
  CHECK(run_cli("predict --image " + some_image + " --checkpoint /nonexistent --out " + mask_out)
            .exit_code == 2);
  {
    auto corrupted = file_bytes(ckpt);
    corrupted[corrupted.size() / 2] ^= 0x10;
    std::ofstream f(out.str() + "/bad.mffu", std::ios::binary);
    f.write(reinterpret_cast<const char*>(corrupted.data()),
            static_cast<std::streamsize>(corrupted.size()));
    f.close();
    auto rbad = run_cli("evaluate --data " + prep.str() + " --checkpoint " + out.str() +
                        "/bad.mffu --report " + report);
    CHECK(rbad.exit_code == 2);
    CHECK(rbad.output.find("checksum") != std::string::npos);
  }
  CHECK(run_cli("preprocess --input /nonexistent_dir --output " + out.str()).exit_code == 2);
}

TEST_CASE("gradcheck subcommand") {
  auto rall = run_cli("gradcheck --ops all --seed 99");
  CHECK(rall.exit_code == 0);
  for (const char* op : {"conv2d", "conv_transpose2d", "max_pool2d", "global_avg_pool",
                         "batch_norm", "conv1d_channels", "mff", "cca", "augmented_skip",
                         "encoder", "decoder", "bridge", "head"})
    CHECK(rall.output.find(op) != std::string::npos);

  auto rone = run_cli("gradcheck --ops conv2d");
  CHECK(rone.exit_code == 0);
  int rows = 0;
  for (size_t pos = 0; (pos = rone.output.find(" ok", pos)) != std::string::npos; ++pos) ++rows;
  CHECK(rows == 1);  // single row

  CHECK(run_cli("gradcheck --ops not_an_op").exit_code == 1);

  // kernel backend forced through the environment
  CHECK(run_cli("gradcheck --ops conv2d", "MFFU_KERNELS=scalar ").exit_code == 0);
}
