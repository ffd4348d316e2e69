#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "binaural/binaural.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(BINAURAL_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  std::array<char, 4096> buf;
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

/// One dataset and one trained checkpoint shared by the whole suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("binaural_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    synth_ = cli("synth --scenes 2 --seed 3 --out " + data().string());
    std::ofstream(config()) << "# tiny run\nbase_width=2\nview_embed=4\nsteps=2\nbatch_size=1\n";
    train_ = cli("train --data " + data().string() + " --config " + config().string() + " --out " + ckpt().string());
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path data() { return root_ / "data"; }
  static fs::path config() { return root_ / "run.cfg"; }
  static fs::path ckpt() { return root_ / "model.ckpt"; }

  static inline fs::path root_;
  static inline Result synth_, train_;
};

}  // namespace

TEST_F(Cli, SynthWritesSampleDirectories) {
  ASSERT_EQ(synth_.code, 0) << synth_.out;
  for (const char* f : {"binaural.wav", "mono.wav", "image.ppm", "depth.pgm", "scene.txt"})
    EXPECT_TRUE(fs::exists(data() / "sample_00000" / f)) << f;
  EXPECT_TRUE(fs::exists(data() / "sample_00001"));
}

TEST_F(Cli, FilterReportsEveryClip) {
  const auto r = cli("filter --in " + data().string() + " --threshold 0.001");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("sample_00000\t"), std::string::npos);
  EXPECT_NE(r.out.find("sample_00001\t"), std::string::npos);
  EXPECT_NE(r.out.find("of 2 clips"), std::string::npos);
}

TEST_F(Cli, TrainEvalBinauralizeAttn) {
  ASSERT_EQ(train_.code, 0) << train_.out;
  EXPECT_NE(train_.out.find("step 2 loss"), std::string::npos);
  EXPECT_NO_THROW(binaural::train::load_checkpoint(ckpt()));

  const auto report = root_ / "report.json";
  auto r = cli("eval --ckpt " + ckpt().string() + " --data " + data().string() + " --report " + report.string() +
               " --csv " + (root_ / "clips.csv").string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::stringstream json;
  json << std::ifstream(report).rdbuf();
  EXPECT_NE(json.str().find("\"clips\": 2"), std::string::npos) << json.str();
  EXPECT_NE(json.str().find("baseline_stft"), std::string::npos);
  EXPECT_TRUE(fs::exists(root_ / "clips.csv"));

  const auto sample = data() / "sample_00000";
  const auto out_wav = root_ / "out.wav";
  r = cli("binauralize --ckpt " + ckpt().string() + " --mono " + (sample / "mono.wav").string() + " --image " +
          (sample / "image.ppm").string() + " --depth " + (sample / "depth.pgm").string() + " --out " +
          out_wav.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto stereo = binaural::wav::read(out_wav);
  EXPECT_EQ(stereo.num_channels(), 2u);

  r = cli("attn --ckpt " + ckpt().string() + " --sample " + sample.string() + " --out " + (root_ / "attn").string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t maps = 0;
  for (const auto& e : fs::directory_iterator(root_ / "attn")) maps += e.path().extension() == ".pgm";
  EXPECT_EQ(maps, 10u);
  EXPECT_TRUE(fs::exists(root_ / "attn" / "layer5_image.pgm"));
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("synth --scenes 2").code, 1);
  EXPECT_EQ(cli("synth --scenes 0 --seed 1 --out " + (root_ / "x").string()).code, 1);
  EXPECT_EQ(cli("train --data " + data().string() + " --config " + (root_ / "nope.cfg").string() + " --out " +
                (root_ / "y.ckpt").string())
                .code,
            1);
  std::ofstream(root_ / "bad.cfg") << "no_such_key=1\n";
  EXPECT_EQ(cli("train --data " + data().string() + " --config " + (root_ / "bad.cfg").string() + " --out " +
                (root_ / "y.ckpt").string())
                .code,
            1);
  EXPECT_FALSE(fs::exists(root_ / "y.ckpt"));
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, DataErrorsExitTwo) {
  std::ofstream(root_ / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(cli("eval --ckpt " + (root_ / "junk.ckpt").string() + " --data " + data().string() + " --report " +
                (root_ / "r.json").string())
                .code,
            2);
  EXPECT_EQ(cli("filter --in " + (root_ / "missing").string()).code, 2);
  const auto sample = data() / "sample_00000";
  EXPECT_EQ(cli("binauralize --ckpt " + ckpt().string() + " --mono " + (sample / "binaural.wav").string() +
                " --image " + (sample / "image.ppm").string() + " --depth " + (sample / "depth.pgm").string() +
                " --out " + (root_ / "o.wav").string())
                .code,
            2);
}

TEST(CliGradcheck, PrimitivesPass) {
  const auto r = cli("gradcheck");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("conv_transpose2d"), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}
