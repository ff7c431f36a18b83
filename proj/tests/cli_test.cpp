/**
 * Copyright 2026 The pegquant Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pegq/model_file.hpp"
#include "pegq/outliers.hpp"
#include "pegq/quant_config.hpp"
#include "pegq/tensor_file.hpp"
#include "test_models.hpp"

namespace pegq {
namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("pegq_cli_" + std::to_string(::getpid()) + "_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(PEGQ_CLI_PATH) + " " + args + " >" + path("stdout.txt") + " 2>" + path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // Small model plus integer token and label files.
  void write_model_fixture() {
    const EncoderConfig c = testing::tiny_config();
    save_model(path("model.bin"), init_encoder(c, 91, 0.3f));
    const Dataset d = testing::tiny_data(c, 12, 92);
    write_tensor_file(path("tokens.qt"), TensorF(Shape{d.tokens.batch, d.tokens.seq},
                                                 std::vector<float>(d.tokens.ids.begin(), d.tokens.ids.end())));
    write_tensor_file(path("labels.qt"),
                      TensorF(Shape{d.labels.size()}, std::vector<float>(d.labels.begin(), d.labels.end())));
    QuantConfig::uniform(8, 8).save(path("w8a8.json"));
    QuantConfig::disabled().save(path("fp32.json"));
  }

  fs::path dir_;
};

TEST_F(Cli, TokenRangesHandExample) {
  write_tensor_file(path("t.qt"), TensorF(Shape{1, 2, 2}, {1, 2, -3, 4}));
  ASSERT_EQ(run("token-ranges " + path("t.qt") + " --out " + path("r.csv")), 0);
  EXPECT_EQ(slurp(path("r.csv")), "seq,token,min,max\n0,0,1,2\n0,1,-3,4\n");
}

TEST_F(Cli, OutliersDeterministicAndHeader) {
  OutlierDumpSpec spec;
  spec.sequences = 2;
  spec.outlier_dims = {4, 9};
  spec.outlier_tokens = {3};
  write_tensor_file(path("d.qt"), make_outlier_dump(spec), false);
  ASSERT_EQ(run("outliers " + path("d.qt") + " --out " + path("a.csv") + " --summary " + path("s.csv")), 0);
  ASSERT_EQ(run("outliers " + path("d.qt") + " --out " + path("b.csv")), 0);
  const std::string a = slurp(path("a.csv"));
  EXPECT_EQ(a, slurp(path("b.csv")));
  EXPECT_EQ(a.rfind("# crc=absent sigma=6 stats=per_sequence", 0), 0u);
  EXPECT_NE(slurp(path("s.csv")).find("\n4,2,2\n9,2,2\n"), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  std::ofstream(path("junk.qt")) << "junk";
  EXPECT_EQ(run("outliers " + path("junk.qt") + " --out " + path("x.csv")), 2);
  write_tensor_file(path("r2.qt"), TensorF(Shape{3, 4}));
  EXPECT_EQ(run("outliers " + path("r2.qt") + " --out " + path("x.csv")), 2);
  EXPECT_EQ(run("peg-plan " + path("r2.qt") + " --k 3 --out " + path("p.json")), 3);
  EXPECT_EQ(run("quantize " + path("r2.qt") + " --bits 5 --out " + path("q.qt")), 3);
  EXPECT_EQ(run("no-such-command"), 3);
  EXPECT_EQ(run("outliers"), 3);
}

TEST_F(Cli, PegPlanIdentityForOneGroupAndRoundTrip) {
  TensorF t(Shape{2, 3, 6});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = float((i * 7) % 11) * (i % 6 == 2 ? 30.0f : 1.0f);
  write_tensor_file(path("c.qt"), t);
  ASSERT_EQ(run("peg-plan " + path("c.qt") + " --k 1 --no-permute --out " + path("k1.json")), 0);
  EXPECT_TRUE(group_spec_from_text(slurp(path("k1.json"))).is_identity());
  ASSERT_EQ(run("peg-plan " + path("c.qt") + " --k 3 --out " + path("k3.json")), 0);
  const GroupSpec g = group_spec_from_text(slurp(path("k3.json")));
  EXPECT_EQ(g.group_of(2), 2u);
  EXPECT_EQ(group_spec_from_text(group_spec_to_text(g)), g);
}

TEST_F(Cli, EstimateThenQuantizeMatchesLibrary) {
  TensorF t(Shape{4, 8});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = float(i % 13) - 4.5f;
  write_tensor_file(path("x.qt"), t);
  ASSERT_EQ(run("estimate-ranges " + path("x.qt") + " --bits 4 --out " + path("p.json")), 0);
  ASSERT_EQ(run("quantize " + path("x.qt") + " --params " + path("p.json") + " --out " + path("q.qt")), 0);
  const GranularParams p = granular_params_from_text(slurp(path("p.json")));
  EXPECT_EQ(p.params()[0], QParams::from_range(-4.5, 7.5, 4, false));
  EXPECT_EQ(read_tensor_file(path("q.qt")), fake_quantize(t, p));
}

TEST_F(Cli, SimulateAndAblate) {
  write_model_fixture();
  const std::string common = " --model " + path("model.bin") + " --input " + path("tokens.qt") + " --labels " +
                             path("labels.qt") + " --calibrate " + path("tokens.qt");
  ASSERT_EQ(run("simulate --qconfig " + path("w8a8.json") + common + " --out " + path("s1.csv") + " --dump-sites " +
                path("dump")),
            0);
  ASSERT_EQ(run("simulate --qconfig " + path("w8a8.json") + common + " --out " + path("s2.csv")), 0);
  EXPECT_EQ(slurp(path("s1.csv")), slurp(path("s2.csv")));
  EXPECT_TRUE(fs::exists(dir_ / "dump" / "head.output.qt"));

  ASSERT_EQ(run("ablate --qconfig " + path("w8a8.json") + common + " --out " + path("a0.csv")), 0);
  const std::string a0 = slurp(path("a0.csv"));
  EXPECT_EQ(a0.rfind("excluded_group,score,rank\nnone,", 0), 0u);
  EXPECT_EQ(std::count(a0.begin(), a0.end(), '\n'), 2);
  ASSERT_EQ(run("ablate --qconfig " + path("w8a8.json") + common + " --standard --out " + path("a5.csv")), 0);
  const std::string a5 = slurp(path("a5.csv"));
  EXPECT_EQ(std::count(a5.begin(), a5.end(), '\n'), 7);
  EXPECT_EQ(run("ablate --qconfig " + path("w8a8.json") + common + " --groups bogus --out " + path("x.csv")), 3);

  // Uncalibrated config without parameters is a config error.
  EXPECT_EQ(run("simulate --qconfig " + path("w8a8.json") + " --model " + path("model.bin") + " --input " +
                path("tokens.qt")),
            3);
  // Fractional token ids are an input-format error.
  write_tensor_file(path("frac.qt"), TensorF(Shape{1, 2}, {1.5f, 2.0f}));
  EXPECT_EQ(run("simulate --qconfig " + path("fp32.json") + " --model " + path("model.bin") + " --input " +
                path("frac.qt")),
            2);
}

}  // namespace
}  // namespace pegq
