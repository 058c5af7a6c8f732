#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "secap/cli.hpp"
#include "test_util.hpp"

using namespace secap;
using secap::test::TempDir;

namespace {

const std::filesystem::path kFixtures = SECAP_FIXTURES;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "secap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kTinyModel =
    "n_q = 4\nd_q = 8\nqformer_layers = 1\nqformer_ffn = 16\nmax_text_len = 64\n"
    "d_dec = 8\ndecoder_layers = 1\ndecoder_ffn = 16\nmax_positions = 128\nvarnet_hidden = 8\n";

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"bogus"}).code, 1);
  EXPECT_EQ(run({"train", "--stage", "3", "--manifest", "m", "--out", "o"}).code, 1);
  EXPECT_EQ(run({"train", "--manifest", "m", "--out", "o"}).code, 1);
  EXPECT_EQ(run({"eval", "--pred", "p"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, EvalOnFixturesMatchesGolden) {
  TempDir d("cli_eval");
  const auto r = run({"eval", "--pred", (kFixtures / "eval_pred.jsonl").string(), "--ref",
                      (kFixtures / "eval_ref.jsonl").string(), "--out", (d / "report.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(d / "report.csv"), slurp(kFixtures / "eval_report.csv"));
  EXPECT_EQ(r.out, "bleu1=0.9234 bleu4=0.5203 rouge_l=0.8101 cider=1.8233 (10 items)\n");
}

TEST(Cli, EvalRefusesOverwriteWithoutForce) {
  TempDir d("cli_eval");
  write(d / "report.csv", "keep me");
  const std::vector<std::string> args = {"eval", "--pred", (kFixtures / "eval_pred.jsonl").string(), "--ref",
                                         (kFixtures / "eval_ref.jsonl").string(), "--out", (d / "report.csv").string()};
  const auto r = run(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  EXPECT_EQ(slurp(d / "report.csv"), "keep me");
  auto forced = args;
  forced.push_back("--force");
  EXPECT_EQ(run(forced).code, 0);
  EXPECT_EQ(slurp(d / "report.csv"), slurp(kFixtures / "eval_report.csv"));
}

TEST(Cli, EvalMismatchListsProblems) {
  TempDir d("cli_eval");
  write(d / "pred.jsonl", R"({"id":"zz","audio":"a.wav","transcription":"t","captions":["c"],"emotion_category":"calm"})"
                          "\n");
  const auto r = run({"eval", "--pred", (d / "pred.jsonl").string(), "--ref", (kFixtures / "eval_ref.jsonl").string(),
                      "--out", (d / "r.csv").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("'zz'"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("'e10'"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(d / "r.csv"));
  EXPECT_EQ(run({"eval", "--pred", (d / "pred.jsonl").string(), "--ref", (kFixtures / "eval_ref.jsonl").string(),
                 "--out", (d / "r.csv").string(), "--tokenization", "bytes"})
                .code,
            1);
}

TEST(Cli, SynthTrainCaptionRoundTrip) {
  TempDir d("cli_flow");
  auto r = run({"synth-data", "--out", (d / "data").string(), "--items-per-category", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("12 records", 0), 0u) << r.out;
  EXPECT_EQ(run({"synth-data", "--out", (d / "data").string(), "--items-per-category", "3"}).code, 1);

  write(d / "model.cfg", kTinyModel);
  write(d / "s1.cfg", "n_categories = 2\nk_per_category = 2\n");
  const auto manifest = (d / "data" / "manifest.jsonl").string();
  r = run({"train", "--stage", "1", "--manifest", manifest, "--out", (d / "s1.ck").string(), "--config",
           (d / "s1.cfg").string(), "--model-config", (d / "model.cfg").string(), "--steps", "3", "--metrics",
           (d / "s1.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "trained to step 3 -> " + (d / "s1.ck").string() + "\n");
  EXPECT_EQ(slurp(d / "s1.csv").rfind(metrics_header(), 0), 0u);

  // same output path again: refused, file untouched
  const auto before = slurp(d / "s1.ck");
  r = run({"train", "--stage", "1", "--manifest", manifest, "--out", (d / "s1.ck").string(), "--config",
           (d / "s1.cfg").string(), "--model-config", (d / "model.cfg").string(), "--steps", "3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(slurp(d / "s1.ck"), before);

  write(d / "s2.cfg", "batch_size = 2\ndecoder_pretrain_steps = 2\n");
  r = run({"train", "--stage", "2", "--manifest", manifest, "--out", (d / "s2.ck").string(), "--config",
           (d / "s2.cfg").string(), "--init", (d / "s1.ck").string(), "--steps", "2"});
  ASSERT_EQ(r.code, 0) << r.err;

  const auto wav = d / "data" / "wav";
  const auto first = std::filesystem::directory_iterator(wav)->path();
  r = run({"caption", "--checkpoint", (d / "s2.ck").string(), "--input", first.string(), "--max-len", "12"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1);

  r = run({"featurize", "--input", first.string(), "--output", (d / "f.seft").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto again = run({"caption", "--checkpoint", (d / "s2.ck").string(), "--input", (d / "f.seft").string(),
                          "--max-len", "12"});
  EXPECT_EQ(again.out, run({"caption", "--checkpoint", (d / "s2.ck").string(), "--input", first.string(),
                            "--max-len", "12"})
                           .out);

  r = run({"caption", "--checkpoint", (d / "s2.ck").string(), "--manifest", manifest, "--out",
           (d / "pred.jsonl").string(), "--max-len", "12"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(data::read_manifest(d / "pred.jsonl").size(), 12u);
  r = run({"eval", "--pred", (d / "pred.jsonl").string(), "--ref", manifest, "--out", (d / "rep.csv").string()});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, TrainValidationErrors) {
  TempDir d("cli_bad");
  std::ofstream(d / "empty.jsonl").close();
  auto r = run({"train", "--stage", "1", "--manifest", (d / "empty.jsonl").string(), "--out", (d / "o.ck").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no records"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(d / "o.ck"));

  r = run({"train", "--stage", "1", "--manifest", (d / "missing.jsonl").string(), "--out", (d / "o.ck").string()});
  EXPECT_EQ(r.code, 1);

  write(d / "bad.cfg", "learning_rate = 3\n");
  r = run({"train", "--stage", "1", "--manifest", (d / "empty.jsonl").string(), "--out", (d / "o.ck").string(),
           "--config", (d / "bad.cfg").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST(Cli, CaptionErrors) {
  TempDir d("cli_cap");
  write(d / "junk.ck", "junk");
  EXPECT_EQ(run({"caption", "--checkpoint", (d / "junk.ck").string(), "--input", "x.wav"}).code, 1);
  EXPECT_EQ(run({"caption", "--checkpoint", (d / "none.ck").string(), "--input", "x.wav"}).code, 1);
  EXPECT_EQ(run({"caption", "--checkpoint", (d / "junk.ck").string()}).code, 1);
}

TEST(Cli, BinaryExitCodes) {
  const std::string cli = SECAP_CLI_PATH;
  ASSERT_TRUE(std::filesystem::exists(cli)) << cli;
  auto code = [&](const std::string& args) {
    const int s = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(code("--help"), 0);
  EXPECT_EQ(code("train --stage 3 --manifest m --out o"), 1);
  TempDir d("cli_bin");
  EXPECT_EQ(code("eval --pred " + (kFixtures / "eval_pred.jsonl").string() + " --ref " +
                 (kFixtures / "eval_ref.jsonl").string() + " --out " + (d / "r.csv").string()),
            0);
}
