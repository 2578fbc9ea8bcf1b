#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* kCli = CLOZESPAN_CLI_PATH;
const char* kFixtures = CLOZESPAN_FIXTURE_DIR;

int run(const std::string& args, const std::string& log_name) {
  const fs::path log = fs::temp_directory_path() / log_name;
  const std::string cmd =
      std::string(kCli) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    ADD_FAILURE() << "command failed (" << rc << "): " << cmd << "\n" << ss.str();
  }
  return rc;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.good()) << "missing file: " << path;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::vector<std::string> kPrepareOutputs = {
    "freq.tsv", "vocab.txt", "pairs.train.jsonl", "pairs.test.jsonl", "stats.tsv"};

}  // namespace

TEST(CliPrepareData, ByteIdenticalAcrossRunsAndMatchesGolden) {
  const std::string corpus = (fs::path(kFixtures) / "tiny_corpus.tsv").string();
  const fs::path out1 = fresh_dir("czs_prep_run1");
  const fs::path out2 = fresh_dir("czs_prep_run2");
  const std::string flags = " --kp-threshold 2.0 --test-fraction 0.2 --seed 3 "
                            "--vocab-size 320 --oov-buckets 16";
  ASSERT_EQ(run("prepare-data --corpus " + corpus + " --out " + out1.string() + flags,
                "czs_prep1.log"),
            0);
  ASSERT_EQ(run("prepare-data --corpus " + corpus + " --out " + out2.string() + flags,
                "czs_prep2.log"),
            0);
  for (const std::string& name : kPrepareOutputs)
    EXPECT_EQ(slurp(out1 / name), slurp(out2 / name)) << name;

  // golden files: produced by the first verified run, then frozen
  const fs::path golden = fs::path(kFixtures) / "golden";
  if (fs::exists(golden)) {
    for (const std::string& name : kPrepareOutputs)
      EXPECT_EQ(slurp(out1 / name), slurp(golden / name)) << "golden mismatch: " << name;
  }
}

TEST(CliPrepareData, StatsFileCarriesTheFullSchema) {
  const std::string corpus = (fs::path(kFixtures) / "tiny_corpus.tsv").string();
  const fs::path out = fresh_dir("czs_prep_stats");
  ASSERT_EQ(run("prepare-data --corpus " + corpus + " --out " + out.string() +
                    " --kp-threshold 2.0 --test-fraction 0.2",
                "czs_prep_stats.log"),
            0);
  const std::string stats = slurp(out / "stats.tsv");
  for (const char* field :
       {"total_comments", "comments_filtered_by_length", "extracted_keyphrases",
        "training_set_size", "test_set_size", "mean_words_per_keyphrase"})
    EXPECT_NE(stats.find(field), std::string::npos) << field;
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
}

TEST(CliPrepareData, MissingCorpusFailsWithNonzeroExit) {
  const fs::path out = fresh_dir("czs_prep_missing");
  const std::string cmd = std::string(kCli) + " prepare-data --corpus /nonexistent.tsv --out " +
                          out.string() + " > /dev/null 2>&1";
  EXPECT_NE(std::system(cmd.c_str()), 0);
}

TEST(CliGenSynthetic, Deterministic) {
  const fs::path out1 = fresh_dir("czs_gen1");
  const fs::path out2 = fresh_dir("czs_gen2");
  ASSERT_EQ(run("gen-synthetic --out " + out1.string() + " --sentences 300 --seed 5",
                "czs_gen1.log"),
            0);
  ASSERT_EQ(run("gen-synthetic --out " + out2.string() + " --sentences 300 --seed 5",
                "czs_gen2.log"),
            0);
  for (const char* name : {"corpus.tsv", "train.jsonl", "test.jsonl"})
    EXPECT_EQ(slurp(out1 / name), slurp(out2 / name)) << name;
}

TEST(CliPipeline, EndToEndSmoke) {
  // tiny configuration: validates artifact flow and exit codes, not quality
  const fs::path work = fresh_dir("czs_pipeline");
  ASSERT_EQ(run("gen-synthetic --out " + work.string() +
                    " --sentences 500 --train-positives 24 --train-negatives 48 "
                    "--test-positives 8 --test-negatives 8 --seed 3",
                "czs_pipe_gen.log"),
            0);
  ASSERT_EQ(run("prepare-data --corpus " + (work / "corpus.tsv").string() + " --out " +
                    (work / "prep").string() +
                    " --kp-threshold 2.0 --test-fraction 0.1 --vocab-size 600 "
                    "--oov-buckets 32",
                "czs_pipe_prep.log"),
            0);
  ASSERT_EQ(run("pretrain --pairs-train " + (work / "prep/pairs.train.jsonl").string() +
                    " --pairs-test " + (work / "prep/pairs.test.jsonl").string() +
                    " --vocab " + (work / "prep/vocab.txt").string() + " --out " +
                    (work / "pretrained").string() +
                    " --max-steps 8 --batch-size 8 --negatives-per-batch 2 "
                    "--encoder-layers 1 --encoder-dim 16 --encoder-ffn-dim 24 "
                    "--proj-dim 8 --decoder-blocks 1 --decoder-ffn-dim 12 "
                    "--decoder-attn-proj 4 --num-heads 2 --max-seq-len 32 "
                    "--eval-every 8",
                "czs_pipe_pretrain.log"),
            0);
  for (const char* name : {"encoder.ckpt", "decoder.ckpt", "metrics.csv",
                           "manifest.json"})
    EXPECT_TRUE(fs::exists(work / "pretrained" / name)) << name;

  ASSERT_EQ(run("finetune --encoder " + (work / "pretrained/encoder.ckpt").string() +
                    " --decoder " + (work / "pretrained/decoder.ckpt").string() +
                    " --vocab " + (work / "prep/vocab.txt").string() + " --train " +
                    (work / "train.jsonl").string() +
                    " --slot time --out " + (work / "ft").string() +
                    " --steps 8 --batch-size 10",
                "czs_pipe_finetune.log"),
            0);
  EXPECT_TRUE(fs::exists(work / "ft" / "decoder.time.ckpt"));

  ASSERT_EQ(run("evaluate --encoder " + (work / "pretrained/encoder.ckpt").string() +
                    " --vocab " + (work / "prep/vocab.txt").string() + " --test " +
                    (work / "test.jsonl").string() + " --decoder time=" +
                    (work / "ft/decoder.time.ckpt").string() + " --out " +
                    (work / "eval").string(),
                "czs_pipe_eval.log"),
            0);
  const std::string report = slurp(work / "eval" / "report.csv");
  EXPECT_NE(report.find("slot,precision,recall,f1"), std::string::npos);
  EXPECT_NE(report.find("time,"), std::string::npos);

  // predict: one output line per input line
  const fs::path in_file = work / "predict_in.txt";
  {
    std::ofstream out(in_file);
    out << "book a table for 7pm please\n";
    out << "that is a really good point\n";
  }
  const fs::path out_file = work / "predict_out.txt";
  const std::string cmd = std::string(kCli) + " predict --encoder " +
                          (work / "pretrained/encoder.ckpt").string() + " --decoder " +
                          (work / "ft/decoder.time.ckpt").string() + " --vocab " +
                          (work / "prep/vocab.txt").string() + " < " + in_file.string() +
                          " > " + out_file.string() + " 2>/dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  std::ifstream in(out_file);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    // either NONE<TAB>prob or begin:end<TAB>text<TAB>prob
    EXPECT_TRUE(line.rfind("NONE\t", 0) == 0 || line.find(':') != std::string::npos)
        << line;
  }
  EXPECT_EQ(lines, 2u);
}
