#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dgqa/errors.h"
#include "dgqa/harness.h"
#include "dgqa/io.h"
#include "dgqa/references.h"

namespace dgqa {
namespace {

using nlohmann::json;

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::current_path() / "harness_tmp" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Three domains, 64 px references, short training.
json small_config(const fs::path& out) {
  json j = json::parse(R"({
    "seed": 3,
    "domains": [1, 11, 16],
    "references": {"procedural": {"count": 14, "size": 64, "seed": 5}},
    "target_references": 4,
    "target": {"recipe": {"mode": "stratified",
                          "components": [{"family": 1, "weight": 1}]},
               "count": 12},
    "classifier": {"epochs": 4},
    "regressor": {"epochs": 4},
    "repeats": 2
  })");
  j["output_dir"] = out.string();
  return j;
}

TEST(Png, RoundTripOfQuantizedImage) {
  auto dir = fresh_dir("png");
  auto img = quantize_8bit(dead_leaves_image(70, 65, 3));
  write_png(dir / "a.png", img);
  auto back = read_png(dir / "a.png");
  EXPECT_EQ(back, img);
  EXPECT_EQ(quantize_8bit(img), img);
  EXPECT_THROW(read_png(dir / "missing.png"), IoError);
}

TEST(Png, QuantizationRounds) {
  auto img = RasterImage::filled(64, 64, 0.5f, 1.0f / 510.0f + 1e-4f, 1.0f);
  auto q = quantize_8bit(img);
  EXPECT_FLOAT_EQ(q.at(0, 0, 0), 128.0f / 255.0f);
  EXPECT_FLOAT_EQ(q.at(0, 0, 1), 1.0f / 255.0f);
  EXPECT_FLOAT_EQ(q.at(0, 0, 2), 1.0f);
}

TEST(Dataset, ManifestRoundTrip) {
  auto dir = fresh_dir("dataset");
  auto refs = procedural_references(3, 64, 1);
  auto ds = generate_domain(refs, DomainId{13}, {1, 4}, 2);
  for (auto& s : ds.samples) s.image = quantize_8bit(s.image);
  write_dataset(dir / "d", ds, {{"family", "impulse_noise"}});
  auto back = read_dataset(dir / "d");
  EXPECT_EQ(back.name, ds.name);
  EXPECT_EQ(to_int(back.domain), 13);
  ASSERT_EQ(back.samples.size(), 6u);
  for (size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(back.samples[i].image, ds.samples[i].image);
    EXPECT_EQ(back.samples[i].quality, ds.samples[i].quality);
    EXPECT_EQ(back.samples[i].reference_id, ds.samples[i].reference_id);
    EXPECT_EQ(back.samples[i].level, ds.samples[i].level);
  }
  auto manifest = read_json(dir / "d" / kDatasetManifest);
  EXPECT_EQ(manifest["family"], "impulse_noise");
  EXPECT_TRUE(manifest["samples"][0].contains("image"));
  EXPECT_THROW(read_dataset(dir / "none"), IoError);
}

TEST(Config, ParsesAndHashes) {
  auto dir = fresh_dir("config");
  auto c = config_from_json(small_config(dir / "run"), dir);
  EXPECT_EQ(c.domains.size(), 3u);
  EXPECT_DOUBLE_EQ(c.effective_tau(), 1.0 / 3.0);
  EXPECT_EQ(c.classifier.epochs, 4);
  EXPECT_EQ(c.regressor.learning_rate, 1e-3);
  auto again = config_from_json(to_json(c), dir);
  EXPECT_EQ(config_hash(again), config_hash(c));
  auto other = small_config(dir / "run");
  other["seed"] = 4;
  EXPECT_NE(config_hash(config_from_json(other, dir)), config_hash(c));
  auto moved = small_config(dir / "elsewhere");
  EXPECT_EQ(config_hash(config_from_json(moved, dir)), config_hash(c));
}

TEST(Config, DefaultsToWholeRegistry) {
  auto dir = fresh_dir("config_defaults");
  json j = {{"target", {{"recipe", {{"components", {{{"family", "gaussian_blur"}}}}}}}}};
  auto c = config_from_json(j, dir);
  EXPECT_EQ(c.domains.size(), 15u);
  EXPECT_DOUBLE_EQ(c.effective_tau(), 1.0 / 15.0);
  EXPECT_EQ(c.repeats, 5);
  EXPECT_EQ(c.patches.patch_size, 64);
  EXPECT_EQ(c.patches.test_patches_per_image, 5);
  json finetune = j;
  finetune["regressor"] = {{"preset", "finetune"}};
  EXPECT_DOUBLE_EQ(config_from_json(finetune, dir).regressor.learning_rate, 2e-5);
}

TEST(Config, RejectsInvalidInput) {
  auto dir = fresh_dir("config_bad");
  auto base = small_config(dir / "run");
  auto unknown = base;
  unknown["learning_rate"] = 0.1;
  EXPECT_THROW(config_from_json(unknown, dir), ValidationError);
  auto missing_refs = base;
  missing_refs["references"] = {{"dir", "no_such_dir"}};
  EXPECT_THROW(config_from_json(missing_refs, dir), IoError);
  auto missing_target = base;
  missing_target["target"] = {{"image_dir", "no_such_images"}};
  EXPECT_THROW(config_from_json(missing_target, dir), IoError);
  auto bad_tau = base;
  bad_tau["tau"] = 1.5;
  EXPECT_THROW(config_from_json(bad_tau, dir), ValidationError);
  auto bad_domain = base;
  bad_domain["domains"] = {1, 4};
  EXPECT_THROW(config_from_json(bad_domain, dir), std::exception);
  auto bad_inverted = base;
  bad_inverted["inverted_domains"] = {2};
  EXPECT_THROW(config_from_json(bad_inverted, dir), ValidationError);
  auto no_target = base;
  no_target.erase("target");
  EXPECT_THROW(config_from_json(no_target, dir), ValidationError);
}

TEST(Config, AcceptsRunRecord) {
  auto dir = fresh_dir("config_run");
  auto c = config_from_json(small_config(dir / "run"), dir);
  RunContext ctx(c, "synth");
  ctx.write_run_record();
  auto record = read_json(dir / "run" / artifacts::kRun);
  EXPECT_EQ(record["config_hash"], config_hash(c));
  EXPECT_EQ(record["command"], "synth");
  EXPECT_EQ(record["seeds"]["synth"], stage_seeds(3).synth);
  auto back = load_config(dir / "run" / artifacts::kRun);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(RunLock, SecondWriterIsRejected) {
  auto dir = fresh_dir("lock");
  {
    RunLock first(dir);
    EXPECT_TRUE(fs::exists(dir / artifacts::kLock));
    EXPECT_THROW(RunLock second(dir), IoError);
  }
  EXPECT_FALSE(fs::exists(dir / artifacts::kLock));
  EXPECT_NO_THROW(RunLock again(dir));
}

TEST(Synth, FifteenDomainsOfOneHundredSamples) {
  auto dir = fresh_dir("synth15");
  json j = {{"seed", 1},
            {"references", {{"procedural", {{"count", 24}, {"size", 64}, {"seed", 2}}}}},
            {"target_references", 4},
            {"target", {{"recipe", {{"components", {{{"family", 1}}}}}}, {"count", 8}}},
            {"output_dir", (dir / "run").string()}};
  RunContext ctx(config_from_json(j, dir), "synth");
  cmd_synth(ctx);
  size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(dir / "run" / artifacts::kSources)) {
    auto m = read_json(e.path() / kDatasetManifest);
    EXPECT_EQ(m["samples"].size(), 100u) << e.path();
    ++manifests;
  }
  EXPECT_EQ(manifests, 15u);
}

TEST(Synth, TargetComponentCounts) {
  auto dir = fresh_dir("synth_target");
  auto make = [&](const std::string& mode, const std::string& name) {
    json j = small_config(dir / name);
    j["domains"] = {1, 11};
    j["target"] = {{"recipe", {{"mode", mode},
                               {"components", {{{"family", "white_noise"}, {"weight", 0.5}},
                                               {{"family", "gaussian_blur"}, {"weight", 0.5}}}}}},
                   {"count", 40}};
    RunContext ctx(config_from_json(j, dir), "synth");
    cmd_synth(ctx);
    auto labels = read_target_labels(dir / name / artifacts::kTarget / kTargetLabels);
    std::map<int, int> counts;
    for (const auto& f : labels.families) ++counts[f.at(0)];
    EXPECT_EQ(labels.quality.size(), 40u);
    return counts;
  };
  auto strat = make("stratified", "s");
  EXPECT_EQ(strat[11], 20);
  EXPECT_EQ(strat[1], 20);
  auto draw = make("single_draw", "d");
  EXPECT_EQ(draw[11] + draw[1], 40);
  EXPECT_NEAR(draw[11], 20, 10);
}

TEST(Synth, ReRunIsByteIdentical) {
  auto dir = fresh_dir("synth_repro");
  for (const char* name : {"a", "b"}) {
    RunContext ctx(config_from_json(small_config(dir / name), dir), "synth");
    cmd_synth(ctx);
  }
  size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    auto rel = fs::relative(e.path(), dir / "a");
    ASSERT_TRUE(fs::exists(dir / "b" / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 40u);
}

TEST(Synth, SingleFamilyCommand) {
  auto dir = fresh_dir("synth_family");
  write_reference_dir(dir / "refs", procedural_references(3, 64, 9));
  cmd_synth_family(dir / "refs", DomainId{22}, {1, 2, 3, 4, 5}, 4, dir / "out");
  auto ds = read_dataset(dir / "out");
  EXPECT_EQ(ds.samples.size(), 15u);
  EXPECT_EQ(ds.name, "pixelate");
  try {
    cmd_synth_family(dir / "nope", DomainId{22}, {1}, 4, dir / "out2");
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "synth");
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
}

TEST(Pipeline, ArtifactsRowsAndReport) {
  auto dir = fresh_dir("pipeline");
  const fs::path run = dir / "run";
  RunContext ctx(config_from_json(small_config(run), dir), "pipeline");
  ctx.write_run_record();
  cmd_pipeline(ctx);
  for (const char* name : {artifacts::kClassifier, artifacts::kSelection,
                           artifacts::kTraining, artifacts::kResults, artifacts::kSummary}) {
    EXPECT_TRUE(fs::exists(run / name)) << name;
  }
  const std::string csv = slurp(run / artifacts::kResults);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 2);
  auto training = read_json(run / artifacts::kTraining);
  auto selection = read_json(run / artifacts::kSelection);
  size_t n_selected = 0;
  for (const auto& e : selection["entries"]) n_selected += e["selected"].get<bool>();
  for (const auto& r : training["runs"]) {
    if (n_selected < 3) {
      EXPECT_LT(r["dgqa_train_size"].get<size_t>(), r["baseline_train_size"].get<size_t>());
    }
  }

  cmd_report(run);
  const std::string md = slurp(run / artifacts::kReportMd);
  std::istringstream lines(md);
  std::string line;
  bool header_checked = false;
  while (std::getline(lines, line)) {
    if (line.rfind("| Target |", 0) == 0) {
      EXPECT_EQ(std::count(line.begin(), line.end(), '|') - 1, 3 + 1);
      header_checked = true;
    }
  }
  EXPECT_TRUE(header_checked);
  EXPECT_NE(md.find("N.o.S. (number of selected source domains): " +
                    std::to_string(n_selected)),
            std::string::npos);
  const std::string json_first = slurp(run / artifacts::kReportJson);
  cmd_report(run);
  EXPECT_EQ(slurp(run / artifacts::kReportMd), md);
  EXPECT_EQ(slurp(run / artifacts::kReportJson), json_first);
}

TEST(Pipeline, RunsWithoutTargetLabels) {
  auto dir = fresh_dir("pipeline_nolabels");
  const fs::path run = dir / "run";
  RunContext ctx(config_from_json(small_config(run), dir), "pipeline");
  cmd_synth(ctx);
  fs::remove(run / artifacts::kTarget / kTargetLabels);
  EXPECT_NO_THROW(cmd_pipeline(ctx));
  EXPECT_TRUE(fs::exists(run / artifacts::kSelection));
  EXPECT_TRUE(fs::exists(run / artifacts::kTraining));
  EXPECT_FALSE(fs::exists(run / artifacts::kResults));
  EXPECT_FALSE(fs::exists(run / artifacts::kTarget / kTargetLabels));
  try {
    cmd_gds(ctx);
    FAIL() << "gds must require labels";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "gds");
    EXPECT_NE(std::string(e.what()).find("labels"), std::string::npos);
  }
}

TEST(Gds, SingleDomainReport) {
  auto dir = fresh_dir("gds_single");
  json j = small_config(dir / "run");
  j["domains"] = {1};
  j["repeats"] = 1;
  RunContext ctx(config_from_json(j, dir), "gds");
  cmd_synth(ctx);
  cmd_gds(ctx);
  auto g = read_json(dir / "run" / artifacts::kGds);
  ASSERT_EQ(g["runs"].size(), 1u);
  EXPECT_EQ(g["runs"][0]["rounds"].size(), 1u);
  EXPECT_EQ(g["runs"][0]["selected"], json::array({1}));
}

TEST(Report, ListsMissingArtifacts) {
  auto dir = fresh_dir("report_missing");
  try {
    cmd_report(dir);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "report");
    const std::string msg = e.what();
    EXPECT_NE(msg.find(artifacts::kRun), std::string::npos);
    EXPECT_NE(msg.find(artifacts::kSelection), std::string::npos);
  }
}

TEST(Stages, MissingInputsAreStageTagged) {
  auto dir = fresh_dir("stage_errors");
  RunContext ctx(config_from_json(small_config(dir / "run"), dir), "select");
  try {
    cmd_select(ctx);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "select");
  }
  try {
    cmd_train_domain(ctx);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "train-domain");
  }
}

}  // namespace
}  // namespace dgqa
