#include <doctest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "alprio/al_record.hpp"
#include "alprio/cli.hpp"
#include "alprio/controller.hpp"
#include "alprio/tensor_io.hpp"
#include "test_support.hpp"

using namespace alprio;

namespace {

const char* kConfig = R"([run]
seed = 11

[synth]
height = 16
width = 16
samples_per_task = 8
pool_size = 14
holdout_size = 4

[task.disk]
role = meta-train
shape = disk
max_distractors = 1

[task.cross]
role = meta-train
shape = cross
intensity_offset = 0.1

[task.ring]
role = meta-test
shape = ring
corruption_fraction = 0.3

[predictor]
channel_widths = 2,4,4
max_epochs = 4
convergence_patience = 2

[controller]
encoder_channels = 2,2,2
fc_width = 6
hidden_size = 4

[meta_train]
total_trials = 2
episodes_per_trial = 1
steps_per_episode = 2
minibatch_size = 3

[al]
beta0 = 4
beta = 3
)";

std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

struct Result {
    int code = 0;
    std::string output;
};

Result run(const std::string& args, const testing::TempDir& dir) {
    const auto log = dir / "cli-output.txt";
    const std::string cmd = std::string("'") + ALPRIO_CLI_PATH + "' " + args + " > " + quote(log) + " 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = std::filesystem::exists(log) ? read_text_file(log) : "";
    return r;
}

std::string tree_digest(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::ostringstream out;
    for (const auto& f : files) out << std::filesystem::relative(f, root).string() << '\n' << read_text_file(f);
    return out.str();
}

}  // namespace

TEST_CASE("cli end to end") {
    testing::TempDir dir("cli");
    write_text_file(dir / "c.ini", kConfig);
    const std::string cfg = " --config " + quote(dir / "c.ini");

    REQUIRE(run("synth" + cfg + " --out " + quote(dir / "data"), dir).code == 0);
    REQUIRE(run("synth" + cfg + " --out " + quote(dir / "data2"), dir).code == 0);
    CHECK(tree_digest(dir / "data") == tree_digest(dir / "data2"));
    CHECK(std::filesystem::exists(dir / "data" / "meta-train" / "disk" / "manifest.json"));
    CHECK(std::filesystem::exists(dir / "data" / "meta-test" / "ring" / "pool" / "manifest.json"));
    CHECK(std::filesystem::exists(dir / "data" / "meta-test" / "ring" / "holdout" / "manifest.json"));

    REQUIRE(run("meta-train" + cfg + " --envs " + quote(dir / "data" / "meta-train") + " --out " +
                    quote(dir / "ckpt"),
                dir)
                .code == 0);
    std::istringstream log(read_text_file(dir / "ckpt" / "train_log.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        CHECK(nlohmann::json::parse(line).contains("trial"));
        ++lines;
    }
    CHECK(lines == 2);
    const LoadedController c1 = load_controller(dir / "ckpt" / "controller");
    REQUIRE(run("meta-train" + cfg + " --envs " + quote(dir / "data" / "meta-train") + " --out " +
                    quote(dir / "ckpt2"),
                dir)
                .code == 0);
    CHECK(load_controller(dir / "ckpt2" / "controller").weights == c1.weights);

    const std::string pool = " --pool " + quote(dir / "data" / "meta-test" / "ring" / "pool") + " --holdout " +
                             quote(dir / "data" / "meta-test" / "ring" / "holdout");
    REQUIRE(run("al-run" + cfg + pool + " --strategy random --seeds 1,2 --out " + quote(dir / "runs"), dir).code ==
            0);
    const ALRunRecord r1 = read_record(dir / "runs" / record_file_name("random", 1));
    CHECK(r1.iterations.size() == (14 - 4) / 3);
    CHECK(r1.exhausted);
    REQUIRE(run("al-run" + cfg + pool + " --strategy random --seeds 1 --out " + quote(dir / "runs2"), dir).code == 0);
    CHECK(read_text_file(dir / "runs" / record_file_name("random", 1)) ==
          read_text_file(dir / "runs2" / record_file_name("random", 1)));

    REQUIRE(run("al-run" + cfg + pool + " --strategy proposed --seeds 1 --controller-ckpt " + quote(dir / "ckpt") +
                    " --predictor-ckpt " + quote(dir / "ckpt" / "predictor") + " --out " + quote(dir / "runs"),
                dir)
                .code == 0);

    const Result proposed_without_ckpt =
        run("al-run" + cfg + pool + " --strategy proposed --seeds 1 --out " + quote(dir / "runs3"), dir);
    CHECK(proposed_without_ckpt.code == 2);
    CHECK(run("al-run" + cfg + pool + " --strategy random --beta0 14 --out " + quote(dir / "runs4"), dir).code != 0);

    REQUIRE(run("analyze --records " + quote(dir / "runs" / "random-seed1.jsonl") + " --out " + quote(dir / "rep1"),
                dir)
                .code == 0);
    const auto single = nlohmann::json::parse(read_text_file(dir / "rep1" / "summary.json"));
    CHECK(single["comparison"] == "absent");
    REQUIRE(run("analyze --records " + quote(dir / "runs" / "*.jsonl") + " --out " + quote(dir / "rep2") +
                    " --pool-dir " + quote(dir / "data" / "meta-test" / "ring" / "pool") + " --holdout-dir " +
                    quote(dir / "data" / "meta-test" / "ring" / "holdout"),
                dir)
                .code == 0);
    CHECK(std::filesystem::exists(dir / "rep2" / "mmd_series.csv"));
    CHECK(run("analyze --records " + quote(dir / "runs" / "*.nothing") + " --out " + quote(dir / "rep3"), dir).code !=
          0);
}

TEST_CASE("cli configuration errors") {
    testing::TempDir dir("cli-errors");
    std::string text = kConfig;
    text.replace(text.find("max_epochs"), 0, "lerning_rate = 0.1\n");
    write_text_file(dir / "bad.ini", text);
    const Result bad = run("synth --config " + quote(dir / "bad.ini") + " --out " + quote(dir / "out"), dir);
    CHECK(bad.code == 2);
    CHECK(bad.output.find("lerning_rate") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "out"));
    CHECK(run("synth --config " + quote(dir / "missing.ini") + " --out " + quote(dir / "out"), dir).code == 3);
    CHECK(run("frobnicate", dir).code == 2);
    CHECK(run("synth --config", dir).code == 2);
}

TEST_CASE("glob expansion and record names") {
    testing::TempDir dir("glob");
    for (const char* f : {"b.jsonl", "a.jsonl", "c.txt"}) write_text_file(dir / f, "x");
    const auto m = expand_glob((dir / "*.jsonl").string());
    REQUIRE(m.size() == 2);
    CHECK(m[0].filename() == "a.jsonl");
    CHECK(record_file_name("mc-dropout", 7) == "mc-dropout-seed7.jsonl");
}
