#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "sgwb/cli.hpp"

using namespace sgwb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path p;
    explicit TempDir(const std::string& name) : p(fs::path("cli_scratch") / name) {
        fs::remove_all(p);
        fs::create_directories(p);
    }
    ~TempDir() { fs::remove_all(p); }
    std::string str() const { return p.string(); }
    std::string file(const std::string& name) const { return (p / name).string(); }
};

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("config defaults and typed getters") {
    Config c = default_config();
    REQUIRE(c.get_int("data.n") == 20);
    REQUIRE(c.get_double("train.lr_reg") == Catch::Approx(4e-4));
    REQUIRE(c.get_bool("losses.use_adv"));
    REQUIRE_THROWS_AS(c.raw("data.unknown"), InputError);
    REQUIRE_THROWS_AS(c.set("data.unknown", "1"), InputError);

    c.set("data.n", "7");
    REQUIRE(c.get_int("data.n") == 7);
    c.set("data.n", "oops");
    REQUIRE_THROWS_AS(c.get_int("data.n"), InputError);
    c.set("losses.use_adv", "maybe");
    REQUIRE_THROWS_AS(c.get_bool("losses.use_adv"), InputError);
}

TEST_CASE("config overrides and hashing") {
    Config a = default_config(), b = default_config();
    REQUIRE(config_hash(a) == config_hash(b));
    apply_override(b, "train.batch=8");
    REQUIRE(config_hash(a) != config_hash(b));
    REQUIRE(b.get_int("train.batch") == 8);

    REQUIRE_THROWS_AS(apply_override(a, "no_equals_sign"), InputError);
    REQUIRE_THROWS_AS(apply_override(a, "=value"), InputError);
    REQUIRE_THROWS_AS(apply_override(a, "bogus.key=1"), InputError);
}

TEST_CASE("config file parsing honors sections and rejects unknowns") {
    TempDir td("configfile");
    {
        std::ofstream out(td.file("good.cfg"));
        out << "# comment line\n"
            << "[data]\n"
            << "n = 5   # trailing comment\n"
            << "size=16\n"
            << "\n"
            << "[train]\n"
            << "batch = 2\n";
    }
    Config c = default_config();
    apply_config_file(c, td.file("good.cfg"));
    REQUIRE(c.get_int("data.n") == 5);
    REQUIRE(c.get_int("data.size") == 16);
    REQUIRE(c.get_int("train.batch") == 2);

    {
        std::ofstream out(td.file("bad_key.cfg"));
        out << "[data]\nmystery = 1\n";
    }
    Config d = default_config();
    REQUIRE_THROWS_AS(apply_config_file(d, td.file("bad_key.cfg")), InputError);

    {
        std::ofstream out(td.file("bad_section.cfg"));
        out << "[data\nn = 1\n";
    }
    REQUIRE_THROWS_AS(apply_config_file(d, td.file("bad_section.cfg")), InputError);
    REQUIRE_THROWS_AS(apply_config_file(d, td.file("absent.cfg")), ArtifactError);
}

TEST_CASE("cli parsing maps flags onto the config") {
    CliRequest rq = parse_cli({"gen-data", "--seed", "9", "--n", "4", "--size", "16", "--out",
                               "somewhere"});
    REQUIRE(rq.command == "gen-data");
    REQUIRE(rq.seed == 9);
    REQUIRE(rq.cfg.get_int("data.n") == 4);
    REQUIRE(rq.cfg.get_int("data.size") == 16);
    REQUIRE(rq.out == "somewhere");

    // --set applies in order, later wins
    CliRequest rq2 = parse_cli({"eval", "--set", "train.batch=2", "--set", "train.batch=6"});
    REQUIRE(rq2.cfg.get_int("train.batch") == 6);

    REQUIRE_THROWS_AS(parse_cli({}), InputError);
    REQUIRE_THROWS_AS(parse_cli({"frobnicate"}), InputError);
    REQUIRE_THROWS_AS(parse_cli({"eval", "--wat"}), InputError);
    REQUIRE_THROWS_AS(parse_cli({"eval", "--seed"}), InputError);
    REQUIRE_THROWS_AS(parse_cli({"eval", "--n", "4"}), InputError); // gen-data only
    REQUIRE_THROWS_AS(parse_cli({"eval", "--set", "data.bogus=1"}), InputError);
}

TEST_CASE("gen-data writes a deterministic manifest and provenance") {
    TempDir a("gen_a"), b("gen_b");
    REQUIRE(run_cli({"gen-data", "--seed", "7", "--n", "3", "--size", "16", "--out",
                     a.str()}) == 0);
    REQUIRE(run_cli({"gen-data", "--seed", "7", "--n", "3", "--size", "16", "--out",
                     b.str()}) == 0);

    const std::string ma = read_text(a.file("manifest.tsv"));
    const std::string mb = read_text(b.file("manifest.tsv"));
    REQUIRE(ma == mb);

    // every named artifact exists and its recorded hash matches the bytes
    nlohmann::json run = read_json(a.file("run_gen_data.json"));
    REQUIRE(run["command"] == "gen-data");
    REQUIRE(run["seed"] == 7);
    REQUIRE(run["artifacts"].size() == 3 * 6 + 1); // six files per case + manifest
    for (const auto& [name, h] : run["artifacts"].items())
        REQUIRE(hex64(hash_file(a.file(name))) == h.get<std::string>());

    // a different seed changes the content
    TempDir c("gen_c");
    REQUIRE(run_cli({"gen-data", "--seed", "8", "--n", "3", "--size", "16", "--out",
                     c.str()}) == 0);
    REQUIRE(read_text(c.file("manifest.tsv")) != ma);
}

TEST_CASE("pipeline commands chain on a tiny dataset") {
    TempDir td("pipeline");
    auto common = [&](std::vector<std::string> v) {
        v.push_back("--out");
        v.push_back(td.str());
        v.push_back("--set");
        v.push_back("data.holdout=1");
        return v;
    };

    REQUIRE(run_cli(common({"gen-data", "--n", "4", "--size", "16"})) == 0);
    REQUIRE(run_cli(common({"train-seg", "--set", "train.seg_steps=6"})) == 0);
    REQUIRE(run_cli(common({"train-reg", "--set", "train.epochs_reg=1", "--set",
                            "train.warmup=10", "--set", "losses.pairs=256"})) == 0);
    REQUIRE(run_cli(common({"train-syn", "--set", "train.epochs_syn=1"})) == 0);
    REQUIRE(run_cli(common({"eval"})) == 0);
    REQUIRE(run_cli(common({"report"})) == 0);

    for (const char* f : {"seg.ckpt", "reg.ckpt", "mine.ckpt", "syn.ckpt", "disc.ckpt",
                          "reg_log.tsv", "syn_log.tsv", "eval_regions.tsv", "eval_suv.tsv",
                          "report.txt"})
        REQUIRE(fs::exists(td.p / f));

    const std::string reg_log = read_text(td.file("reg_log.tsv"));
    REQUIRE(reg_log.rfind("step\tepoch\titer\tbound\tsmooth\ttotal\n", 0) == 0);
    const std::string syn_log = read_text(td.file("syn_log.tsv"));
    REQUIRE(syn_log.rfind("step\tepoch\titer\ttotal\tl1\tedge\tadv\tsem\td_loss\n", 0) == 0);

    nlohmann::json reg_run = read_json(td.file("run_train_reg.json"));
    REQUIRE(reg_run["results"].contains("epe_zero"));
    REQUIRE(reg_run["results"].contains("epe_net"));
    nlohmann::json syn_run = read_json(td.file("run_train_syn.json"));
    REQUIRE(syn_run["results"].contains("psnr_before"));
    REQUIRE(syn_run["results"].contains("psnr_after"));

    const std::string report = read_text(td.file("report.txt"));
    REQUIRE(report.find("registration training") != std::string::npos);
    REQUIRE(report.find("eval_suv.tsv:") != std::string::npos);
}

TEST_CASE("exit codes follow the error taxonomy") {
    TempDir td("exitcodes");

    // config errors
    REQUIRE(run_cli({"gen-data", "--set", "data.nn=3", "--out", td.str()}) == 2);
    REQUIRE(run_cli({"nonsense"}) == 2);
    REQUIRE(run_cli({"eval", "--out", td.str(), "--set", "data.holdout=0"}) == 2);

    // missing dependency artifacts
    REQUIRE(run_cli({"train-reg", "--out", td.str()}) == 3);
    REQUIRE(run_cli({"report", "--out", td.str()}) == 3);

    REQUIRE(run_cli({"gen-data", "--n", "3", "--size", "16", "--out", td.str(), "--set",
                     "data.holdout=1"}) == 0);
    REQUIRE(run_cli({"train-syn", "--out", td.str(), "--set", "data.holdout=1"}) == 3);
    // with registration ablated the segmenter is still required
    REQUIRE(run_cli({"train-syn", "--out", td.str(), "--set", "data.holdout=1", "--set",
                     "losses.use_reg=0"}) == 3);
    REQUIRE(run_cli({"eval", "--out", td.str(), "--set", "data.holdout=1"}) == 3);
}

TEST_CASE("training reruns reproduce checkpoint hashes") {
    TempDir a("repro_a"), b("repro_b");
    for (const auto& d : {a.str(), b.str()}) {
        REQUIRE(run_cli({"gen-data", "--n", "3", "--size", "16", "--out", d, "--seed", "21",
                         "--set", "data.holdout=1"}) == 0);
        REQUIRE(run_cli({"train-reg", "--out", d, "--seed", "21", "--set", "data.holdout=1",
                         "--set", "train.epochs_reg=1", "--set", "train.warmup=10", "--set",
                         "losses.pairs=256"}) == 0);
    }
    REQUIRE(hash_file(a.file("reg.ckpt")) == hash_file(b.file("reg.ckpt")));
    REQUIRE(hash_file(a.file("mine.ckpt")) == hash_file(b.file("mine.ckpt")));
    REQUIRE(read_text(a.file("reg_log.tsv")) == read_text(b.file("reg_log.tsv")));
}

TEST_CASE("mine sanity command converges and records results") {
    TempDir td("sanity");
    REQUIRE(run_cli({"mine-sanity", "--seed", "5", "--out", td.str()}) == 0);
    nlohmann::json run = read_json(td.file("run_mine_sanity.json"));
    REQUIRE(run["results"]["analytic"].get<double>() == Catch::Approx(0.830366).margin(1e-5));
    REQUIRE(run["results"]["err"].get<double>() <= 0.10);
}
