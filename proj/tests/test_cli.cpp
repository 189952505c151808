#include "comflp/activation_store.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) {
        if (c == '\'')
            q += "'\\''";
        else
            q += c;
    }
    return q + "'";
}

struct Cli {
    fs::path dir;
    explicit Cli(const std::string& name) : dir(oracle::temp_dir(name)) {}
    ~Cli() { fs::remove_all(dir); }

    Run run(const std::string& args) const {
        const auto out = dir / "stdout.txt";
        const auto err = dir / "stderr.txt";
        const std::string cmd = "COMFLP_LOG=quiet " + quote(COMFLP_CLI_PATH) + " " + args + " >" +
                                quote(out.string()) + " 2>" + quote(err.string());
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    std::string path(const std::string& name) const { return quote((dir / name).string()); }
};

std::string mock(const std::string& args) { return quote(std::string(MOCK_EVALUATOR_PATH) + " " + args); }

}  // namespace

TEST_CASE("cli: corr then coarse") {
    Cli cli("cli_corr");
    comflp::write_activation_set(fixtures::planted_set(6, {2, 5}, 40, 6, 3), cli.dir / "acts");

    auto r = cli.run("corr " + cli.path("acts") + " --out " + cli.path("m.txt"));
    REQUIRE(r.code == 0);
    const auto matrix = slurp(cli.dir / "m.txt");
    CHECK(matrix.find("measure svcca") != std::string::npos);
    CHECK(matrix.find("meta variance_ratio 0.99") != std::string::npos);

    r = cli.run("corr " + cli.path("acts") + " --measure dc --out " + cli.path("dc.txt"));
    REQUIRE(r.code == 0);
    CHECK(slurp(cli.dir / "dc.txt").find("measure dc") != std::string::npos);

    r = cli.run("coarse " + cli.path("dc.txt") + " -N 2 -K 3 --out " + cli.path("p.txt"));
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("1 ", 0) == 0);
    CHECK(r.out.find("2,5") != std::string::npos);
    CHECK(slurp(cli.dir / "p.txt").rfind("comflp-proposals 1", 0) == 0);
}

TEST_CASE("cli: exit codes") {
    Cli cli("cli_codes");
    comflp::write_activation_set(fixtures::planted_set(12, {3}, 40, 4, 5), cli.dir / "acts");

    CHECK(cli.run("corr " + cli.path("missing") + " --out " + cli.path("m.txt")).code == 4);
    CHECK(cli.run("corr " + cli.path("acts") + " --measure nope --out " + cli.path("m.txt")).code == 2);
    CHECK(cli.run("coarse --bogus").code == 2);
    CHECK(cli.run("").code == 2);

    REQUIRE(cli.run("corr " + cli.path("acts") + " --measure dc --out " + cli.path("m.txt")).code == 0);
    CHECK(cli.run("coarse " + cli.path("m.txt") + " -N 12 --out " + cli.path("p.txt")).code == 2);
    CHECK(cli.run("coarse " + cli.path("m.txt") + " -N 2 --beam 0 --out " + cli.path("p.txt")).code == 2);

    std::ofstream(cli.dir / "bad.txt") << "format CMFLPCOR 1\nmeasure dc\nnum_layers 2\nvalues\n1 0 2\n0 1 0\n";
    CHECK(cli.run("coarse " + cli.path("bad.txt") + " -N 1 --out " + cli.path("p.txt")).code == 2);

    REQUIRE(cli.run("coarse " + cli.path("m.txt") + " -N 2 --out " + cli.path("p.txt")).code == 0);
    auto r = cli.run("fine " + cli.path("p.txt") + " --evaluator " + mock("garbage") + " --out " + cli.path("r.txt"));
    CHECK(r.code == 3);
    CHECK(r.err.find("comflp:") != std::string::npos);

    CHECK(cli.run("pipeline " + cli.path("acts") + " -N 20 --evaluator " + mock("sum") + " --out " +
                  cli.path("r.txt"))
              .code == 2);
}

TEST_CASE("cli: fine and baselines") {
    Cli cli("cli_fine");
    comflp::write_activation_set(fixtures::planted_set(8, {2, 6}, 40, 4, 9), cli.dir / "acts");
    REQUIRE(cli.run("corr " + cli.path("acts") + " --measure dc --out " + cli.path("m.txt")).code == 0);
    REQUIRE(cli.run("coarse " + cli.path("m.txt") + " -N 2 --out " + cli.path("p.txt")).code == 0);

    auto r = cli.run("fine " + cli.path("p.txt") + " --evaluator " + mock("sum") + " --max-parallel 3 --out " +
                     cli.path("r.txt"));
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("selected ", 0) == 0);
    CHECK(fs::exists(cli.dir / "r.json"));

    r = cli.run("baseline --strategy top -L 12 -N 3 --out " + cli.path("top.txt"));
    REQUIRE(r.code == 0);
    CHECK(r.out == "10,11,12\n");

    r = cli.run("baseline --strategy random -L 12 -N 3 --count 4 --seed 7 --out " + cli.path("rand.txt"));
    REQUIRE(r.code == 0);
    const auto first = slurp(cli.dir / "rand.txt");
    REQUIRE(cli.run("baseline --strategy random -L 12 -N 3 --count 4 --seed 7 --out " + cli.path("rand.txt")).code ==
            0);
    CHECK(slurp(cli.dir / "rand.txt") == first);

    r = cli.run("baseline --strategy greedy -L 12 -N 6 --evaluator " + mock("sum") + " --out " +
                cli.path("greedy.txt"));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("evaluator_calls 57") != std::string::npos);
    CHECK(cli.run("baseline --strategy greedy -L 12 -N 6 --out " + cli.path("greedy.txt")).code == 2);
}

TEST_CASE("cli: pipeline is reproducible") {
    Cli cli("cli_pipeline");
    comflp::write_activation_set(fixtures::planted_set(8, {3, 4}, 48, 5, 11), cli.dir / "acts");
    const std::string args = "pipeline " + cli.path("acts") + " --measure dc --dc-shuffle-seed 4 -N 2 -K 4 " +
                             "--evaluator " + mock("target 3,4") + " --max-parallel 2 --out ";

    auto r = cli.run(args + cli.path("a.txt"));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("selected 3,4") != std::string::npos);
    REQUIRE(cli.run(args + cli.path("b.txt")).code == 0);

    auto cut = [](const std::string& s) { return s.substr(0, s.find("[timings]")); };
    const auto a = slurp(cli.dir / "a.txt");
    const auto b = slurp(cli.dir / "b.txt");
    CHECK(a.find("[timings]") != std::string::npos);
    // The report names its own sibling files, so compare after normalising the stem.
    auto normal = [](std::string s) {
        for (auto pos = s.find("b."); pos != std::string::npos; pos = s.find("b.", pos + 2))
            if (pos > 0 && s[pos - 1] == '/')
                s[pos] = 'a';
        return s;
    };
    CHECK(cut(a) == normal(cut(b)));
    CHECK(slurp(cli.dir / "a.proposals.txt") == normal(slurp(cli.dir / "b.proposals.txt")));
    CHECK(slurp(cli.dir / "a.matrix.txt") == slurp(cli.dir / "b.matrix.txt"));
}
