// Test double for the evaluator protocol. Reads "L=<int>\nprune=<csv>\n" on
// stdin and prints a metric chosen by the mode:
//
//   const V            V
//   sum                (sum of pruned indices) / 100
//   target CSV         |target xor pruned| / 10
//   table CSV=V ...    V for the listed proposal; exit 5 when absent
//   quality MATRIX     1 - quality(pruned, MATRIX)
//   garbage            non-numeric output
//
// Options before the mode: --count-file PATH (append one line per call),
// --sleep-on CSV SECONDS, --fail-on CSV CODE, --check-env.

#include "comflp/correlation.hpp"
#include "comflp/search.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fcntl.h>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

namespace {

std::vector<int> parse_csv(const std::string& s) {
    std::vector<int> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!tok.empty())
            out.push_back(std::stoi(tok));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string count_file, sleep_on, fail_on;
    double sleep_seconds = 0.0;
    int fail_code = 1;
    bool check_env = false;
    std::size_t i = 0;
    for (; i < args.size(); ++i) {
        if (args[i] == "--count-file")
            count_file = args[++i];
        else if (args[i] == "--sleep-on") {
            sleep_on = args[++i];
            sleep_seconds = std::stod(args[++i]);
        } else if (args[i] == "--fail-on") {
            fail_on = args[++i];
            fail_code = std::stoi(args[++i]);
        } else if (args[i] == "--check-env")
            check_env = true;
        else
            break;
    }
    if (i >= args.size())
        return 64;
    const std::string mode = args[i++];

    std::string line_l, line_p;
    std::getline(std::cin, line_l);
    std::getline(std::cin, line_p);
    if (line_l.rfind("L=", 0) != 0 || line_p.rfind("prune=", 0) != 0)
        return 65;
    const int num_layers = std::stoi(line_l.substr(2));
    const std::string prune = line_p.substr(6);
    const std::vector<int> layers = parse_csv(prune);

    if (!count_file.empty()) {
        const std::string rec = prune + "\n";
        const int fd = ::open(count_file.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        if (fd >= 0) {
            (void)!::write(fd, rec.data(), rec.size());
            ::close(fd);
        }
    }
    if (check_env) {
        const char* env = std::getenv("COMFLP_PROPOSAL_JSON");
        const std::string expected = "{\"L\":" + std::to_string(num_layers) + ",\"prune\":[" + prune + "]}";
        if (!env || expected != env)
            return 7;
    }
    if (!sleep_on.empty() && prune == sleep_on)
        std::this_thread::sleep_for(std::chrono::duration<double>(sleep_seconds));
    if (!fail_on.empty() && prune == fail_on)
        return fail_code;

    double metric = 0.0;
    if (mode == "const") {
        std::cout << args.at(i) << "\n";
        return 0;
    } else if (mode == "sum") {
        int sum = 0;
        for (int l : layers)
            sum += l;
        metric = sum / 100.0;
    } else if (mode == "target") {
        const std::vector<int> t = parse_csv(args.at(i));
        std::set<int> a(t.begin(), t.end()), b(layers.begin(), layers.end());
        int diff = 0;
        for (int x : a)
            diff += b.count(x) ? 0 : 1;
        for (int x : b)
            diff += a.count(x) ? 0 : 1;
        metric = diff / 10.0;
    } else if (mode == "table") {
        bool found = false;
        for (; i < args.size(); ++i) {
            const auto eq = args[i].find('=');
            if (args[i].substr(0, eq) == prune) {
                std::cout << args[i].substr(eq + 1) << "\n";
                found = true;
                break;
            }
        }
        return found ? 0 : 5;
    } else if (mode == "quality") {
        const comflp::CorrelationMatrix m = comflp::read_matrix(args.at(i));
        metric = 1.0 - comflp::quality_metric(comflp::PruningProposal(num_layers, layers), m);
    } else if (mode == "garbage") {
        std::cout << "not-a-number\n";
        return 0;
    } else {
        return 64;
    }
    std::printf("%.17g\n", metric);
    return 0;
}
