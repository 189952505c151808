#include "comflp/evaluation.hpp"

#include "comflp/error.hpp"
#include "comflp/log.hpp"
#include "comflp/proposal_file.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <mutex>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace comflp {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kMaxCapturedOutput = 1 << 16;

void ignore_sigpipe_once() {
    static std::once_flag flag;
    std::call_once(flag, [] { std::signal(SIGPIPE, SIG_IGN); });
}

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    ~Fd() { reset(); }

    int get() const { return fd_; }
    void reset() {
        if (fd_ >= 0)
            ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

struct Pipe {
    Fd read;
    Fd write;
};

Pipe make_pipe() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0)
        throw EvaluatorError(std::string("pipe failed: ") + std::strerror(errno));
    return {Fd(fds[0]), Fd(fds[1])};
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::optional<double> parse_metric(std::string_view out) {
    const auto first = out.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos)
        return std::nullopt;
    const auto last = out.find_last_not_of(" \t\r\n");
    std::string_view token = out.substr(first, last - first + 1);
    if (!token.empty() && token.front() == '+')
        token.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v))
        return std::nullopt;
    return v;
}

// Ranking order: better metric first, then higher quality, then layer list.
bool ranks_before(const RankedProposal& a, const RankedProposal& b, MetricDirection dir) {
    if (a.metric != b.metric)
        return dir == MetricDirection::lower_is_better ? a.metric < b.metric : a.metric > b.metric;
    if (a.quality != b.quality) {
        if (a.quality && b.quality)
            return *a.quality > *b.quality;
        return a.quality.has_value();
    }
    return a.proposal < b.proposal;
}

std::vector<EvaluationOutcome> evaluate_all(const std::vector<PruningProposal>& proposals,
                                            const EvaluatorSpec& ev) {
    std::vector<std::optional<EvaluationOutcome>> slots(proposals.size());
    detail::parallel_for(proposals.size(), static_cast<unsigned>(ev.max_parallel),
                         [&](std::size_t i) { slots[i] = run_evaluator(proposals[i], ev); });
    std::vector<EvaluationOutcome> out;
    out.reserve(slots.size());
    for (auto& s : slots) {
        if (!s->ok())
            log::warn("evaluation of {", s->proposal.to_string(), "} failed (", to_string(s->status), "): ",
                      s->detail, "; excluded");
        else
            log::debug("evaluated {", s->proposal.to_string(), "} -> ", *s->metric, " in ", s->seconds, " s");
        out.push_back(std::move(*s));
    }
    return out;
}

}  // namespace

std::string_view to_string(MetricDirection d) {
    return d == MetricDirection::lower_is_better ? "lower" : "higher";
}

MetricDirection parse_direction(std::string_view name) {
    if (name == "lower" || name == "lower_is_better")
        return MetricDirection::lower_is_better;
    if (name == "higher" || name == "higher_is_better")
        return MetricDirection::higher_is_better;
    throw ValidationError("unknown metric direction '" + std::string(name) + "' (expected lower or higher)");
}

std::string_view to_string(EvalStatus s) {
    switch (s) {
    case EvalStatus::ok:
        return "ok";
    case EvalStatus::nonzero_exit:
        return "nonzero_exit";
    case EvalStatus::timeout:
        return "timeout";
    case EvalStatus::unparseable_output:
        return "unparseable_output";
    case EvalStatus::spawn_failed:
        return "spawn_failed";
    }
    return "unknown";
}

EvaluatorSpec EvaluatorSpec::shell(const std::string& cmd) {
    EvaluatorSpec ev;
    ev.command = {"/bin/sh", "-c", cmd};
    return ev;
}

void validate(const EvaluatorSpec& ev) {
    if (ev.command.empty() || ev.command.front().empty())
        throw ValidationError("evaluator command is empty");
    if (!(ev.timeout_seconds > 0.0))
        throw ValidationError("evaluator timeout must be positive");
    if (ev.max_parallel < 1)
        throw ValidationError("evaluator max_parallel must be >= 1");
}

std::string evaluator_record(const PruningProposal& p) {
    return "L=" + std::to_string(p.num_layers()) + "\nprune=" + p.to_string() + "\n";
}

std::string evaluator_record_json(const PruningProposal& p) {
    std::string out = "{\"L\":" + std::to_string(p.num_layers()) + ",\"prune\":[";
    out += p.to_string();
    out += "]}";
    return out;
}

EvaluationOutcome run_evaluator(const PruningProposal& p, const EvaluatorSpec& ev) {
    validate(ev);
    ignore_sigpipe_once();

    EvaluationOutcome outcome{p, EvalStatus::spawn_failed, std::nullopt, -1, 0.0, {}};
    const auto start = Clock::now();
    const auto deadline = start + std::chrono::duration_cast<Clock::duration>(
                                      std::chrono::duration<double>(ev.timeout_seconds));

    Pipe in = make_pipe();
    Pipe out = make_pipe();

    std::vector<std::string> env_storage;
    for (char** e = environ; e && *e; ++e)
        if (std::strncmp(*e, "COMFLP_PROPOSAL_JSON=", 21) != 0)
            env_storage.emplace_back(*e);
    env_storage.push_back("COMFLP_PROPOSAL_JSON=" + evaluator_record_json(p));
    std::vector<char*> envp;
    for (auto& s : env_storage)
        envp.push_back(s.data());
    envp.push_back(nullptr);

    std::vector<std::string> args = ev.command;
    std::vector<char*> argv;
    for (auto& a : args)
        argv.push_back(a.data());
    argv.push_back(nullptr);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in.read.get(), STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out.write.get(), STDOUT_FILENO);

    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    sigset_t defaults;
    sigemptyset(&defaults);
    sigaddset(&defaults, SIGPIPE);
    posix_spawnattr_setsigdefault(&attr, &defaults);
    // Own process group so a timeout can kill the evaluator's children too.
    posix_spawnattr_setpgroup(&attr, 0);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP | POSIX_SPAWN_SETSIGDEF);

    pid_t pid = -1;
    const int rc = posix_spawnp(&pid, argv[0], &actions, &attr, argv.data(), envp.data());
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
    in.read.reset();
    out.write.reset();
    if (rc != 0) {
        outcome.detail = "cannot start '" + ev.command.front() + "': " + std::strerror(rc);
        outcome.seconds = seconds_since(start);
        return outcome;
    }

    const std::string record = evaluator_record(p);
    std::size_t written = 0;
    while (written < record.size()) {
        const ssize_t n = ::write(in.write.get(), record.data() + written, record.size() - written);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            break;  // EPIPE: the evaluator ignores stdin
        }
        written += static_cast<std::size_t>(n);
    }
    in.write.reset();

    std::string captured;
    bool timed_out = false;
    char buf[4096];
    for (;;) {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
        if (remaining.count() <= 0) {
            timed_out = true;
            break;
        }
        pollfd pfd{out.read.get(), POLLIN, 0};
        const int pr = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count() + 1, 1000)));
        if (pr < 0 && errno == EINTR)
            continue;
        if (pr <= 0)
            continue;
        const ssize_t n = ::read(out.read.get(), buf, sizeof buf);
        if (n < 0 && errno == EINTR)
            continue;
        if (n <= 0)
            break;
        if (captured.size() < kMaxCapturedOutput)
            captured.append(buf, static_cast<std::size_t>(n));
    }
    out.read.reset();

    int status = 0;
    if (!timed_out) {
        for (;;) {
            const pid_t w = ::waitpid(pid, &status, WNOHANG);
            if (w == pid)
                break;
            if (w < 0 && errno != EINTR) {
                status = -1;
                break;
            }
            if (Clock::now() >= deadline) {
                timed_out = true;
                break;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
    }
    if (timed_out) {
        ::kill(-pid, SIGKILL);
        ::kill(pid, SIGKILL);
        while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
        }
        outcome.status = EvalStatus::timeout;
        outcome.detail = "no result within " + format_real(ev.timeout_seconds) + " s";
        outcome.seconds = seconds_since(start);
        return outcome;
    }
    // The evaluator may have left background children in its group.
    ::kill(-pid, SIGKILL);

    outcome.seconds = seconds_since(start);
    if (WIFEXITED(status))
        outcome.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        outcome.exit_code = 128 + WTERMSIG(status);
    if (outcome.exit_code != 0) {
        outcome.status = EvalStatus::nonzero_exit;
        outcome.detail = "evaluator exited with status " + std::to_string(outcome.exit_code);
        return outcome;
    }
    outcome.metric = parse_metric(captured);
    if (!outcome.metric) {
        outcome.status = EvalStatus::unparseable_output;
        std::string shown = captured.substr(0, 80);
        outcome.detail = "expected one decimal number on stdout, got '" + shown + "'";
        return outcome;
    }
    outcome.status = EvalStatus::ok;
    return outcome;
}

double evaluate_proposal(const PruningProposal& p, const EvaluatorSpec& ev) {
    const EvaluationOutcome o = run_evaluator(p, ev);
    if (!o.ok())
        throw EvaluatorError("evaluation of {" + p.to_string() + "} failed (" + std::string(to_string(o.status)) +
                             "): " + o.detail);
    return *o.metric;
}

FineSearchResult fine_search(const std::vector<FineCandidate>& candidates, const EvaluatorSpec& ev) {
    if (candidates.empty())
        throw ValidationError("fine search needs at least one candidate");
    validate(ev);

    std::vector<PruningProposal> proposals;
    proposals.reserve(candidates.size());
    for (const auto& c : candidates)
        proposals.push_back(c.proposal);

    std::vector<EvaluationOutcome> log = evaluate_all(proposals, ev);
    std::vector<RankedProposal> ranked;
    for (std::size_t i = 0; i < log.size(); ++i)
        if (log[i].ok())
            ranked.push_back({candidates[i].proposal, *log[i].metric, candidates[i].quality});
    if (ranked.empty())
        throw EvaluatorError("all " + std::to_string(candidates.size()) + " evaluations failed");

    std::sort(ranked.begin(), ranked.end(), [&](const RankedProposal& a, const RankedProposal& b) {
        return ranks_before(a, b, ev.direction);
    });
    RankedProposal best = ranked.front();
    return {std::move(ranked), std::move(best), std::move(log)};
}

FineSearchResult fine_search(const std::vector<ScoredProposal>& candidates, const EvaluatorSpec& ev) {
    std::vector<FineCandidate> c;
    c.reserve(candidates.size());
    for (const auto& s : candidates)
        c.push_back({s.proposal, s.quality});
    return fine_search(c, ev);
}

GreedyResult greedy_search(int num_layers, int num_prune, const EvaluatorSpec& ev) {
    if (num_prune < 1 || num_prune >= num_layers)
        throw ValidationError("greedy search needs 1 <= N < L, got N=" + std::to_string(num_prune) +
                              " L=" + std::to_string(num_layers));
    validate(ev);

    GreedyResult result;
    PruningProposal current(num_layers, {});
    for (int step = 1; step <= num_prune; ++step) {
        std::vector<PruningProposal> extensions;
        for (int layer = 1; layer <= num_layers; ++layer)
            if (!current.contains(layer))
                extensions.push_back(current.with_layer(layer));

        std::vector<EvaluationOutcome> log = evaluate_all(extensions, ev);
        std::optional<RankedProposal> best;
        for (const auto& o : log) {
            if (!o.ok())
                continue;
            RankedProposal r{o.proposal, *o.metric, std::nullopt};
            if (!best || ranks_before(r, *best, ev.direction))
                best = std::move(r);
        }
        result.evaluator_log.insert(result.evaluator_log.end(), std::make_move_iterator(log.begin()),
                                    std::make_move_iterator(log.end()));
        if (!best)
            throw EvaluatorError("greedy step " + std::to_string(step) + ": all " +
                                 std::to_string(extensions.size()) + " evaluations failed");
        log::info("greedy step ", step, ": {", best->proposal.to_string(), "} metric ", best->metric);
        current = best->proposal;
        result.steps.push_back({step, best->proposal, best->metric});
    }
    return result;
}

std::uint64_t greedy_evaluation_count(int num_layers, int num_prune) {
    std::uint64_t total = 0;
    for (int n = 1; n <= num_prune; ++n)
        total += static_cast<std::uint64_t>(num_layers - n + 1);
    return total;
}

}  // namespace comflp
