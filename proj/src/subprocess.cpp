#include "errlab/subprocess.hpp"

#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "errlab/error.hpp"

extern char** environ;

namespace errlab {

namespace {

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Fd& operator=(Fd&& o) noexcept {
        reset();
        fd_ = std::exchange(o.fd_, -1);
        return *this;
    }
    ~Fd() { reset(); }

    int get() const { return fd_; }
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) throw ConfigError(std::string("pipe: ") + std::strerror(errno));
    return {Fd(fds[0]), Fd(fds[1])};
}

constexpr const char* kTruncationMarker = "\n[errlab: stderr truncated at %zu bytes]\n";

}  // namespace

std::string signal_name(int sig) {
    if (const char* abbrev = ::sigabbrev_np(sig)) return std::string("SIG") + abbrev;
    return "signal " + std::to_string(sig);
}

std::vector<std::string> split_command_line(const std::string& command) {
    std::vector<std::string> words;
    std::string cur;
    bool in_word = false;
    char quote = 0;
    for (std::size_t i = 0; i < command.size(); ++i) {
        char c = command[i];
        if (quote) {
            if (c == quote) {
                quote = 0;
            } else if (c == '\\' && quote == '"' && i + 1 < command.size()) {
                cur += command[++i];
            } else {
                cur += c;
            }
        } else if (c == '\'' || c == '"') {
            quote = c;
            in_word = true;
        } else if (c == '\\' && i + 1 < command.size()) {
            cur += command[++i];
            in_word = true;
        } else if (c == ' ' || c == '\t' || c == '\n') {
            if (in_word) words.push_back(std::move(cur));
            cur.clear();
            in_word = false;
        } else {
            cur += c;
            in_word = true;
        }
    }
    if (quote) throw ConfigError("unterminated quote in command template: " + command);
    if (in_word) words.push_back(std::move(cur));
    return words;
}

ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& options) {
    if (argv.empty()) throw ConfigError("empty command");

    auto [in_r, in_w] = make_pipe();
    auto [out_r, out_w] = make_pipe();
    auto [err_r, err_w] = make_pipe();
    auto [exec_r, exec_w] = make_pipe();

    std::vector<std::string> env_store;
    for (char** e = environ; *e; ++e) env_store.emplace_back(*e);
    for (const auto& [k, v] : options.extra_env) env_store.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_store) envp.push_back(s.data());
    envp.push_back(nullptr);

    std::vector<char*> cargv;
    std::vector<std::string> argv_copy = argv;
    for (auto& a : argv_copy) cargv.push_back(a.data());
    cargv.push_back(nullptr);

    pid_t pid = ::fork();
    if (pid < 0) throw ConfigError(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
        ::dup2(in_r.get(), STDIN_FILENO);
        ::dup2(out_w.get(), STDOUT_FILENO);
        ::dup2(err_w.get(), STDERR_FILENO);
        ::execvpe(cargv[0], cargv.data(), envp.data());
        int err = errno;
        (void)!::write(exec_w.get(), &err, sizeof err);
        ::_exit(127);
    }

    in_r.reset();
    out_w.reset();
    err_w.reset();
    exec_w.reset();

    int exec_errno = 0;
    ssize_t n = ::read(exec_r.get(), &exec_errno, sizeof exec_errno);
    if (n == static_cast<ssize_t>(sizeof exec_errno)) {
        int status = 0;
        ::waitpid(pid, &status, 0);
        throw ConfigError("cannot execute '" + argv[0] + "': " + std::strerror(exec_errno));
    }

    ProcessResult result;
    const std::string stdin_data = options.stdin_data.value_or("");
    std::size_t stdin_off = 0;
    if (stdin_data.empty()) in_w.reset();
    else ::fcntl(in_w.get(), F_SETFL, O_NONBLOCK);

    const auto deadline = std::chrono::steady_clock::now() + options.timeout;
    char buf[8192];
    while (out_r.get() >= 0 || err_r.get() >= 0) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            result.timed_out = true;
            break;
        }
        pollfd fds[3];
        int nfds = 0;
        int out_i = -1, err_i = -1, in_i = -1;
        if (out_r.get() >= 0) { out_i = nfds; fds[nfds++] = {out_r.get(), POLLIN, 0}; }
        if (err_r.get() >= 0) { err_i = nfds; fds[nfds++] = {err_r.get(), POLLIN, 0}; }
        if (in_w.get() >= 0) { in_i = nfds; fds[nfds++] = {in_w.get(), POLLOUT, 0}; }
        int rc = ::poll(fds, nfds, static_cast<int>(std::min<long long>(left.count(), 1000)));
        if (rc < 0) {
            if (errno == EINTR) continue;
            break;
        }
        auto drain = [&](int i, Fd& fd, std::string& sink, bool* truncated) {
            if (i < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) return;
            ssize_t got = ::read(fd.get(), buf, sizeof buf);
            if (got <= 0) {
                fd.reset();
                return;
            }
            std::size_t room = options.max_capture_bytes > sink.size() ? options.max_capture_bytes - sink.size() : 0;
            sink.append(buf, std::min<std::size_t>(room, static_cast<std::size_t>(got)));
            if (static_cast<std::size_t>(got) > room && truncated) *truncated = true;
        };
        drain(out_i, out_r, result.stdout_data, nullptr);
        drain(err_i, err_r, result.stderr_data, &result.stderr_truncated);
        if (in_i >= 0 && (fds[in_i].revents & (POLLOUT | POLLERR | POLLHUP))) {
            ssize_t wrote = ::write(in_w.get(), stdin_data.data() + stdin_off, stdin_data.size() - stdin_off);
            if (wrote > 0) stdin_off += static_cast<std::size_t>(wrote);
            if (wrote < 0 && errno != EAGAIN) in_w.reset();
            if (stdin_off >= stdin_data.size()) in_w.reset();
        }
    }

    in_w.reset();
    int status = 0;
    // the child may close its streams and keep running
    while (!result.timed_out) {
        pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0 && errno != EINTR) break;
        if (std::chrono::steady_clock::now() >= deadline) result.timed_out = true;
        else ::usleep(2000);
    }
    if (result.timed_out) {
        ::kill(pid, SIGKILL);
        ::waitpid(pid, &status, 0);
    }
    if (WIFSIGNALED(status)) {
        result.signaled = true;
        result.signal = WTERMSIG(status);
        result.exit_status = 128 + result.signal;
    } else if (WIFEXITED(status)) {
        result.exit_status = WEXITSTATUS(status);
    }
    if (result.stderr_truncated) {
        char marker[96];
        std::snprintf(marker, sizeof marker, kTruncationMarker, options.max_capture_bytes);
        result.stderr_data += marker;
    }
    return result;
}

}  // namespace errlab
