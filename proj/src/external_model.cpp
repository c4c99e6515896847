#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "calib/models.hpp"
#include "calib/text.hpp"

extern char** environ;

namespace calib {

namespace {

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

void make_pipe(Fd& read_end, Fd& write_end) {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw ModelError(std::string("external model: pipe failed: ") + std::strerror(errno));
  read_end.fd = fds[0];
  write_end.fd = fds[1];
}

}  // namespace

ExternalModel::ExternalModel(std::vector<std::string> argv, std::vector<std::string> param_names,
                             std::size_t output_dims, std::chrono::milliseconds timeout)
    : argv_(std::move(argv)), names_(std::move(param_names)), dims_(output_dims), timeout_(timeout) {
  if (argv_.empty()) throw ConfigError("external model needs a command");
  if (dims_ == 0) throw ConfigError("external model needs output_dims >= 1");
  if (timeout_.count() <= 0) throw ConfigError("external model timeout must be positive");
}

SeriesPanel ExternalModel::simulate(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                                    std::uint64_t seed) const {
  check_arity(params);
  std::string request = "seed=" + std::to_string(seed) + " n_steps=" + std::to_string(n_steps) +
                        " burn_in=" + std::to_string(burn_in);
  for (std::size_t i = 0; i < names_.size(); ++i) request += " " + names_[i] + "=" + format_real(params[i]);
  request += "\n";

  Fd in_r, in_w, out_r, out_w;
  make_pipe(in_r, in_w);
  make_pipe(out_r, out_w);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_r.fd, STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_w.fd, STDOUT_FILENO);
  std::vector<char*> args;
  for (const auto& a : argv_) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw ModelError("external model: cannot start '" + argv_[0] + "': " + std::strerror(rc));
  in_r.reset();
  out_w.reset();

  // the request is one short line, well below the pipe buffer
  const auto* p = request.data();
  std::size_t left = request.size();
  while (left > 0) {
    const auto n = ::write(in_w.fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;  // child may have exited without reading; its status tells the story
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  in_w.reset();

  std::string output;
  char buf[65536];
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  bool timed_out = false;
  while (true) {
    const auto remaining =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
    if (remaining <= 0) {
      timed_out = true;
      break;
    }
    pollfd pfd{out_r.fd, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining, 1000)));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) continue;
    const auto n = ::read(out_r.fd, buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    output.append(buf, static_cast<std::size_t>(n));
  }
  if (timed_out) ::kill(pid, SIGKILL);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (timed_out)
    throw ModelError("external model: no result within " + std::to_string(timeout_.count()) + " ms");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw ModelError("external model: child exited with status " +
                     std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status)));
  SeriesPanel panel;
  try {
    panel = parse_panel_csv(output);
  } catch (const std::exception& e) {
    throw ModelError(std::string("external model: unreadable output: ") + e.what());
  }
  if (panel.dims() != dims_ || panel.steps() != n_steps)
    throw ModelError("external model: expected " + std::to_string(dims_) + " x " + std::to_string(n_steps) +
                     " panel, got " + std::to_string(panel.dims()) + " x " + std::to_string(panel.steps()));
  return panel;
}

}  // namespace calib
