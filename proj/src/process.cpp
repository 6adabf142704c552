#include "nvec/process.hpp"

#include "nvec/common.hpp"

#include <chrono>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

namespace nvec {
namespace {

constexpr size_t kCaptureLimit = 64 * 1024;

void drain(int fd, std::string &buf, bool &open) {
  char tmp[4096];
  ssize_t n = ::read(fd, tmp, sizeof tmp);
  if (n <= 0) {
    open = false;
    return;
  }
  if (buf.size() < kCaptureLimit)
    buf.append(tmp, std::min<size_t>(static_cast<size_t>(n), kCaptureLimit - buf.size()));
}

} // namespace

std::optional<std::string> find_executable(const std::string &name) {
  if (name.empty())
    return std::nullopt;
  auto runnable = [](const std::string &p) {
    struct stat st {};
    return ::stat(p.c_str(), &st) == 0 && S_ISREG(st.st_mode) && ::access(p.c_str(), X_OK) == 0;
  };
  if (name.find('/') != std::string::npos)
    return runnable(name) ? std::optional<std::string>(name) : std::nullopt;
  const char *path = std::getenv("PATH");
  std::string dirs = path ? path : "/usr/local/bin:/usr/bin:/bin";
  size_t start = 0;
  while (start <= dirs.size()) {
    size_t end = dirs.find(':', start);
    if (end == std::string::npos)
      end = dirs.size();
    std::string dir = dirs.substr(start, end - start);
    std::string cand = (dir.empty() ? "." : dir) + "/" + name;
    if (runnable(cand))
      return cand;
    start = end + 1;
  }
  return std::nullopt;
}

ProcessResult run_process(const std::vector<std::string> &argv, double timeout_seconds) {
  if (argv.empty())
    throw Error(ErrorCode::InvalidArgument, "run_process: empty argv");
  int out_pipe[2], err_pipe[2];
  if (::pipe(out_pipe) != 0 || ::pipe(err_pipe) != 0)
    throw Error(ErrorCode::Io, std::string("pipe: ") + std::strerror(errno));

  std::vector<char *> args;
  for (const auto &a : argv)
    args.push_back(const_cast<char *>(a.c_str()));
  args.push_back(nullptr);

  auto t0 = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0)
    throw Error(ErrorCode::Io, std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(err_pipe[1], STDERR_FILENO);
    ::close(out_pipe[0]);
    ::close(err_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    ::execvp(args[0], args.data());
    std::fprintf(stderr, "exec %s: %s\n", args[0], std::strerror(errno));
    ::_exit(127);
  }
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);

  ProcessResult res;
  bool out_open = true, err_open = true;
  auto deadline = t0 + std::chrono::duration<double>(timeout_seconds);
  int status = 0;
  bool exited = false;
  while (!exited) {
    pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
    ::poll(fds, 2, 5);
    if (out_open && (fds[0].revents & (POLLIN | POLLHUP)))
      drain(out_pipe[0], res.out, out_open);
    if (err_open && (fds[1].revents & (POLLIN | POLLHUP)))
      drain(err_pipe[0], res.err, err_open);
    pid_t w = ::waitpid(pid, &status, WNOHANG);
    if (w == pid) {
      exited = true;
      break;
    }
    if (std::chrono::steady_clock::now() > deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      res.timed_out = true;
      exited = true;
    }
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  while (out_open)
    drain(out_pipe[0], res.out, out_open);
  while (err_open)
    drain(err_pipe[0], res.err, err_open);
  ::close(out_pipe[0]);
  ::close(err_pipe[0]);
  if (!res.timed_out)
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return res;
}

} // namespace nvec
