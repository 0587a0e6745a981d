#pragma once

// Hardware backend: enemies and the program under test are separate OS
// processes pinned to their cores. Linux only (sched_setaffinity, flock).

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/file.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <climits>
#include <cstring>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "hostile/backend.hpp"
#include "hostile/errors.hpp"
#include "hostile/harness.hpp"
#include "hostile/platform.hpp"

namespace hostile {

namespace proc {

// Status bytes written by a forked child on its CLOEXEC status pipe. A
// successful exec closes the pipe without writing.
inline constexpr char kPinFailed = 'P';
inline constexpr char kExecFailed = 'E';
// Priority level obtained by the SUT child before exec.
inline constexpr char kPrioFifo = 'F';
inline constexpr char kPrioNice = 'N';
inline constexpr char kPrioDefault = 'D';
// Readiness token written by an enemy once its buffers are allocated.
inline constexpr char kReady = 'R';

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(o.release()) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.release();
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  int release() {
    int f = fd_;
    fd_ = -1;
    return f;
  }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Pipe {
  Fd read, write;
};

inline Pipe make_pipe(bool cloexec) {
  int fds[2];
  if (::pipe2(fds, cloexec ? O_CLOEXEC : 0) != 0)
    throw EnvironmentError(std::string("pipe: ") + std::strerror(errno));
  return {Fd(fds[0]), Fd(fds[1])};
}

// Reads until EOF or `timeout_ms` elapses; returns what was read.
inline std::string read_all(int fd, int timeout_ms) {
  std::string out;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) break;
    pollfd pfd{fd, POLLIN, 0};
    const int r = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) break;
    char buf[512];
    const ssize_t n = ::read(fd, buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

// Waits for a single byte; '\0' on EOF or timeout.
inline char read_token(int fd, int timeout_ms) {
  pollfd pfd{fd, POLLIN, 0};
  int r;
  do r = ::poll(&pfd, 1, timeout_ms);
  while (r < 0 && errno == EINTR);
  if (r <= 0) return '\0';
  char c = '\0';
  return ::read(fd, &c, 1) == 1 ? c : '\0';
}

inline void child_report(int fd, char code) {
  [[maybe_unused]] auto n = ::write(fd, &code, 1);
}

inline bool pin_self(int core) {
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(core, &set);
  return ::sched_setaffinity(0, sizeof set, &set) == 0;
}

inline char raise_priority() {
  sched_param sp{};
  sp.sched_priority = ::sched_get_priority_max(SCHED_FIFO);
  if (::sched_setscheduler(0, SCHED_FIFO, &sp) == 0) return kPrioFifo;
  if (::setpriority(PRIO_PROCESS, 0, -20) == 0) return kPrioNice;
  return kPrioDefault;
}

// argv storage that outlives fork.
class Argv {
 public:
  explicit Argv(std::vector<std::string> args) : args_(std::move(args)) {
    for (auto& a : args_) ptrs_.push_back(a.data());
    ptrs_.push_back(nullptr);
  }
  char* const* get() const { return const_cast<char* const*>(ptrs_.data()); }
  const std::string& program() const { return args_.front(); }

 private:
  std::vector<std::string> args_;
  std::vector<char*> ptrs_;
};

inline int wait_child(pid_t pid) {
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  return status;
}

// SIGTERM, then SIGKILL if the child has not exited after `grace_ms`.
inline void stop_child(pid_t pid, int grace_ms = 2000) {
  ::kill(pid, SIGTERM);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(grace_ms);
  int status = 0;
  while (std::chrono::steady_clock::now() < deadline) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid || (r < 0 && errno != EINTR)) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  ::kill(pid, SIGKILL);
  wait_child(pid);
}

// Exclusive flock held for the lifetime of the object.
class HostLock {
 public:
  explicit HostLock(const std::string& path) {
    fd_ = Fd(::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0666));
    if (fd_.get() < 0) throw EnvironmentError("cannot open lock file " + path + ": " + std::strerror(errno));
    while (::flock(fd_.get(), LOCK_EX) != 0) {
      if (errno != EINTR) throw EnvironmentError("cannot lock " + path + ": " + std::strerror(errno));
    }
  }
  ~HostLock() {
    if (fd_.get() >= 0) ::flock(fd_.get(), LOCK_UN);
  }
  HostLock(const HostLock&) = delete;
  HostLock& operator=(const HostLock&) = delete;

 private:
  Fd fd_;
};

inline std::string self_dir() {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  return ec ? std::string(".") : p.parent_path().string();
}

}  // namespace proc

class RealBackend : public Backend {
 public:
  explicit RealBackend(const PlatformDescriptor& platform) {
    const long online = ::sysconf(_SC_NPROCESSORS_ONLN);
    if (online < platform.core_count)
      throw EnvironmentError("host has " + std::to_string(online) + " online cores, platform declares " +
                             std::to_string(platform.core_count));
    enemy_binary_ = platform.enemy_binary.empty() ? proc::self_dir() + "/enemy" : platform.enemy_binary;
    victim_binary_ = platform.victim_binary.empty() ? proc::self_dir() + "/victim" : platform.victim_binary;
  }

  BackendKind kind() const override { return BackendKind::Real; }

  MeasurementSample execute(const Program& program, const Deployment& deployment,
                            const PlatformDescriptor& platform) override {
    proc::HostLock lock(platform.lock_file);
    std::vector<pid_t> enemies;
    auto reap = [&] {
      for (pid_t pid : enemies) proc::stop_child(pid);
      enemies.clear();
    };

    for (const auto& slot : deployment) {
      const pid_t pid = spawn_enemy(slot);
      if (pid < 0) {
        reap();
        MeasurementSample s;
        s.discard_reason = DiscardReason::EnemyStartFailure;
        return s;
      }
      enemies.push_back(pid);
    }
    if (!enemies.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(platform.startup_wait_ms));

    MeasurementSample s;
    try {
      s.duration_ns = run_program(program, platform);
    } catch (...) {
      reap();
      throw;
    }
    reap();
    s.end_temp_celsius = read_temperature(platform);
    return s;
  }

  void cool_down(const PlatformDescriptor& platform) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(platform.heat_cooldown_ms));
  }

 private:
  // Child pid once the enemy confirmed readiness; -1 on any start failure
  // (already reaped).
  pid_t spawn_enemy(const EnemySlot& slot) {
    auto status = proc::make_pipe(true);
    auto ready = proc::make_pipe(false);
    const std::string params = nlohmann::json(slot.params).dump();
    proc::Argv argv({enemy_binary_, "--resource", to_string(slot.params.resource()), "--params", params,
                     "--ready-fd", std::to_string(ready.write.get())});
    const pid_t pid = ::fork();
    if (pid < 0) throw EnvironmentError(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      ::close(status.read.get());
      ::close(ready.read.get());
      if (!proc::pin_self(slot.core)) {
        proc::child_report(status.write.get(), proc::kPinFailed);
        ::_exit(120);
      }
      ::execv(argv.program().c_str(), argv.get());
      proc::child_report(status.write.get(), proc::kExecFailed);
      ::_exit(127);
    }
    status.write.reset();
    ready.write.reset();
    const std::string st = proc::read_all(status.read.get(), 5000);
    if (!st.empty()) {
      spdlog::warn("enemy on core {} failed to start: {}", slot.core,
                   st[0] == proc::kPinFailed ? "cannot pin to core" : "cannot exec " + enemy_binary_);
      proc::wait_child(pid);
      return -1;
    }
    if (proc::read_token(ready.read.get(), 5000) != proc::kReady) {
      spdlog::warn("enemy on core {} exited or timed out before signalling readiness", slot.core);
      proc::stop_child(pid, 100);
      return -1;
    }
    return pid;
  }

  std::int64_t run_program(const Program& program, const PlatformDescriptor& platform) {
    std::vector<std::string> args;
    const bool is_victim = std::holds_alternative<VictimConfig>(program);
    if (is_victim) {
      const auto& v = std::get<VictimConfig>(program);
      args = {victim_binary_, "--resource", to_string(v.resource), "--config", nlohmann::json(v).dump()};
    } else {
      // "{bindir}" names the directory holding this executable, so configs
      // can refer to the bundled workloads.
      std::string cmd = std::get<SutSpec>(program).command;
      for (auto pos = cmd.find("{bindir}"); pos != std::string::npos; pos = cmd.find("{bindir}", pos))
        cmd.replace(pos, 8, proc::self_dir());
      args = {"/bin/sh", "-c", cmd};
    }
    proc::Argv argv(std::move(args));
    auto status = proc::make_pipe(true);
    auto out = proc::make_pipe(true);

    const auto t0 = std::chrono::steady_clock::now();
    const pid_t pid = ::fork();
    if (pid < 0) throw EnvironmentError(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      ::close(status.read.get());
      ::close(out.read.get());
      if (!proc::pin_self(platform.sut_core)) {
        proc::child_report(status.write.get(), proc::kPinFailed);
        ::_exit(120);
      }
      proc::child_report(status.write.get(), proc::raise_priority());
      if (is_victim) ::dup2(out.write.get(), STDOUT_FILENO);
      ::execv(argv.program().c_str(), argv.get());
      proc::child_report(status.write.get(), proc::kExecFailed);
      ::_exit(127);
    }
    status.write.reset();
    out.write.reset();
    const std::string st = proc::read_all(status.read.get(), 10000);
    const std::string output = is_victim ? proc::read_all(out.read.get(), INT_MAX) : std::string{};
    const int wstatus = proc::wait_child(pid);
    const auto t1 = std::chrono::steady_clock::now();

    if (st.find(proc::kPinFailed) != std::string::npos)
      throw EnvironmentError("cannot pin program to core " + std::to_string(platform.sut_core));
    if (st.find(proc::kExecFailed) != std::string::npos) throw EnvironmentError("cannot exec " + argv.program());
    if (!st.empty() && st[0] != proc::kPrioFifo && !warned_priority_) {
      spdlog::warn("real-time priority unavailable; running the program at {}",
                   st[0] == proc::kPrioNice ? "nice -20" : "default priority");
      warned_priority_ = true;
    }
    if (!WIFEXITED(wstatus) || WEXITSTATUS(wstatus) != 0)
      throw EnvironmentError(program_name(program) + " exited abnormally (status " + std::to_string(wstatus) + ")");
    if (!is_victim) return std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    try {
      return std::stoll(output);
    } catch (const std::logic_error&) {
      throw EnvironmentError("victim printed no duration: '" + output + "'");
    }
  }

  std::string enemy_binary_;
  std::string victim_binary_;
  bool warned_priority_ = false;
};

// Backend named by the platform descriptor.
inline std::unique_ptr<Backend> make_backend(const PlatformDescriptor& platform) {
  if (platform.backend == BackendKind::Real) return std::make_unique<RealBackend>(platform);
  return std::make_unique<SyntheticBackend>(load_synthetic_profile(platform.synthetic_profile));
}

}  // namespace hostile
