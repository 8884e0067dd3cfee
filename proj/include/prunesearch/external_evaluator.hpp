#pragma once

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "prunesearch/errors.hpp"
#include "prunesearch/evaluator.hpp"
#include "prunesearch/log.hpp"

namespace prunesearch {

/// Drives a user-supplied evaluator process over newline-delimited JSON on
/// its standard input/output (UTF-8).
///
///   Request:  {"id": N, "type": "evaluate", "proposal": {layer: {scheme, rate}}}
///   Response: {"id": N, "accuracy": V, "latency_ms": T}
///             or {"id": N, "error": "message"}
///
/// The engine opens with {"id": 0, "type": "hello", "protocol_version": 1}
/// and expects {"id": 0, "protocol_version": 1} back. Requests are
/// serialized over a single child; responses are matched by id. A timeout or
/// malformed line kills the child and raises EvaluationError, which the
/// search layer turns into a resumable abort.
class ExternalEvaluator final : public Evaluator {
public:
  explicit ExternalEvaluator(std::vector<std::string> command, double timeout_s = 3600.0)
      : command_(std::move(command)), timeout_s_(timeout_s) {
    if (command_.empty()) throw ConfigError("external evaluator command is empty");
    // Broken child pipes must surface as EPIPE, not SIGPIPE.
    std::signal(SIGPIPE, SIG_IGN);
    spawn();
    handshake();
  }

  ~ExternalEvaluator() override { shutdown(); }

  ExternalEvaluator(const ExternalEvaluator&) = delete;
  ExternalEvaluator& operator=(const ExternalEvaluator&) = delete;

  std::pair<double, double> evaluate(const PruningProposal& proposal) override {
    const std::uint64_t id = next_id_++;
    json req{{"id", id}, {"type", "evaluate"}, {"proposal", proposal.to_json()}};
    json resp = roundtrip(req, id);
    if (resp.contains("error")) {
      throw EvaluationError("external evaluator error: " + resp.at("error").get<std::string>(), 0);
    }
    if (!resp.contains("accuracy") || !resp.contains("latency_ms") ||
        !resp.at("accuracy").is_number() || !resp.at("latency_ms").is_number()) {
      fail("response missing numeric accuracy/latency_ms: " + resp.dump());
    }
    return {resp.at("accuracy").get<double>(), resp.at("latency_ms").get<double>()};
  }

  std::string kind() const override { return "external"; }

private:
  void spawn() {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) {
      throw EvaluationError("pipe() failed: " + std::string(std::strerror(errno)), 0);
    }
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw EvaluationError("pipe() failed: " + std::string(std::strerror(errno)), 0);
    }
    pid_ = fork();
    if (pid_ < 0) {
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      throw EvaluationError("fork() failed: " + std::string(std::strerror(errno)), 0);
    }
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      std::vector<char*> argv;
      argv.reserve(command_.size() + 1);
      for (auto& s : command_) argv.push_back(s.data());
      argv.push_back(nullptr);
      execvp(argv[0], argv.data());
      std::perror("execvp");
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    stdin_fd_ = to_child[1];
    stdout_fd_ = from_child[0];
  }

  void handshake() {
    json hello{{"id", 0}, {"type", "hello"}, {"protocol_version", 1}};
    json resp = roundtrip(hello, 0);
    if (!resp.contains("protocol_version") || resp.at("protocol_version") != 1) {
      fail("handshake rejected: " + resp.dump());
    }
  }

  json roundtrip(const json& request, std::uint64_t expect_id) {
    write_line(request.dump());
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::milliseconds(static_cast<long>(timeout_s_ * 1000.0));
    std::string line = read_line(deadline);
    json resp = json::parse(line, nullptr, false);
    if (resp.is_discarded() || !resp.is_object() || !resp.contains("id")) {
      fail("malformed response line: " + line);
    }
    if (resp.at("id") != expect_id) {
      fail("response id mismatch: expected " + std::to_string(expect_id) + ", got " + resp.at("id").dump());
    }
    return resp;
  }

  void write_line(std::string payload) {
    if (pid_ < 0) throw EvaluationError("external evaluator process is not running", 0);
    payload += '\n';
    std::size_t off = 0;
    while (off < payload.size()) {
      ssize_t n = ::write(stdin_fd_, payload.data() + off, payload.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail("write to evaluator failed: " + std::string(std::strerror(errno)));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(std::chrono::steady_clock::time_point deadline) {
    for (;;) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (remaining.count() <= 0) fail("timeout waiting for evaluator response");
      pollfd pfd{stdout_fd_, POLLIN, 0};
      int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 60000)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        fail("poll on evaluator failed: " + std::string(std::strerror(errno)));
      }
      if (rc == 0) continue;  // re-check deadline
      char chunk[4096];
      ssize_t n = ::read(stdout_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail("read from evaluator failed: " + std::string(std::strerror(errno)));
      }
      if (n == 0) fail("evaluator closed its output stream");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  [[noreturn]] void fail(const std::string& why) {
    shutdown();
    throw EvaluationError(why, 0);
  }

  void shutdown() {
    if (stdin_fd_ >= 0) {
      close(stdin_fd_);
      stdin_fd_ = -1;
    }
    if (stdout_fd_ >= 0) {
      close(stdout_fd_);
      stdout_fd_ = -1;
    }
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 20; ++i) {
        if (waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          return;
        }
        usleep(50 * 1000);
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  std::vector<std::string> command_;
  double timeout_s_;
  pid_t pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  std::string buffer_;
  std::uint64_t next_id_ = 1;
};

}  // namespace prunesearch
