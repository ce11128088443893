#include "pag/external_oracle.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "detail/text.hpp"
#include "pag/errors.hpp"
#include "pag/parallel.hpp"

extern char** environ;

namespace pag {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

struct ParsedResponse {
  std::int64_t id = -1;
  QualityEvaluation eval;
};

// Returns an error description, or empty on success.
std::string parse_response(std::string_view line, ParsedResponse& out) {
  json doc = json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return "response is not a JSON object";
  if (!doc.contains("id") || !doc["id"].is_number_integer()) return "response lacks an integer id";
  out.id = doc["id"].get<std::int64_t>();
  for (const char* key : {"rho", "kappa"}) {
    if (!doc.contains(key) || !doc[key].is_number()) return std::string("response lacks numeric '") + key + "'";
  }
  if (!doc.contains("kind") || !doc["kind"].is_string()) return "response lacks a kind";
  const double rho = doc["rho"].get<double>();
  const double kappa = doc["kappa"].get<double>();
  if (!std::isfinite(rho) || rho < 0.0) return "rho must be finite and >= 0";
  if (!std::isfinite(kappa) || kappa <= 0.0 || kappa > 1.0) return "kappa must lie in (0, 1]";
  const std::string kind = doc["kind"].get<std::string>();
  if (kind == "exact") {
    out.eval.oracle.kind = OracleKind::Exact;
  } else if (kind == "certified_lower") {
    out.eval.oracle.kind = OracleKind::CertifiedLower;
  } else if (kind == "adversarial_upper") {
    out.eval.oracle.kind = OracleKind::AdversarialUpper;
  } else {
    return "unknown kind '" + kind + "'";
  }
  out.eval.oracle.radius = rho;
  out.eval.kappa = kappa;
  return {};
}

}  // namespace

ExternalOracleClient::ExternalOracleClient(ExternalOracleOptions options) : options_(std::move(options)) {
  if (options_.command.empty()) throw Error(ErrorCode::ParameterOutOfRange, "external oracle command is empty");
  if (options_.timeout_ms <= 0) throw Error(ErrorCode::ParameterOutOfRange, "timeout must be positive");
  if (options_.max_in_flight == 0) options_.max_in_flight = 1;
  ignore_sigpipe();

  int to_child[2];
  int from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw Error(ErrorCode::ToolCrash, "pipe failed");
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw Error(ErrorCode::ToolCrash, "pipe failed");
  }
  posix_spawn_file_actions_t actions;
  ::posix_spawn_file_actions_init(&actions);
  ::posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
  ::posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);
  std::string sh = "sh";
  std::string dash_c = "-c";
  char* argv[] = {sh.data(), dash_c.data(), options_.command.data(), nullptr};
  pid_t pid = -1;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  ::posix_spawn_file_actions_destroy(&actions);
  ::close(to_child[0]);
  ::close(from_child[1]);
  if (rc != 0) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    throw ExternalOracleError(ErrorCode::ToolCrash, -1, 0,
                              "cannot launch '" + options_.command + "': " + std::strerror(rc));
  }
  pid_ = pid;
  to_child_ = to_child[1];
  from_child_ = from_child[0];
  set_nonblocking(to_child_);
  set_nonblocking(from_child_);
}

ExternalOracleClient::~ExternalOracleClient() { shutdown(false); }

void ExternalOracleClient::shutdown(bool force) {
  if (to_child_ >= 0) {
    ::close(to_child_);
    to_child_ = -1;
  }
  if (pid_ > 0) {
    int status = 0;
    bool reaped = false;
    if (!force) {
      for (int i = 0; i < 200 && !reaped; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          reaped = true;
        } else {
          std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
      }
    }
    if (!reaped) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
    }
    pid_ = -1;
  }
  if (from_child_ >= 0) {
    ::close(from_child_);
    from_child_ = -1;
  }
}

void ExternalOracleClient::fail(ErrorCode code, std::int64_t request_id, const std::string& message) {
  broken_ = true;
  shutdown(true);
  throw ExternalOracleError(code, request_id, completed_, message);
}

QualityEvaluation ExternalOracleClient::query(std::span<const double> x) {
  return query_batch({std::vector<double>(x.begin(), x.end())}).front();
}

std::vector<QualityEvaluation> ExternalOracleClient::query_batch(const std::vector<std::vector<double>>& inputs) {
  if (broken_) fail(ErrorCode::ToolCrash, -1, "client is unusable after an earlier failure");
  const std::size_t n = inputs.size();
  std::vector<QualityEvaluation> results(n);

  struct Pending {
    std::size_t index;
    Clock::time_point deadline;
  };
  std::map<std::int64_t, Pending> in_flight;  // ordered by id, so by deadline too
  std::string out_buf;
  std::size_t out_pos = 0;
  std::size_t next = 0;
  std::size_t done = 0;
  const auto timeout = std::chrono::milliseconds(options_.timeout_ms);

  while (done < n) {
    while (next < n && in_flight.size() < options_.max_in_flight) {
      const std::int64_t id = next_id_++;
      out_buf += json{{"id", id}, {"x", inputs[next]}}.dump();
      out_buf += '\n';
      in_flight.emplace(id, Pending{next, Clock::now() + timeout});
      ++next;
    }

    const auto now = Clock::now();
    const auto& oldest = *in_flight.begin();
    if (now >= oldest.second.deadline) {
      fail(ErrorCode::Timeout, oldest.first,
           "no response within " + std::to_string(options_.timeout_ms) + " ms");
    }
    const auto wait = std::chrono::ceil<std::chrono::milliseconds>(oldest.second.deadline - now);

    pollfd fds[2] = {{from_child_, POLLIN, 0}, {to_child_, POLLOUT, 0}};
    const bool writing = out_pos < out_buf.size();
    const int rc = ::poll(fds, writing ? 2 : 1, static_cast<int>(wait.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::ToolCrash, oldest.first, std::string("poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) continue;  // deadline check at the top of the loop

    if (writing && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t w = ::write(to_child_, out_buf.data() + out_pos, out_buf.size() - out_pos);
      if (w > 0) {
        out_pos += static_cast<std::size_t>(w);
        if (out_pos == out_buf.size()) {
          out_buf.clear();
          out_pos = 0;
        }
      } else if (w < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
        fail(ErrorCode::ToolCrash, in_flight.begin()->first, "tool stopped reading requests");
      }
    }

    if (fds[0].revents & (POLLIN | POLLERR | POLLHUP)) {
      char chunk[65536];
      const ssize_t r = ::read(from_child_, chunk, sizeof chunk);
      if (r == 0) {
        fail(ErrorCode::ToolCrash, in_flight.begin()->first,
             "tool closed its output with " + std::to_string(in_flight.size()) + " requests pending");
      }
      if (r < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
        fail(ErrorCode::ToolCrash, in_flight.begin()->first, std::string("read failed: ") + std::strerror(errno));
      }
      read_buffer_.append(chunk, static_cast<std::size_t>(r));
      std::size_t start = 0;
      for (std::size_t nl; (nl = read_buffer_.find('\n', start)) != std::string::npos; start = nl + 1) {
        const std::string_view line = detail::trim(std::string_view(read_buffer_).substr(start, nl - start));
        if (line.empty()) continue;
        ParsedResponse parsed;
        const std::string problem = parse_response(line, parsed);
        if (!problem.empty()) {
          const std::int64_t blame = parsed.id >= 0 ? parsed.id : in_flight.begin()->first;
          fail(ErrorCode::ProtocolViolation, blame, problem + ": " + std::string(line.substr(0, 200)));
        }
        const auto it = in_flight.find(parsed.id);
        if (it == in_flight.end()) {
          fail(ErrorCode::ProtocolViolation, parsed.id, "response to an unknown or already answered request");
        }
        results[it->second.index] = parsed.eval;
        in_flight.erase(it);
        ++done;
        ++completed_;
      }
      read_buffer_.erase(0, start);
    }
  }
  return results;
}

QualityEvaluation external_oracle(const std::string& command, std::span<const double> x, int timeout_ms) {
  ExternalOracleClient client({command, timeout_ms, 1});
  return client.query(x);
}

// ---------------------------------------------------------------------------

ExternalQualityProvider::ExternalQualityProvider(ExternalOracleOptions options, std::size_t workers)
    : options_(std::move(options)) {
  const std::size_t count = resolve_workers(workers);
  for (std::size_t i = 0; i < count; ++i) clients_.push_back(std::make_unique<ExternalOracleClient>(options_));
}

ExternalQualityProvider::~ExternalQualityProvider() = default;

OracleKind ExternalQualityProvider::kind() const { return options_.declared_kind; }

std::string ExternalQualityProvider::model_hash() const { return "external:" + detail::fnv1a64_hex(options_.command); }

std::string ExternalQualityProvider::config_json() const {
  return json{{"oracle", "external"}, {"command", options_.command}, {"timeout_ms", options_.timeout_ms}}.dump();
}

std::vector<QualityEvaluation> ExternalQualityProvider::evaluate(const std::vector<std::vector<double>>& inputs) {
  const std::size_t n = inputs.size();
  const std::size_t pool = clients_.size();
  std::vector<QualityEvaluation> out(n);
  parallel_for(pool, pool, [&](std::size_t w) {
    const std::size_t begin = n * w / pool;
    const std::size_t end = n * (w + 1) / pool;
    if (begin == end) return;
    std::vector<std::vector<double>> chunk(inputs.begin() + static_cast<std::ptrdiff_t>(begin),
                                           inputs.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<QualityEvaluation> part;
    try {
      part = clients_[w]->query_batch(chunk);
    } catch (const ExternalOracleError& e) {
      throw IndexedError(e.code(), begin, e.what());
    }
    for (std::size_t k = 0; k < part.size(); ++k) {
      if (part[k].oracle.kind != options_.declared_kind) {
        throw IndexedError(ErrorCode::ProtocolViolation, begin + k,
                           "tool reported kind " + std::string(to_string(part[k].oracle.kind)) + ", expected " +
                               std::string(to_string(options_.declared_kind)));
      }
      out[begin + k] = part[k];
    }
  });
  return out;
}

}  // namespace pag
