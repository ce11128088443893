// Loopback quality provider used by the protocol tests. Answers each request
// with rho = |x0| and kappa = 1 / (1 + exp(-|x1|)); can reorder responses and
// inject failures.

#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace {

using nlohmann::json;

struct Options {
  std::string kind = "certified_lower";
  std::size_t shuffle = 0;
  long malformed_at = -1;
  long crash_at = -1;
  bool hang = false;
  std::uint64_t seed = 1;
};

void emit(const std::string& line) {
  std::fwrite(line.data(), 1, line.size(), stdout);
  std::fputc('\n', stdout);
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Loopback oracle for protocol tests", "pag_echo_oracle"};
  app.add_option("--kind", opt.kind);
  app.add_option("--shuffle", opt.shuffle, "Answer in shuffled groups of this size");
  app.add_option("--malformed-at", opt.malformed_at, "Reply with garbage to request number N (0-based)");
  app.add_option("--crash-at", opt.crash_at, "Exit on receiving request number N (0-based)");
  app.add_flag("--hang", opt.hang, "Read requests but never answer");
  app.add_option("--seed", opt.seed);
  CLI11_PARSE(app, argc, argv);

  std::mt19937_64 rng(opt.seed);
  std::vector<std::string> pending;
  auto flush = [&] {
    std::shuffle(pending.begin(), pending.end(), rng);
    for (const auto& line : pending) emit(line);
    pending.clear();
    std::fflush(stdout);
  };

  std::string buffer;
  long received = 0;
  char chunk[65536];
  for (;;) {
    pollfd fd{STDIN_FILENO, POLLIN, 0};
    const int ready = ::poll(&fd, 1, pending.empty() ? -1 : 2);
    if (ready == 0) {
      flush();
      continue;
    }
    const ssize_t n = ::read(STDIN_FILENO, chunk, sizeof chunk);
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
      const std::string line = buffer.substr(start, nl - start);
      if (line.empty()) continue;
      const long number = received++;
      if (number == opt.crash_at) {
        std::fflush(stdout);
        ::_exit(3);
      }
      if (opt.hang) continue;
      if (number == opt.malformed_at) {
        pending.push_back("this is not a response");
        continue;
      }
      const json req = json::parse(line, nullptr, false);
      if (req.is_discarded() || !req.contains("id") || !req.contains("x")) {
        pending.push_back("{\"error\": \"bad request\"}");
        continue;
      }
      const auto x = req["x"].get<std::vector<double>>();
      const double rho = x.empty() ? 0.0 : std::abs(x[0]);
      const double kappa = 1.0 / (1.0 + std::exp(-(x.size() > 1 ? std::abs(x[1]) : 0.0)));
      pending.push_back(json{{"id", req["id"]}, {"rho", rho}, {"kappa", kappa}, {"kind", opt.kind}}.dump());
      if (pending.size() >= std::max<std::size_t>(opt.shuffle, 1)) flush();
    }
    buffer.erase(0, start);
  }
  flush();
  return 0;
}
