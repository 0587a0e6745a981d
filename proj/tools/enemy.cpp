// Enemy process: stresses one shared resource until SIGTERM.
//   enemy --resource <cache|bus|memory> --params <json> [--ready-fd N]

#include <atomic>
#include <csignal>
#include <cstdio>
#include <exception>
#include <string>

#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "hostile/kernels.hpp"
#include "hostile/params.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"enemy process"};
  std::string resource, params_text;
  int ready_fd = -1;
  app.add_option("--resource", resource, "cache|bus|memory")->required();
  app.add_option("--params", params_text, "enemy parameters as JSON")->required();
  app.add_option("--ready-fd", ready_fd, "descriptor to write 'R' to once buffers are ready");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto r = hostile::resource_from_string(resource);
    const auto params = hostile::enemy_params_from_json(nlohmann::json::parse(params_text), r);
    std::signal(SIGTERM, on_signal);
    std::signal(SIGINT, on_signal);
    hostile::run_enemy(params, g_stop, [&] {
      if (ready_fd >= 0) {
        const char c = 'R';
        (void)!::write(ready_fd, &c, 1);
        ::close(ready_fd);
      }
    });
  } catch (const std::exception& e) {
    std::fprintf(stderr, "enemy: %s\n", e.what());
    return 1;
  }
  return 0;
}
