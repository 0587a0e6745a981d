// Victim program: fixed work on one resource, prints its duration in ns.
//   victim --resource <cache|bus|memory> --config <json>

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "hostile/kernels.hpp"

int main(int argc, char** argv) {
  CLI::App app{"victim program"};
  std::string resource, config_text;
  app.add_option("--resource", resource, "cache|bus|memory")->required();
  app.add_option("--config", config_text, "victim config as JSON")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    auto config = nlohmann::json::parse(config_text).get<hostile::VictimConfig>();
    config.resource = hostile::resource_from_string(resource);
    std::printf("%lld\n", static_cast<long long>(hostile::run_victim(config)));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "victim: %s\n", e.what());
    return 1;
  }
  return 0;
}
