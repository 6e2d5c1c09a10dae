// Times the serial reference runners against the OpenMP ones.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include <omp.h>

#include "clustsens/sensitivity.hpp"
#include "clustsens/simulation.hpp"

namespace {

template <class F>
double seconds(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace clustsens;
  const int replications = argc > 1 ? std::atoi(argv[1]) : 100;
  const int workers = argc > 2 ? std::atoi(argv[2]) : omp_get_max_threads();

  std::printf("%-22s %10s %10s %8s %s\n", "kernel", "serial_s", "omp_s", "speedup", "identical");
  for (auto kind : {ScenarioKind::single_continuous, ScenarioKind::single_binary, ScenarioKind::meta}) {
    auto config = default_scenario(kind);
    config.replications = kind == ScenarioKind::meta ? std::max(1, replications / 10) : replications;
    SimMetrics serial, parallel;
    const double ts = seconds([&] { serial = run_scenario_serial(config); });
    const double tp = seconds([&] { parallel = run_scenario(config, workers); });
    const bool same = serial.by_x[0].bias == parallel.by_x[0].bias && serial.by_x[1].bias == parallel.by_x[1].bias &&
                      serial.replications_used == parallel.replications_used;
    std::printf("%-22s %10.3f %10.3f %8.2f %s\n", to_string(kind).c_str(), ts, tp, ts / tp, same ? "yes" : "NO");
  }

  std::vector<ContourNode> a, b;
  const double ts = seconds([&] { a = contour_grid_serial({0, 1}, {0, 5}, 1500, 0.75); });
  const double tp = seconds([&] { b = contour_grid({0, 1}, {0, 5}, 1500, 0.75); });
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].bias_factor == b[i].bias_factor;
  std::printf("%-22s %10.3f %10.3f %8.2f %s\n", "contour_grid", ts, tp, ts / tp, same ? "yes" : "NO");
  std::printf("threads: %d\n", workers);
  return 0;
}
