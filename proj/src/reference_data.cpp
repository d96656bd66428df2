#include "phasedeploy/reference_data.hpp"

#include "phasedeploy/error.hpp"
#include "phasedeploy/hash.hpp"

namespace phasedeploy::reference {

const std::uint64_t kChecksum = 0xe2ff7196c4346911ULL;

const std::vector<MethodRow>& per_seed() {
  static const std::vector<MethodRow> rows{
      {"direct", {0.251, 0.026, 0.146, 0.000, 0.003, 0.602, 0.689, 0.002}},
      {"one_shot", {0.251, 0.026, 0.251, 0.000, 0.003, 0.602, 0.689, 0.002}},
      {"wu50", {0.033, 0.505, 0.602, 0.180, 0.655, 0.380, 0.210, 0.546}},
      {"wu100", {0.634, 0.206, 0.205, 0.271, 0.233, 0.306, 0.004, 0.002}},
      {"pbrs", {0.663, 0.013, 0.451, 0.341, 0.389, 0.650, 0.001, 0.000}},
  };
  return rows;
}

const std::vector<PublishedAggregate>& aggregates() {
  static const std::vector<PublishedAggregate> a{
      {"direct", 0.21498, 0.28109, 0.05100, 0.41471},
      {"one_shot", 0.22815, 0.27984, 0.06691, 0.42390},
      {"wu50", 0.38894, 0.22560, 0.23248, 0.53150},
      {"wu100", 0.23263, 0.19816, 0.11569, 0.37862},
      {"pbrs", 0.31341, 0.27950, 0.13502, 0.49579},
  };
  return a;
}

const std::vector<PublishedPaired>& paired_tests() {
  static const std::vector<PublishedPaired> p{
      {"wu50_vs_direct", "wu50", "direct", 0.174, 0.281, 0.408},
      {"wu50_vs_one_shot", "wu50", "one_shot", 0.161, 0.305, 0.384},
      {"wu50_vs_wu100", "wu50", "wu100", 0.156, 0.258, 0.426},
  };
  return p;
}

const MethodRow& row(const std::string& method) {
  for (const auto& r : per_seed()) {
    if (r.method == method) return r;
  }
  throw UsageError("no embedded row for method '" + method + "'");
}

std::uint64_t checksum() {
  Fnv1a h;
  for (int s : kSeeds) h.i64(s);
  for (const auto& r : per_seed()) {
    h.str(r.method);
    for (double v : r.values) h.f64(v);
  }
  for (const auto& a : aggregates()) h.str(a.method).f64(a.mean).f64(a.std).f64(a.ci_lo).f64(a.ci_hi);
  for (const auto& p : paired_tests()) {
    h.str(p.label).str(p.treatment).str(p.control).f64(p.mean_diff).f64(p.p).f64(p.d_z);
  }
  return h.value();
}

}  // namespace phasedeploy::reference
