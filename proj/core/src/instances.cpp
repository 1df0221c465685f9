#include "basup/instances.hpp"

#include <algorithm>
#include <vector>

#include "basup/error.hpp"

namespace basup {

std::string to_string(InstanceProvider p) {
  switch (p) {
    case InstanceProvider::oracle: return "oracle";
    case InstanceProvider::classical_regions: return "classical";
    case InstanceProvider::external_promptable: return "external";
  }
  return "unknown";
}

InstanceProvider parse_instance_provider(const std::string& name) {
  if (name == "oracle") return InstanceProvider::oracle;
  if (name == "classical" || name == "classical_regions") return InstanceProvider::classical_regions;
  if (name == "external" || name == "external_promptable") return InstanceProvider::external_promptable;
  throw ConfigError("unknown instance provider '" + name + "'");
}

int InstanceMaskSet::count() const {
  int m = 0;
  for (auto v : labels.data()) m = std::max(m, static_cast<int>(v));
  return m;
}

LabelMap compact_labels(const LabelMap& labels) {
  std::vector<std::uint16_t> remap(65536, 0);
  std::vector<bool> seen(65536, false);
  for (auto v : labels.data()) seen[v] = true;
  std::uint16_t next = 1;
  for (std::size_t v = 1; v < seen.size(); ++v) {
    if (seen[v]) remap[v] = next++;
  }
  LabelMap out = labels;
  for (auto& v : out.storage()) v = remap[v];
  return out;
}

}  // namespace basup
