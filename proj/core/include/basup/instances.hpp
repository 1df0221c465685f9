#pragma once

#include <cstdint>
#include <string>

#include "basup/image.hpp"

namespace basup {

enum class InstanceProvider { oracle, classical_regions, external_promptable };

std::string to_string(InstanceProvider p);
InstanceProvider parse_instance_provider(const std::string& name);

/// Class-agnostic instance segmentation of one image. Labels are contiguous
/// 1..count; 0 marks unassigned pixels.
struct InstanceMaskSet {
  LabelMap labels;
  InstanceProvider provider = InstanceProvider::oracle;

  int count() const;
};

/// Renumbers nonzero labels to 1..k preserving their ascending order.
LabelMap compact_labels(const LabelMap& labels);

}  // namespace basup
