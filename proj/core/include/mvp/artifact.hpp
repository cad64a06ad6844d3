#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

namespace mvp::env {

/// Output of the simulated generator: the set of attribute tokens it realized,
/// standing in for an image.
struct GeneratedArtifact {
  std::vector<int> attributes;  // sorted, unique attribute token indices
  std::vector<int> prompt;      // provenance: the prompt that produced it
  std::uint64_t draw_seed = 0;  // provenance: seed of this draw

  bool has(int token) const;
  bool operator==(const GeneratedArtifact&) const = default;
};

/// Builds an artifact from an arbitrary attribute list (sorted and deduplicated).
GeneratedArtifact make_artifact(std::vector<int> attributes);

nlohmann::json to_json(const GeneratedArtifact& a);

}  // namespace mvp::env
