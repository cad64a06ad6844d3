#include "mvp/artifact.hpp"

#include <algorithm>

namespace mvp::env {

bool GeneratedArtifact::has(int token) const {
  return std::binary_search(attributes.begin(), attributes.end(), token);
}

GeneratedArtifact make_artifact(std::vector<int> attributes) {
  std::sort(attributes.begin(), attributes.end());
  attributes.erase(std::unique(attributes.begin(), attributes.end()), attributes.end());
  GeneratedArtifact a;
  a.attributes = std::move(attributes);
  return a;
}

nlohmann::json to_json(const GeneratedArtifact& a) {
  return {{"attributes", a.attributes}, {"prompt", a.prompt}, {"draw_seed", a.draw_seed}};
}

}  // namespace mvp::env
