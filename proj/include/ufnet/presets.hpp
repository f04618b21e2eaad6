#pragma once

#include <string>
#include <vector>

#include "ufnet/fusion.hpp"
#include "ufnet/task_model.hpp"

namespace ufnet {

// Published tuned configurations, keyed by name. Unknown names throw a
// ConfigError whose message lists what is available.
TaskModelConfig task_preset(const std::string& name);
UfnetConfig fusion_preset(const std::string& name);

const std::vector<std::string>& task_preset_names();
const std::vector<std::string>& fusion_preset_names();

} // namespace ufnet
