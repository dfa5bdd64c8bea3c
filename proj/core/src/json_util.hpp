#pragma once

#include <json.hpp>

#include "rccr/data.hpp"
#include "rccr/model.hpp"

// Shared JSON (de)serialization for config structs, used by checkpoints and
// experiment configs. Callers wrap nlohmann exceptions in project errors.
namespace rccr::detail {

using json = nlohmann::json;

json backbone_to_json(const model::BackboneConfig& cfg);
model::BackboneConfig backbone_from_json(const json& j);
json head_to_json(const model::HeadKind& head);
model::HeadKind head_from_json(const json& j);
json task_to_json(const data::TaskSpec& spec);
data::TaskSpec task_from_json(const json& j);

}  // namespace rccr::detail
