#pragma once

#include <vector>

#include "cams/llm_gateway.hpp"

namespace cams::llm {

// Built-in v1 prompt set. The same texts ship as text assets under
// core/assets/prompts/v1/ for use as an override-directory starting point.
const std::vector<PromptTemplate>& builtin_prompt_templates();

}  // namespace cams::llm
