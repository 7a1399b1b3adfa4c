#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sasav {

inline constexpr std::string_view kFailedGuard = "If you cannot answer, say 'failed.'";

struct PromptTemplate {
  std::string name;
  std::string version;
  std::string system;
  std::string user;
};

using PromptVars = std::map<std::string, std::string, std::less<>>;

/// Embedded template by file stem. Throws Error(kInvalidArgument) for an unknown name.
const PromptTemplate& prompt_template(std::string_view name);
std::vector<std::string> prompt_names();

/// Replaces every {{key}}; an unresolved placeholder throws Error(kInvalidArgument).
std::string substitute(std::string_view text, const PromptVars& vars);

struct RenderedPrompt {
  std::string system;
  std::string user;  // ends with kFailedGuard
};

RenderedPrompt render_prompt(std::string_view name, const PromptVars& vars);

}  // namespace sasav
