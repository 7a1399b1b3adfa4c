#include "sasav/prompts.hpp"

#include <mutex>

#include "sasav/error.hpp"

namespace sasav {

namespace detail {
const std::map<std::string, std::string>& embedded_prompts();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

PromptTemplate parse_template(const std::string& name, std::string_view text) {
  PromptTemplate t;
  t.name = name;
  std::string* section = nullptr;
  std::string system, user;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const auto line = text.substr(pos, eol - pos);
    if (line.starts_with("version:")) {
      t.version = trim(line.substr(8));
    } else if (line == "## system") {
      section = &system;
    } else if (line == "## user") {
      section = &user;
    } else if (section) {
      *section += line;
      *section += '\n';
    }
    pos = eol + 1;
  }
  t.system = trim(system);
  t.user = trim(user);
  if (t.version.empty() || t.system.empty() || t.user.empty()) {
    throw Error(Errc::kInvalidArgument, "prompt template '" + name + "' is malformed");
  }
  return t;
}

const std::map<std::string, PromptTemplate, std::less<>>& templates() {
  static const auto table = [] {
    std::map<std::string, PromptTemplate, std::less<>> out;
    for (const auto& [name, text] : detail::embedded_prompts()) out.emplace(name, parse_template(name, text));
    return out;
  }();
  return table;
}

}  // namespace

const PromptTemplate& prompt_template(std::string_view name) {
  const auto& table = templates();
  const auto it = table.find(name);
  if (it == table.end()) throw Error(Errc::kInvalidArgument, "no prompt template '" + std::string(name) + "'");
  return it->second;
}

std::vector<std::string> prompt_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : templates()) out.push_back(name);
  return out;
}

std::string substitute(std::string_view text, const PromptVars& vars) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(text.substr(pos, open - pos));
    const auto key = text.substr(open + 2, close - open - 2);
    const auto it = vars.find(key);
    if (it == vars.end()) throw Error(Errc::kInvalidArgument, "prompt variable '" + std::string(key) + "' not bound");
    out += it->second;
    pos = close + 2;
  }
  out.append(text.substr(pos));
  return out;
}

RenderedPrompt render_prompt(std::string_view name, const PromptVars& vars) {
  const auto& t = prompt_template(name);
  RenderedPrompt out{substitute(t.system, vars), substitute(t.user, vars)};
  out.user += "\n\n";
  out.user += kFailedGuard;
  return out;
}

}  // namespace sasav
