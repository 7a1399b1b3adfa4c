#pragma once

#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace sasav {

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Semantic analysis of one sampled isovalue plus the color/opacity the
/// designer assigned to it. Scores are on a 1..10 scale.
struct IsovalueRecord {
  double isovalue = 0.0;
  std::string geometric_role;
  int scientific_salience = 1;
  int occlusion_risk = 1;
  int confidence = 1;
  std::string shape_summary;
  std::string explanation;
  Rgb assigned_color{1.0, 1.0, 1.0};
  double assigned_opacity = 0.0;
  bool accepted = true;
  std::optional<double> tuned_isovalue;

  /// The isovalue the final transfer function uses.
  double effective_isovalue() const { return tuned_isovalue.value_or(isovalue); }
};

void to_json(nlohmann::json& j, const Rgb& c);
void from_json(const nlohmann::json& j, Rgb& c);
void to_json(nlohmann::json& j, const IsovalueRecord& r);
void from_json(const nlohmann::json& j, IsovalueRecord& r);

}  // namespace sasav
