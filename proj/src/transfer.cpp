#include "sasav/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include "sasav/error.hpp"

namespace sasav {

namespace {

constexpr int kSchemaVersion = 1;

double lerp(double a, double b, double t) { return a + (b - a) * t; }

void check_color(const Rgb& c) {
  for (double ch : {c.r, c.g, c.b}) {
    if (!(ch >= 0.0 && ch <= 1.0)) throw Error(Errc::kInvalidArgument, "color channel outside [0,1]");
  }
}

void check_points(const std::vector<ControlPoint>& points) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.value)) throw Error(Errc::kInvalidArgument, "control point value not finite");
    if (!(p.opacity >= 0.0 && p.opacity <= 1.0)) throw Error(Errc::kInvalidArgument, "opacity outside [0,1]");
    check_color(p.color);
    if (i > 0 && !(points[i - 1].value < p.value)) {
      throw Error(Errc::kInvalidArgument, "control points must be strictly increasing");
    }
  }
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void to_json(nlohmann::json& j, const Rgb& c) { j = nlohmann::json::array({c.r, c.g, c.b}); }

void from_json(const nlohmann::json& j, Rgb& c) {
  if (!j.is_array() || j.size() != 3) throw Error(Errc::kParseFailure, "color must be [r, g, b]");
  c = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void to_json(nlohmann::json& j, const IsovalueRecord& r) {
  j = {{"isovalue", r.isovalue},
       {"geometric_role", r.geometric_role},
       {"scientific_salience", r.scientific_salience},
       {"occlusion_risk", r.occlusion_risk},
       {"confidence", r.confidence},
       {"shape_summary", r.shape_summary},
       {"explanation", r.explanation},
       {"assigned_color", r.assigned_color},
       {"assigned_opacity", r.assigned_opacity},
       {"accepted", r.accepted},
       {"tuned_isovalue", r.tuned_isovalue ? nlohmann::json(*r.tuned_isovalue) : nlohmann::json()}};
}

void from_json(const nlohmann::json& j, IsovalueRecord& r) {
  r.isovalue = j.at("isovalue").get<double>();
  r.geometric_role = j.value("geometric_role", "");
  r.scientific_salience = j.value("scientific_salience", 1);
  r.occlusion_risk = j.value("occlusion_risk", 1);
  r.confidence = j.value("confidence", 1);
  r.shape_summary = j.value("shape_summary", "");
  r.explanation = j.value("explanation", "");
  r.assigned_color = j.value("assigned_color", Rgb{1.0, 1.0, 1.0});
  r.assigned_opacity = j.value("assigned_opacity", 0.0);
  r.accepted = j.value("accepted", true);
  if (j.contains("tuned_isovalue") && !j.at("tuned_isovalue").is_null()) {
    r.tuned_isovalue = j.at("tuned_isovalue").get<double>();
  } else {
    r.tuned_isovalue.reset();
  }
}

void RampOpacity::validate() const {
  if (!(v_min <= rsv && rsv < v_max)) {
    throw Error(Errc::kInvalidArgument, "ramp start must lie in [v_min, v_max)");
  }
}

double ramp_opacity(const RampOpacity& ramp, double v) {
  if (v < ramp.rsv) return 0.0;
  const double t = (v - ramp.rsv) / (ramp.v_max - ramp.rsv);
  return std::min(t, 1.0);
}

std::vector<double> sample_rsvs(double v_min, double v_max, int n) {
  if (n < 1) throw Error(Errc::kInvalidArgument, "rsv count must be >= 1");
  if (!(v_min < v_max)) throw Error(Errc::kDegenerateRange, "v_min must be < v_max");
  const double range = v_max - v_min;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = v_min + (i * range) / n;
  return out;
}

std::vector<double> sample_isovalues(double v_min, double v_max, int m) {
  if (m < 1) throw Error(Errc::kInvalidArgument, "isovalue count must be >= 1");
  if (!(v_min < v_max)) throw Error(Errc::kDegenerateRange, "v_min must be < v_max");
  const double range = v_max - v_min;
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int i = 1; i <= m; ++i) out[static_cast<std::size_t>(i - 1)] = v_min + (i * range) / (m + 1);
  return out;
}

std::vector<double> label_isovalues(const Volume& volume, bool exclude_background) {
  std::set<float> distinct(volume.values().begin(), volume.values().end());
  std::vector<double> out;
  out.reserve(distinct.size());
  for (float v : distinct) {
    if (exclude_background && v == 0.0f) continue;
    out.push_back(v);
  }
  return out;
}

TransferFunction TransferFunction::continuous(std::vector<ControlPoint> points) {
  if (points.empty()) throw Error(Errc::kEmptyRecords, "continuous transfer function needs a control point");
  check_points(points);
  TransferFunction tf;
  tf.mode_ = TfMode::kContinuous;
  tf.points_ = std::move(points);
  return tf;
}

TransferFunction TransferFunction::discrete(std::vector<ControlPoint> bands, double width) {
  if (!(width > 0.0) || !std::isfinite(width)) throw Error(Errc::kInvalidArgument, "band width must be > 0");
  check_points(bands);
  TransferFunction tf;
  tf.mode_ = TfMode::kDiscrete;
  tf.points_ = std::move(bands);
  tf.width_ = width;
  return tf;
}

TfSample TransferFunction::evaluate(double v) const {
  if (points_.empty()) return {};
  if (mode_ == TfMode::kDiscrete) {
    // Nearest band whose closed interval contains v; lower center wins ties.
    const ControlPoint* best = nullptr;
    double best_dist = 0.0;
    auto it = std::lower_bound(points_.begin(), points_.end(), v,
                               [](const ControlPoint& p, double x) { return p.value < x; });
    for (auto cand : {it == points_.begin() ? points_.end() : std::prev(it), it}) {
      if (cand == points_.end()) continue;
      const double dist = std::abs(v - cand->value);
      if (dist <= width_ && (best == nullptr || dist < best_dist)) {
        best = &*cand;
        best_dist = dist;
      }
    }
    if (best == nullptr) return {};
    return {best->color, best->opacity};
  }
  if (v <= points_.front().value) return {points_.front().color, points_.front().opacity};
  if (v >= points_.back().value) return {points_.back().color, points_.back().opacity};
  auto hi = std::upper_bound(points_.begin(), points_.end(), v,
                             [](double x, const ControlPoint& p) { return x < p.value; });
  auto lo = std::prev(hi);
  const double t = (v - lo->value) / (hi->value - lo->value);
  return {{lerp(lo->color.r, hi->color.r, t), lerp(lo->color.g, hi->color.g, t), lerp(lo->color.b, hi->color.b, t)},
          lerp(lo->opacity, hi->opacity, t)};
}

TransferFunction build_continuous_tf(std::span<const IsovalueRecord> records) {
  if (records.empty()) throw Error(Errc::kEmptyRecords, "no isovalue records");
  std::vector<ControlPoint> points;
  points.reserve(records.size());
  for (const auto& r : records) {
    const double value = r.effective_isovalue();
    if (!points.empty() && !(points.back().value < value)) continue;  // keep first of duplicates
    points.push_back({value, r.assigned_color, r.assigned_opacity});
  }
  return TransferFunction::continuous(std::move(points));
}

TransferFunction build_discrete_tf(std::span<const IsovalueRecord> records, double width) {
  if (records.empty()) throw Error(Errc::kEmptyRecords, "no isovalue records");
  std::vector<ControlPoint> bands;
  for (const auto& r : records) {
    if (!r.accepted) continue;
    const double value = r.effective_isovalue();
    if (!bands.empty() && !(bands.back().value < value)) continue;
    bands.push_back({value, r.assigned_color, r.assigned_opacity});
  }
  return TransferFunction::discrete(std::move(bands), width);
}

double default_band_width(double v_min, double v_max, int m) {
  return (v_max - v_min) / (m + 1) / 4.0;
}

std::string export_tf(const TransferFunction& tf, TfFormat format) {
  if (format == TfFormat::kCt) return export_ct(tf);
  return tf_to_json(tf).dump(2) + "\n";
}

std::string export_ct(const TransferFunction& tf, std::pair<double, double> domain) {
  const double span = domain.second - domain.first;
  if (!(span > 0.0)) throw Error(Errc::kDegenerateRange, "color table domain is empty");
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<ColorTable points=\"" << tf.control_points().size() << "\" mode=\""
      << (tf.mode() == TfMode::kDiscrete ? "discrete" : "continuous") << "\"";
  if (tf.mode() == TfMode::kDiscrete) out << " width=\"" << fmt6(tf.width() / span) << "\"";
  out << ">\n";
  for (const auto& p : tf.control_points()) {
    out << "  <ControlPoint position=\"" << fmt6((p.value - domain.first) / span) << "\" r=\"" << fmt6(p.color.r)
        << "\" g=\"" << fmt6(p.color.g) << "\" b=\"" << fmt6(p.color.b) << "\" a=\"" << fmt6(p.opacity)
        << "\"/>\n";
  }
  out << "</ColorTable>\n";
  return out.str();
}

TransferFunction import_ct(std::string_view document, std::pair<double, double> domain) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in{std::string(document)};
    pt::read_xml(in, tree);
    const auto& root = tree.get_child("ColorTable");
    const auto declared = root.get<std::size_t>("<xmlattr>.points");
    const auto mode = root.get<std::string>("<xmlattr>.mode", "continuous");
    const double span = domain.second - domain.first;
    std::vector<ControlPoint> points;
    for (const auto& [name, node] : root) {
      if (name != "ControlPoint") continue;
      ControlPoint p;
      p.value = domain.first + node.get<double>("<xmlattr>.position") * span;
      p.color = {node.get<double>("<xmlattr>.r"), node.get<double>("<xmlattr>.g"), node.get<double>("<xmlattr>.b")};
      p.opacity = node.get<double>("<xmlattr>.a");
      points.push_back(p);
    }
    if (points.size() != declared) throw Error(Errc::kParseFailure, "ColorTable point count mismatch");
    if (mode == "discrete") {
      return TransferFunction::discrete(std::move(points), root.get<double>("<xmlattr>.width") * span);
    }
    return TransferFunction::continuous(std::move(points));
  } catch (const pt::ptree_error& e) {
    throw Error(Errc::kParseFailure, std::string("color table: ") + e.what());
  }
}

nlohmann::json tf_to_json(const TransferFunction& tf) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : tf.control_points()) {
    points.push_back({{"value", p.value}, {"color", p.color}, {"opacity", p.opacity}});
  }
  nlohmann::json doc = {{"schema_version", kSchemaVersion},
                        {"mode", tf.mode() == TfMode::kDiscrete ? "discrete" : "continuous"},
                        {"control_points", std::move(points)}};
  if (tf.mode() == TfMode::kDiscrete) doc["width"] = tf.width();
  return doc;
}

TransferFunction tf_from_json(const nlohmann::json& doc) {
  try {
    std::vector<ControlPoint> points;
    for (const auto& p : doc.at("control_points")) {
      points.push_back({p.at("value").get<double>(), p.at("color").get<Rgb>(), p.at("opacity").get<double>()});
    }
    const auto mode = doc.at("mode").get<std::string>();
    if (mode == "discrete") return TransferFunction::discrete(std::move(points), doc.at("width").get<double>());
    if (mode == "continuous") return TransferFunction::continuous(std::move(points));
    throw Error(Errc::kParseFailure, "unknown transfer function mode '" + mode + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kParseFailure, std::string("tf document: ") + e.what());
  }
}

}  // namespace sasav
