#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sasav/isovalue_record.hpp"
#include "sasav/volume.hpp"

namespace sasav {

/// Ramp opacity: zero below the ramp start, linear up to one at v_max.
struct RampOpacity {
  double rsv = 0.0;
  double v_min = 0.0;
  double v_max = 1.0;

  /// Requires v_min <= rsv < v_max.
  void validate() const;
};

double ramp_opacity(const RampOpacity& ramp, double v);

/// rsv_i = v_min + i * (v_max - v_min) / n, i = 0..n-1.
std::vector<double> sample_rsvs(double v_min, double v_max, int n);

/// v_i = v_min + i * d with d = (v_max - v_min) / (m + 1), i = 1..m.
std::vector<double> sample_isovalues(double v_min, double v_max, int m);

/// Sorted distinct values of a label volume; 0 is skipped when
/// exclude_background is set.
std::vector<double> label_isovalues(const Volume& volume, bool exclude_background = true);

enum class TfMode { kContinuous, kDiscrete };

struct ControlPoint {
  double value = 0.0;
  Rgb color;
  double opacity = 0.0;
  friend bool operator==(const ControlPoint&, const ControlPoint&) = default;
};

struct TfSample {
  Rgb color;
  double opacity = 0.0;
};

class TransferFunction {
 public:
  TransferFunction() = default;

  /// Piecewise linear in color and opacity. Clamps to the nearest end point
  /// outside the control range. Requires at least one point, strictly increasing values.
  static TransferFunction continuous(std::vector<ControlPoint> points);

  /// Step bands [value - width, value + width]; zero opacity elsewhere. May be
  /// empty. Where bands overlap the nearest center wins.
  static TransferFunction discrete(std::vector<ControlPoint> bands, double width);

  TfMode mode() const { return mode_; }
  std::span<const ControlPoint> control_points() const { return points_; }
  double width() const { return width_; }

  TfSample evaluate(double v) const;

  friend bool operator==(const TransferFunction&, const TransferFunction&) = default;

 private:
  TfMode mode_ = TfMode::kContinuous;
  std::vector<ControlPoint> points_;
  double width_ = 0.0;
};

inline TfSample evaluate_tf(const TransferFunction& tf, double v) { return tf.evaluate(v); }

/// Records must carry assigned color/opacity; sorted by effective isovalue.
TransferFunction build_continuous_tf(std::span<const IsovalueRecord> records);
/// Only accepted records become bands; throws kEmptyRecords for an empty list.
TransferFunction build_discrete_tf(std::span<const IsovalueRecord> records, double width);

/// Band half-width used by the pipeline: a quarter of the isovalue spacing.
double default_band_width(double v_min, double v_max, int m);

enum class TfFormat { kCt, kStructured };

std::string export_tf(const TransferFunction& tf, TfFormat format);

/// ColorTable XML. Positions are normalized against `domain`; values print
/// with 6 significant digits.
std::string export_ct(const TransferFunction& tf, std::pair<double, double> domain = {0.0, 1.0});
TransferFunction import_ct(std::string_view document, std::pair<double, double> domain = {0.0, 1.0});

nlohmann::json tf_to_json(const TransferFunction& tf);
TransferFunction tf_from_json(const nlohmann::json& doc);

}  // namespace sasav
