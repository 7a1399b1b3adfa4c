#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "sasav/error.hpp"
#include "sasav/transfer.hpp"
#include "support.hpp"

using namespace sasav;

namespace {

IsovalueRecord record(double v, Rgb color, double opacity, bool accepted = true) {
  IsovalueRecord r;
  r.isovalue = v;
  r.assigned_color = color;
  r.assigned_opacity = opacity;
  r.accepted = accepted;
  return r;
}

void expect_points_near(const TransferFunction& a, const TransferFunction& b, double tol) {
  ASSERT_EQ(a.mode(), b.mode());
  ASSERT_EQ(a.control_points().size(), b.control_points().size());
  EXPECT_NEAR(a.width(), b.width(), tol);
  for (std::size_t i = 0; i < a.control_points().size(); ++i) {
    const auto& p = a.control_points()[i];
    const auto& q = b.control_points()[i];
    EXPECT_NEAR(p.value, q.value, tol);
    EXPECT_NEAR(p.color.r, q.color.r, tol);
    EXPECT_NEAR(p.color.g, q.color.g, tol);
    EXPECT_NEAR(p.color.b, q.color.b, tol);
    EXPECT_NEAR(p.opacity, q.opacity, tol);
  }
}

}  // namespace

TEST(Ramp, Examples) {
  EXPECT_EQ(ramp_opacity({0.2, 0.0, 1.0}, 0.1), 0.0);
  EXPECT_EQ(ramp_opacity({0.0, 0.0, 1.0}, 0.5), 0.5);
  EXPECT_EQ(ramp_opacity({0.2, 0.0, 1.0}, 1.0), 1.0);
  EXPECT_EQ(ramp_opacity({0.2, 0.0, 1.0}, 3.0), 1.0);
}

TEST(Ramp, MonotoneOnGrid) {
  const RampOpacity ramp{0.35, 0.0, 1.0};
  double prev = -1.0;
  for (int i = 0; i <= 2000; ++i) {
    const double v = i / 2000.0;
    const double a = ramp_opacity(ramp, v);
    EXPECT_GE(a, prev);
    if (v < ramp.rsv) {
      EXPECT_EQ(a, 0.0);
    }
    prev = a;
  }
}

TEST(Ramp, ValidateRejectsRsvAtMax) {
  EXPECT_THROW((RampOpacity{1.0, 0.0, 1.0}.validate()), Error);
  EXPECT_NO_THROW((RampOpacity{0.0, 0.0, 1.0}.validate()));
}

TEST(SampleRsvs, Examples) {
  const auto a = sample_rsvs(0, 1, 5);
  ASSERT_EQ(a.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(a[i], 0.2 * i, 1e-15);
  EXPECT_EQ(sample_rsvs(0, 1, 1), std::vector<double>{0.0});
  EXPECT_EQ(sample_rsvs(10, 20, 2), (std::vector<double>{10.0, 15.0}));
}

TEST(SampleRsvs, DegenerateRange) {
  try {
    sample_rsvs(3, 3, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDegenerateRange);
  }
}

TEST(SampleRsvs, InsideHalfOpenRange) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int t = 0; t < 100; ++t) {
    double lo = u(gen), hi = u(gen);
    if (lo == hi) continue;
    if (lo > hi) std::swap(lo, hi);
    const auto s = sample_rsvs(lo, hi, 1 + t % 12);
    EXPECT_EQ(s.front(), lo);
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_LT(s[i], hi);
      if (i > 0) {
        EXPECT_GT(s[i], s[i - 1]);
      }
    }
  }
}

TEST(SampleIsovalues, Examples) {
  const auto nine = sample_isovalues(0, 1, 9);
  ASSERT_EQ(nine.size(), 9u);
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(nine[i], 0.1 * (i + 1), 1e-12);
  EXPECT_EQ(sample_isovalues(0, 1, 1), std::vector<double>{0.5});
  EXPECT_EQ(sample_isovalues(-2, 2, 3), (std::vector<double>{-1.0, 0.0, 1.0}));
  EXPECT_THROW(sample_isovalues(1, 1, 3), Error);
}

TEST(LabelIsovalues, Examples) {
  using sasav::testing::make_volume;
  const auto v = make_volume({4, 1, 1}, {7, 0, 3, 3}, ValueKind::kLabel);
  EXPECT_EQ(label_isovalues(v, false), (std::vector<double>{0, 3, 7}));
  EXPECT_EQ(label_isovalues(v), (std::vector<double>{3, 7}));
  EXPECT_EQ(label_isovalues(make_volume({2, 1, 1}, {5, 5}, ValueKind::kLabel)), std::vector<double>{5});
  EXPECT_TRUE(label_isovalues(make_volume({2, 1, 1}, {0, 0}, ValueKind::kLabel)).empty());
}

TEST(ContinuousTf, MidpointIsPurple) {
  const std::vector<IsovalueRecord> recs = {record(0.2, {1, 0, 0}, 0.1), record(0.8, {0, 0, 1}, 0.9)};
  const auto tf = build_continuous_tf(recs);
  const auto s = tf.evaluate(0.5);
  EXPECT_NEAR(s.color.r, 0.5, 1e-12);
  EXPECT_NEAR(s.color.g, 0.0, 1e-12);
  EXPECT_NEAR(s.color.b, 0.5, 1e-12);
  EXPECT_NEAR(s.opacity, 0.5, 1e-12);
  const auto at = tf.evaluate(0.8);
  EXPECT_EQ(at.color, (Rgb{0, 0, 1}));
  EXPECT_EQ(at.opacity, 0.9);
}

TEST(ContinuousTf, SinglePointIsConstant) {
  const std::vector<IsovalueRecord> recs = {record(0.4, {0.1, 0.2, 0.3}, 0.7)};
  const auto tf = build_continuous_tf(recs);
  for (double v : {-1.0, 0.0, 0.4, 0.9, 5.0}) {
    EXPECT_EQ(tf.evaluate(v).opacity, 0.7);
    EXPECT_EQ(tf.evaluate(v).color, (Rgb{0.1, 0.2, 0.3}));
  }
}

TEST(ContinuousTf, EmptyRecords) {
  try {
    build_continuous_tf({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kEmptyRecords);
  }
}

TEST(ContinuousTf, ContinuousOnDenseGrid) {
  std::vector<IsovalueRecord> recs;
  for (int i = 1; i <= 9; ++i) recs.push_back(record(i / 10.0, {i / 9.0, 1 - i / 9.0, 0.5}, (i % 4) / 3.0));
  const auto tf = build_continuous_tf(recs);
  const double eps = 1e-7;
  for (int i = 0; i <= 10000; ++i) {
    const double v = i / 10000.0;
    const auto a = tf.evaluate(v);
    const auto b = tf.evaluate(v + eps);
    EXPECT_LT(std::abs(a.opacity - b.opacity), 1e-5);
    EXPECT_LT(std::abs(a.color.r - b.color.r), 1e-5);
  }
}

TEST(DiscreteTf, BandMembership) {
  const std::vector<IsovalueRecord> recs = {record(0.5, {1, 1, 1}, 1.0)};
  const auto tf = build_discrete_tf(recs, 0.02);
  EXPECT_EQ(tf.evaluate(0.51).opacity, 1.0);
  EXPECT_EQ(tf.evaluate(0.6).opacity, 0.0);
}

TEST(DiscreteTf, AllRejectedIsTransparent) {
  const std::vector<IsovalueRecord> recs = {record(0.3, {1, 0, 0}, 1.0, false), record(0.6, {0, 1, 0}, 0.8, false)};
  const auto tf = build_discrete_tf(recs, 0.05);
  EXPECT_TRUE(tf.control_points().empty());
  for (int i = 0; i <= 1000; ++i) EXPECT_EQ(tf.evaluate(i / 1000.0).opacity, 0.0);
}

TEST(DiscreteTf, AdjacentBandsDoNotOverlap) {
  const auto iso = sample_isovalues(0, 1, 9);
  std::vector<IsovalueRecord> recs;
  for (std::size_t i = 0; i < iso.size(); ++i) recs.push_back(record(iso[i], {0, 0, 0}, 0.1 * (i + 1)));
  const double width = default_band_width(0, 1, 9);
  EXPECT_NEAR(width, 0.1 / 4, 1e-15);
  const auto tf = build_discrete_tf(recs, width);
  for (int i = 0; i <= 100000; ++i) {
    const double v = i / 100000.0;
    int hits = 0;
    for (double c : iso) hits += std::abs(v - c) <= width ? 1 : 0;
    EXPECT_LE(hits, 1);
    const double op = tf.evaluate(v).opacity;
    if (hits == 0) {
      EXPECT_EQ(op, 0.0);
    }
  }
}

TEST(DiscreteTf, RejectedContributeNothing) {
  const auto iso = sample_isovalues(0, 1, 9);
  std::vector<IsovalueRecord> recs;
  for (std::size_t i = 0; i < iso.size(); ++i) recs.push_back(record(iso[i], {1, 1, 1}, 0.9, i % 3 != 0));
  const double width = default_band_width(0, 1, 9);
  const auto tf = build_discrete_tf(recs, width);
  for (int i = 0; i <= 20000; ++i) {
    const double v = i / 20000.0;
    for (std::size_t r = 0; r < iso.size(); r += 3) {
      if (std::abs(v - iso[r]) <= width) {
        EXPECT_EQ(tf.evaluate(v).opacity, 0.0) << v;
      }
    }
  }
}

TEST(Export, CtRoundTrip) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<IsovalueRecord> recs;
  for (int i = 1; i <= 9; ++i) recs.push_back(record(i / 10.0, {u(gen), u(gen), u(gen)}, u(gen)));
  for (const auto& tf : {build_continuous_tf(recs), build_discrete_tf(recs, 0.025)}) {
    expect_points_near(import_ct(export_ct(tf)), tf, 1e-6);
    expect_points_near(tf_from_json(tf_to_json(tf)), tf, 1e-6);
  }
}

TEST(Export, CtHasOneEntryPerPoint) {
  std::vector<IsovalueRecord> recs;
  for (int i = 1; i <= 9; ++i) recs.push_back(record(i / 10.0, {1, 1, 1}, 0.5));
  const auto doc = export_tf(build_continuous_tf(recs), TfFormat::kCt);
  std::size_t count = 0;
  for (std::size_t pos = doc.find("<ControlPoint"); pos != std::string::npos; pos = doc.find("<ControlPoint", pos + 1)) ++count;
  EXPECT_EQ(count, 9u);
  EXPECT_NE(doc.find("points=\"9\""), std::string::npos);
}

TEST(Export, EmptyDiscreteIsValid) {
  const auto tf = TransferFunction::discrete({}, 0.05);
  const auto doc = export_ct(tf);
  EXPECT_NE(doc.find("points=\"0\""), std::string::npos);
  const auto back = import_ct(doc);
  EXPECT_EQ(back.mode(), TfMode::kDiscrete);
  EXPECT_TRUE(back.control_points().empty());
  EXPECT_TRUE(tf_from_json(nlohmann::json::parse(export_tf(tf, TfFormat::kStructured))).control_points().empty());
}

TEST(Export, CtDomainNormalization) {
  const auto tf = TransferFunction::continuous({{10.0, {1, 0, 0}, 0.2}, {30.0, {0, 1, 0}, 0.8}});
  const auto doc = export_ct(tf, {10.0, 30.0});
  EXPECT_NE(doc.find("position=\"0\""), std::string::npos);
  EXPECT_NE(doc.find("position=\"1\""), std::string::npos);
  expect_points_near(import_ct(doc, {10.0, 30.0}), tf, 1e-5);
}
