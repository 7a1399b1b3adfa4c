#include <gtest/gtest.h>

#include "sasav/error.hpp"
#include "sasav/image.hpp"
#include "support.hpp"

using namespace sasav;

TEST(Png, RoundTripInMemory) {
  Image img(7, 5, 0);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      auto* p = img.pixel(x, y);
      p[0] = static_cast<std::uint8_t>(x * 30);
      p[1] = static_cast<std::uint8_t>(y * 50);
      p[2] = static_cast<std::uint8_t>(x + y);
      p[3] = static_cast<std::uint8_t>(255 - x);
    }
  const auto bytes = encode_png(img);
  ASSERT_GT(bytes.size(), 8u);
  EXPECT_EQ(bytes[1], 'P');
  EXPECT_EQ(decode_png(bytes), img);
}

TEST(Png, RoundTripOnDisk) {
  sasav::testing::TempDir dir;
  Image img(3, 2, 255);
  img.pixel(1, 1)[0] = 9;
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_png(dir / "a.png"), img);
}

TEST(Png, EncodingIsDeterministic) {
  Image img(16, 16, 128);
  EXPECT_EQ(encode_png(img), encode_png(img));
}

TEST(Png, GarbageIsRejected) {
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5};
  EXPECT_THROW(decode_png(junk), Error);
}
