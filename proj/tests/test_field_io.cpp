#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "roughflow/field_io.hpp"

using namespace roughflow;

TEST(FieldIo, BinaryRoundTrip) {
  GridSpec<3> g(8);
  Field<3> f(g, Valence::christoffel);
  for (std::size_t p = 0; p < g.points(); ++p)
    for (int c = 0; c < f.components(); ++c) f(p, c) = std::sin(0.1 * p + c);
  const auto back = decode_field<3>(encode_field(f));
  EXPECT_TRUE(back == f);
}

TEST(FieldIo, LayoutIsComponentsInnermost) {
  GridSpec<2> g(8);
  Field<2> f(g, Valence::sym2);
  for (std::size_t p = 0; p < g.points(); ++p)
    for (int c = 0; c < 3; ++c) f(p, c) = 10.0 * p + c;
  const auto bytes = encode_field(f);
  std::int32_t header[4];
  std::memcpy(header, bytes.data(), sizeof(header));
  EXPECT_EQ(header[0], 2);
  EXPECT_EQ(header[1], 8);
  EXPECT_EQ(header[2], static_cast<int>(Valence::sym2));
  EXPECT_EQ(header[3], 3);
  double v[6];
  std::memcpy(v, bytes.data() + sizeof(header), sizeof(v));
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[2], 2.0);
  EXPECT_EQ(v[3], 10.0);
  EXPECT_EQ(v[5], 12.0);
}

TEST(FieldIo, RejectsCorruptData) {
  GridSpec<2> g(8);
  auto bytes = encode_field(Field<2>(g, Valence::scalar));
  EXPECT_THROW(decode_field<3>(bytes), Error);
  EXPECT_THROW(decode_field<2>(bytes.substr(0, bytes.size() - 1)), Error);
  std::int32_t bad = 5;
  std::memcpy(bytes.data() + 12, &bad, 4);
  EXPECT_THROW(decode_field<2>(bytes), Error);
}

TEST(FieldIo, FileRoundTripIsAtomic) {
  const auto dir = std::filesystem::temp_directory_path() / "roughflow_io_test";
  std::filesystem::remove_all(dir);
  GridSpec<2> g(16, 4);
  auto f = sample_scalar(g, [](const Vec<2>& x) { return x[0] - x[1]; });
  save_field(dir / "f.bin", f);
  EXPECT_FALSE(std::filesystem::exists(dir / "f.bin.tmp"));
  EXPECT_TRUE(load_field<2>(dir / "f.bin", 4) == f);
  EXPECT_THROW(load_field<2>(dir / "missing.bin"), Error);
  std::filesystem::remove_all(dir);
}

TEST(FieldIo, CsvHasCoordinatesAndComponents) {
  GridSpec<2> g(8);
  Field<2> f(g, Valence::vector, 1.5);
  const auto csv = field_to_csv(f);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "x0,x1,c0,c1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 65);
  EXPECT_NE(csv.find("0.125,0,1.5,1.5"), std::string::npos);
}
