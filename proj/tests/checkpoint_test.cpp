#include "lbn/checkpoint.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <filesystem>

#include "test_util.hpp"

namespace lbn {
namespace {

CheckpointErrc decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return CheckpointErrc::Io;
}

std::string decode_message(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return {};
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  auto model = testing::toy_model(3, -0.25);
  model.bn[1].mu_h[0] = -0.0;  // sign of zero survives
  const auto decoded = decode_checkpoint(encode_checkpoint(model));
  EXPECT_EQ(decoded, model);
  EXPECT_TRUE(std::signbit(decoded.bn[1].mu_h[0]));
  EXPECT_EQ(encode_checkpoint(decoded), encode_checkpoint(model));
}

TEST(Checkpoint, FileRoundTrip) {
  const auto model = testing::toy_model(4);
  const auto path = std::filesystem::temp_directory_path() / "lbn_checkpoint_test.lbn";
  save_checkpoint(model, path);
  EXPECT_EQ(load_checkpoint(path), model);
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_checkpoint(testing::toy_model(1));
  ASSERT_GE(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LBN1");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[5], 0);
  const std::uint32_t count = bytes[6] | bytes[7] << 8 | bytes[8] << 16 | static_cast<std::uint32_t>(bytes[9]) << 24;
  EXPECT_EQ(count, to_records(testing::toy_model(1)).size());
}

TEST(Checkpoint, CorruptMagic) {
  auto bytes = encode_checkpoint(testing::toy_model(1));
  bytes[0] = 'X';
  EXPECT_EQ(decode_error(bytes), CheckpointErrc::BadMagic);
  EXPECT_EQ(decode_error({}), CheckpointErrc::BadMagic);
}

TEST(Checkpoint, VersionMismatch) {
  auto bytes = encode_checkpoint(testing::toy_model(1));
  bytes[4] = 2;
  EXPECT_EQ(decode_error(bytes), CheckpointErrc::VersionMismatch);
}

TEST(Checkpoint, TruncationNamesTheRecord) {
  const auto full = encode_checkpoint(testing::toy_model(1));
  const auto records = to_records(testing::toy_model(1));
  // Cut in the middle of the last record's payload.
  std::vector<std::uint8_t> cut(full.begin(), full.end() - 4);
  EXPECT_EQ(decode_error(cut), CheckpointErrc::Truncated);
  EXPECT_NE(decode_message(cut).find("'" + records.back().name + "'"), std::string::npos) << decode_message(cut);
  // Every truncation point is reported as truncation, never as a crash.
  for (std::size_t n = 10; n < full.size(); n += 37) {
    EXPECT_EQ(decode_error(std::vector<std::uint8_t>(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(n))),
              CheckpointErrc::Truncated)
        << n;
  }
}

TEST(Checkpoint, TrailingBytesAreMalformed) {
  auto bytes = encode_checkpoint(testing::toy_model(1));
  bytes.push_back(0);
  EXPECT_EQ(decode_error(bytes), CheckpointErrc::Malformed);
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(load_checkpoint("/nonexistent/model.lbn"), MissingInputError);
}

TEST(Checkpoint, MissingRecordIsMalformed) {
  auto recs = to_records(testing::toy_model(1));
  recs.pop_back();
  EXPECT_THROW(from_records(recs), CheckpointError);
}

}  // namespace
}  // namespace lbn
