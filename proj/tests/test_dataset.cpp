#include "kshield/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace kshield;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_cifar_records(const std::string& path, int count, uint8_t label, uint8_t fill) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (int i = 0; i < count; ++i) {
    out.put(static_cast<char>(label));
    for (int b = 0; b < 3072; ++b) out.put(static_cast<char>(fill));
  }
}

}  // namespace

TEST(Cifar10Loader, TenRecordsFromSizedFile) {
  const std::string path = temp_path("kshield_cifar10.bin");
  write_cifar_records(path, 10, 3, 128);
  Dataset ds = load_cifar10_binary(path);
  EXPECT_EQ(ds.size(), 10u);            // 30730 bytes / 3073 per record
  EXPECT_EQ(ds.classes, 10);
  EXPECT_EQ(ds.h, 32);
  EXPECT_EQ(ds.labels[0], 3);
  std::filesystem::remove(path);
}

TEST(Cifar10Loader, EmptyFileGivesEmptyDataset) {
  const std::string path = temp_path("kshield_cifar10_empty.bin");
  std::ofstream(path, std::ios::trunc).close();
  Dataset ds = load_cifar10_binary(path);
  EXPECT_EQ(ds.size(), 0u);
  std::filesystem::remove(path);
}

TEST(Cifar10Loader, PixelScalingConvention) {
  const std::string path = temp_path("kshield_cifar10_px.bin");
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.put(0);
    out.put(static_cast<char>(255));
    for (int b = 1; b < 3072; ++b) out.put(0);
  }
  Dataset ds = load_cifar10_binary(path);
  EXPECT_FLOAT_EQ(ds.images[0][0], 1.0f);
  EXPECT_FLOAT_EQ(ds.images[0][1], 0.0f);
  std::filesystem::remove(path);
}

TEST(Cifar10Loader, MalformedLengthReportsByteOffset) {
  const std::string path = temp_path("kshield_cifar10_bad.bin");
  write_cifar_records(path, 2, 0, 0);
  std::filesystem::resize_file(path, 2 * 3073 - 100);
  try {
    load_cifar10_binary(path);
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 3073"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Synthetic, SameSeedBitIdentical) {
  Dataset a = generate_synthetic(4, 8, 16, 16, 77);
  Dataset b = generate_synthetic(4, 8, 16, 16, 77);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.images[i].data, b.images[i].data) << i;
    EXPECT_EQ(a.labels[i], b.labels[i]);
  }
}

TEST(Synthetic, ZeroPerClassGivesEmptyDataset) {
  Dataset ds = generate_synthetic(4, 0, 16, 16, 1);
  EXPECT_EQ(ds.size(), 0u);
}

TEST(Synthetic, PixelsInUnitBoxAndLabelsBalanced) {
  Dataset ds = generate_synthetic(3, 10, 12, 12, 5);
  ASSERT_EQ(ds.size(), 30u);
  std::vector<int> counts(3, 0);
  for (size_t i = 0; i < ds.size(); ++i) {
    ++counts[static_cast<size_t>(ds.labels[i])];
    for (float v : ds.images[i].data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  for (int c : counts) EXPECT_EQ(c, 10);
}

TEST(Synthetic, RejectsBadArguments) {
  EXPECT_THROW(generate_synthetic(1, 4, 16, 16, 1), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(4, -1, 16, 16, 1), std::invalid_argument);
}

TEST(Distractors, OutOfTaskLabels) {
  Dataset ds = generate_distractors(4, 12, 16, 16, 7);
  EXPECT_EQ(ds.size(), 12u);
  EXPECT_EQ(ds.split, "distractor");
  for (int y : ds.labels) EXPECT_GE(y, 4);
  EXPECT_THROW(ds.validate_task_labels(), std::invalid_argument);
}

TEST(Container, RoundTripExact) {
  Dataset ds = generate_synthetic(3, 5, 8, 8, 13, 2);
  ds.labels[2] = 5;  // out-of-task label survives the container
  const std::string path = temp_path("kshield_container.ksd");
  save_container(ds, path);
  Dataset loaded = load_container(path);
  EXPECT_EQ(loaded.classes, ds.classes);
  EXPECT_EQ(loaded.h, ds.h);
  EXPECT_EQ(loaded.w, ds.w);
  EXPECT_EQ(loaded.channels, ds.channels);
  ASSERT_EQ(loaded.size(), ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(loaded.images[i].data, ds.images[i].data);
    EXPECT_EQ(loaded.labels[i], ds.labels[i]);
  }
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "KSDATA01");
  std::filesystem::remove(path);
}

TEST(Container, TruncatedRejected) {
  Dataset ds = generate_synthetic(2, 3, 8, 8, 3, 1);
  const std::string path = temp_path("kshield_container_trunc.ksd");
  save_container(ds, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  EXPECT_THROW(load_container(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(DatasetFormat, ParseNames) {
  EXPECT_EQ(parse_dataset_format("cifar10-binary"), DatasetFormat::kCifar10Binary);
  EXPECT_EQ(parse_dataset_format("kshield-container"), DatasetFormat::kContainer);
  EXPECT_EQ(parse_dataset_format("container"), DatasetFormat::kContainer);
  EXPECT_THROW(parse_dataset_format("parquet"), std::invalid_argument);
}
