#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "iron/data/loader.hpp"
#include "iron/data/synthetic.hpp"
#include "iron/data/transforms.hpp"
#include "test_util.hpp"

using namespace iron;
using namespace iron::data;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_sequences = 10;
  s.frames_per_sequence = 40;
  s.height = 32;
  s.width = 32;
  s.occlusion_prob = 0.0;
  return s;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SequenceClip ramp_clip(std::size_t frames, std::size_t h, std::size_t w) {
  SequenceClip c;
  c.sequence_id = "ramp";
  for (std::size_t t = 0; t < frames; ++t) {
    Tensor<float> img({1, h, w});
    Tensor<float> mask({h, w});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        img.at(0, i, j) = static_cast<float>((i * 7 + j * 3 + t * 11) % 17) / 16.0f;
        mask.at(i, j) = (i + j + t) % 3 == 0 ? 1.0f : 0.0f;
      }
    c.frames.push_back({img, 0.4 * static_cast<double>(t)});
    c.masks.push_back(mask);
  }
  return c;
}

}  // namespace

TEST(Synthetic, CountingContract) {
  test::TempDir dir;
  auto summary = generate_synthetic_dataset(small_spec(), dir.path());
  EXPECT_EQ(summary.train_sequences, 8u);
  EXPECT_EQ(summary.test_sequences, 2u);
  std::size_t seq_dirs = 0, frame_files = 0, mask_files = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "sequences")) {
    ++seq_dirs;
    for ([[maybe_unused]] const auto& f : fs::directory_iterator(e.path() / "frames")) ++frame_files;
    for ([[maybe_unused]] const auto& f : fs::directory_iterator(e.path() / "masks")) ++mask_files;
  }
  EXPECT_EQ(seq_dirs, 10u);
  EXPECT_EQ(frame_files, 400u);
  EXPECT_EQ(mask_files, 400u);
}

TEST(Synthetic, NoOcclusionMeansNonEmptyMasks) {
  auto spec = small_spec();
  for (std::size_t i = 0; i < spec.n_sequences; ++i)
    for (const auto& m : generate_sequence(spec, i).masks) EXPECT_GT(freespace_fraction(m), 0.0);
}

TEST(Synthetic, CertainOcclusionGivesExactlyOneEmptyRun) {
  auto spec = small_spec();
  spec.occlusion_prob = 1.0;
  spec.occlusion_len = 5;
  for (std::size_t i = 0; i < spec.n_sequences; ++i) {
    auto clip = generate_sequence(spec, i);
    std::size_t runs = 0, longest = 0, current = 0;
    for (const auto& m : clip.masks) {
      if (freespace_fraction(m) == 0.0) {
        if (current++ == 0) ++runs;
        longest = std::max(longest, current);
      } else {
        current = 0;
      }
    }
    EXPECT_EQ(runs, 1u) << clip.sequence_id;
    EXPECT_GE(longest, 5u) << clip.sequence_id;
  }
}

TEST(Synthetic, ReproducibleBytes) {
  test::TempDir a, b;
  auto spec = small_spec();
  spec.n_sequences = 3;
  spec.frames_per_sequence = 6;
  spec.occlusion_len = 2;
  generate_synthetic_dataset(spec, a.path());
  generate_synthetic_dataset(spec, b.path());
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(read_bytes(e.path()), read_bytes(b.path() / rel)) << rel;
  }
}

TEST(Synthetic, DegenerateSpecRejected) {
  auto spec = small_spec();
  spec.width = 24;  // < 4 * patch 8
  EXPECT_THROW(spec.validate(), DataError);
  spec = small_spec();
  spec.occlusion_len = spec.frames_per_sequence;
  EXPECT_THROW(spec.validate(), DataError);
}

TEST(Loader, ReturnsRequestedSplitWithBinaryMasks) {
  test::TempDir dir;
  auto spec = small_spec();
  spec.n_sequences = 2;
  spec.frames_per_sequence = 4;
  spec.occlusion_len = 1;
  write_sequence(dir.path(), [&] { auto c = generate_sequence(spec, 0); c.sequence_id = "s1"; return c; }());
  write_sequence(dir.path(), [&] { auto c = generate_sequence(spec, 1); c.sequence_id = "s2"; return c; }());
  write_splits(dir.path(), {"s1"}, {"s2"});
  auto train = load_sequences(dir.path(), Split::Train);
  ASSERT_EQ(train.size(), 1u);
  EXPECT_EQ(train[0].sequence_id, "s1");
  EXPECT_EQ(train[0].size(), 4u);
  for (const auto& m : train[0].masks) EXPECT_TRUE(is_binary(m));
  EXPECT_NEAR(train[0].frames[1].timestamp, 0.4, 1e-9);
  auto test = load_sequences(dir.path(), Split::Test);
  ASSERT_EQ(test.size(), 1u);
  EXPECT_EQ(test[0].sequence_id, "s2");
}

TEST(Loader, MissingMaskNamesSequenceAndIndex) {
  test::TempDir dir;
  auto spec = small_spec();
  spec.frames_per_sequence = 5;
  spec.occlusion_len = 1;
  auto clip = generate_sequence(spec, 0);
  clip.sequence_id = "s1";
  write_sequence(dir.path(), clip);
  write_splits(dir.path(), {"s1"}, {});
  fs::remove(dir.path() / "sequences/s1/masks/000003.png");
  try {
    load_sequences(dir.path(), Split::Train);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("s1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3"), std::string::npos) << msg;
  }
}

TEST(Loader, NonMonotonicTimestampsRejected) {
  test::TempDir dir;
  auto spec = small_spec();
  spec.frames_per_sequence = 3;
  spec.occlusion_len = 1;
  auto clip = generate_sequence(spec, 0);
  clip.sequence_id = "s1";
  write_sequence(dir.path(), clip);
  write_splits(dir.path(), {"s1"}, {});
  std::ofstream(dir.path() / "sequences/s1/timestamps.txt") << "0.0\n0.8\n0.4\n";
  EXPECT_THROW(load_sequences(dir.path(), Split::Train), DataError);
}

TEST(Loader, UnknownSequenceInSplitRejected) {
  test::TempDir dir;
  fs::create_directories(dir.path() / "sequences");
  write_splits(dir.path(), {"ghost"}, {});
  EXPECT_THROW(load_sequences(dir.path(), Split::Train), DataError);
}

TEST(Loader, PaperScaleSplitCardinalities) {
  // 35 sequences split 27 / 8 at the sequence level.
  test::TempDir dir;
  auto spec = small_spec();
  spec.frames_per_sequence = 2;
  spec.occlusion_len = 1;
  std::vector<std::string> train, test;
  for (std::size_t i = 1; i <= 35; ++i) {
    auto clip = generate_sequence(spec, i);
    clip.sequence_id = "seq" + std::to_string(i);
    write_sequence(dir.path(), clip);
    ((i <= 10 || (i >= 13 && i <= 25) || (i >= 30 && i <= 33)) ? train : test).push_back(clip.sequence_id);
  }
  write_splits(dir.path(), train, test);
  EXPECT_EQ(load_sequences(dir.path(), Split::Train).size(), 27u);
  EXPECT_EQ(load_sequences(dir.path(), Split::Test).size(), 8u);
}

TEST(Downsample, FiftyToTwoPointFiveHz) {
  std::vector<double> stamps(100);
  for (std::size_t i = 0; i < 100; ++i) stamps[i] = static_cast<double>(i) / 50.0;
  EXPECT_EQ(temporal_downsample(stamps, 50.0, 2.5), (std::vector<std::size_t>{0, 20, 40, 60, 80}));
}

TEST(Downsample, IdentityAndStrideThree) {
  std::vector<double> stamps{0, 1, 2, 3, 4, 5, 6};
  EXPECT_EQ(temporal_downsample(stamps, 3.0, 3.0), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(temporal_downsample(stamps, 3.0, 1.0), (std::vector<std::size_t>{0, 3, 6}));
  EXPECT_THROW(temporal_downsample(stamps, 3.0, 0.0), DataError);
}

TEST(Augment, AlwaysFlipMirrorsEveryFrame) {
  auto clip = ramp_clip(3, 16, 16);
  AugmentParams p{1.0, 1.0, 16, 16, 1.0};
  auto out = augment_clip(clip, p, 42);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j) {
        EXPECT_EQ(out.frames[t].image.at(0, i, j), clip.frames[t].image.at(0, i, 15 - j));
        EXPECT_EQ(out.masks[t].at(i, j), clip.masks[t].at(i, 15 - j));
      }
}

TEST(Augment, IdentityParamsReturnInput) {
  auto clip = ramp_clip(3, 16, 16);
  auto out = augment_clip(clip, AugmentParams{1.0, 1.0, 16, 16, 0.0}, 7);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(out.frames[t].image, clip.frames[t].image);
    EXPECT_EQ(out.masks[t], clip.masks[t]);
  }
}

TEST(Augment, CropWindowSharedAcrossFrames) {
  // Frames hold their own coordinates, so the crop offset is readable from the output.
  SequenceClip clip;
  for (std::size_t t = 0; t < 2; ++t) {
    Tensor<float> img({2, 32, 32});
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t j = 0; j < 32; ++j) {
        img.at(0, i, j) = static_cast<float>(i) + 100.0f * t;
        img.at(1, i, j) = static_cast<float>(j) + 100.0f * t;
      }
    clip.frames.push_back({img, double(t)});
    clip.masks.push_back(Tensor<float>({32, 32}));
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto out = augment_clip(clip, AugmentParams{1.0, 1.0, 20, 20, 0.0}, seed);
    EXPECT_EQ(out.frames[0].image.at(0, 0, 0), out.frames[1].image.at(0, 0, 0) - 100.0f);
    EXPECT_EQ(out.frames[0].image.at(1, 0, 0), out.frames[1].image.at(1, 0, 0) - 100.0f);
  }
}

TEST(Augment, CommutesWithFrameSelection) {
  auto clip = ramp_clip(5, 32, 32);
  AugmentParams p{0.75, 1.25, 24, 24, 0.5};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto whole = augment_clip(clip, p, seed);
    for (std::size_t t = 0; t < 5; ++t) {
      auto single = augment_clip(clip.select({t}), p, seed);
      EXPECT_EQ(whole.frames[t].image, single.frames[0].image);
      EXPECT_EQ(whole.masks[t], single.masks[0]);
      EXPECT_TRUE(is_binary(whole.masks[t]));
    }
  }
}

TEST(Augment, CropLargerThanFrameRejected) {
  auto clip = ramp_clip(2, 16, 16);
  EXPECT_THROW(augment_clip(clip, AugmentParams{1.0, 1.0, 20, 16, 0.0}, 0), DataError);
}

TEST(Sampling, ConsecutiveWithUnitInterval) {
  auto clip = ramp_clip(10, 8, 8);
  std::mt19937_64 rng(3);
  auto d = draw_clip_indices(clip.size(), 3, {1}, rng);
  ASSERT_EQ(d.indices.size(), 4u);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(d.indices[i], d.indices[i - 1] + 1);
}

TEST(Sampling, ForcedAnchorZero) {
  // Length 5, gap 2, queue 2: the only valid anchor is 0.
  std::mt19937_64 rng(0);
  auto d = draw_clip_indices(5, 2, {2}, rng);
  EXPECT_EQ(d.indices, (std::vector<std::size_t>{0, 2, 4}));
}

TEST(Sampling, GapFrequenciesUniform) {
  std::mt19937_64 rng(123);
  std::map<std::size_t, int> counts;
  for (int i = 0; i < 10000; ++i) ++counts[draw_clip_indices(40, 3, {1, 2, 3, 4}, rng).gap];
  for (std::size_t g = 1; g <= 4; ++g) EXPECT_NEAR(counts[g] / 10000.0, 0.25, 0.02) << g;
}

TEST(Sampling, ClipsHaveIncreasingStampsAndUniformGaps) {
  auto clip = ramp_clip(20, 8, 8);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    auto c = sample_training_clip(clip, 3, {1, 2, 3, 4, 5, 6}, rng);
    ASSERT_EQ(c.size(), 4u);
    const double gap = c.frames[1].timestamp - c.frames[0].timestamp;
    for (std::size_t t = 1; t < c.size(); ++t) {
      EXPECT_GT(c.frames[t].timestamp, c.frames[t - 1].timestamp);
      EXPECT_NEAR(c.frames[t].timestamp - c.frames[t - 1].timestamp, gap, 1e-9);
    }
  }
}

TEST(Sampling, ShortSequenceRejected) {
  std::mt19937_64 rng(0);
  EXPECT_THROW(draw_clip_indices(9, 3, {1, 3}, rng), DataError);
}
