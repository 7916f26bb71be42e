#include "unerf/checkpoint.hpp"
#include "unerf/config.hpp"
#include "unerf/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace unerf;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.samples_per_stage = {4, 4};
  c.proposal_width = 8;
  c.nerf_width = 8;
  c.nerf_depth = 2;
  c.bottleneck_width = 4;
  c.color_width = 4;
  c.position_levels = 2;
  c.proposal_levels = 2;
  c.dir_levels = 1;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TEST(Config, WriteParseRoundTrip) {
  TrainConfig c = small_config();
  c.lambda_dist = 0.123456789012345;
  c.use_proposal_loss = false;
  c.distance_curve = DistanceCurve::logarithmic;
  c.seed = 0xfedcba9876543210ULL;
  c.scene = "custom.scene";
  std::stringstream ss;
  write_config(ss, c);
  const TrainConfig back = parse_config(ss);
  EXPECT_EQ(config_text(back), config_text(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.lambda_dist, c.lambda_dist);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.samples_per_stage, c.samples_per_stage);
}

TEST(Config, HashSeesEveryChange) {
  const TrainConfig c = small_config();
  TrainConfig d = c;
  d.anneal_b = 10.0000001;
  EXPECT_NE(config_hash(c), config_hash(d));
  d = c;
  d.samples_per_stage = {4, 4, 4};
  EXPECT_NE(config_hash(c), config_hash(d));
}

TEST(Config, CommentsWhitespaceAndOverlay) {
  std::istringstream is("# header\n  lambda_dist =  0.5   # trailing\n\nsamples_per_stage = 8, 8, 4\noff_axis = false\n");
  const TrainConfig c = parse_config(is);
  EXPECT_EQ(c.lambda_dist, 0.5);
  EXPECT_EQ(c.samples_per_stage, (std::vector<int>{8, 8, 4}));
  EXPECT_FALSE(c.off_axis);
  EXPECT_EQ(c.batch_rays, desk_preset().batch_rays);
}

TEST(Config, Errors) {
  TrainConfig c;
  EXPECT_THROW(set_key(c, "no_such_key", "1"), ConfigError);
  EXPECT_THROW(set_key(c, "batch_rays", "many"), ConfigError);
  EXPECT_THROW(set_key(c, "batch_rays", "12x"), ConfigError);
  EXPECT_THROW(set_key(c, "off_axis", "maybe"), ConfigError);
  EXPECT_THROW(set_key(c, "seed", "-1"), ConfigError);
  EXPECT_THROW(set_key(c, "seed", "18446744073709551616"), ConfigError);
  EXPECT_THROW(set_key(c, "distance_curve", "cubic"), ConfigError);
  std::istringstream missing_eq("lambda_dist 0.5\n");
  EXPECT_THROW(parse_config(missing_eq), ConfigError);
  std::istringstream invalid("t_near = 5\nt_far = 1\n");
  EXPECT_THROW(parse_config(invalid), ConfigError);
  EXPECT_THROW(preset("huge"), ConfigError);
}

TEST(Config, PresetsValidate) {
  EXPECT_NO_THROW(validate(preset("desk")));
  EXPECT_NO_THROW(validate(preset("full")));
  EXPECT_EQ(preset("full").samples_per_stage, (std::vector<int>{64, 64, 32}));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

template <class T>
void checkpoint_round_trip() {
  TrainConfig c = small_config();
  c.seed = 17;
  Model<T> m = make_model<T>(c, 17);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  // values with full mantissas, subnormals and signed zero
  for (T& v : m.nerf.params.values()) v = static_cast<T>(n(rng) * std::exp(n(rng) * 3));
  m.nerf.params.values()[0] = std::numeric_limits<T>::denorm_min();
  m.nerf.params.values()[1] = T(-0.0);
  std::stringstream ss;
  write_checkpoint(ss, m, c, 123);
  const auto back = read_checkpoint<T>(ss);
  EXPECT_EQ(back.step, 123);
  EXPECT_EQ(config_text(back.config), config_text(c));
  EXPECT_EQ(back.model.nerf.params.values(), m.nerf.params.values());
  EXPECT_EQ(back.model.proposal.params.values(), m.proposal.params.values());
  EXPECT_TRUE(std::signbit(back.model.nerf.params.values()[1]));
  std::stringstream again;
  write_checkpoint(again, back.model, back.config, back.step);
  std::stringstream first;
  write_checkpoint(first, m, c, 123);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Checkpoint, RoundTripIsBitExactDouble) { checkpoint_round_trip<double>(); }
TEST(Checkpoint, RoundTripIsBitExactFloat) { checkpoint_round_trip<float>(); }

TEST(Checkpoint, RejectsPrecisionMismatch) {
  const TrainConfig c = small_config();
  std::stringstream ss;
  write_checkpoint(ss, make_model<float>(c, 1), c, 0);
  EXPECT_THROW(read_checkpoint<double>(ss), CheckpointError);
}

TEST(Checkpoint, RejectsTamperedConfig) {
  const TrainConfig c = small_config();
  std::stringstream ss;
  write_checkpoint(ss, make_model<double>(c, 1), c, 0);
  std::string text = ss.str();
  const auto pos = text.find("lambda_dist = ");
  ASSERT_NE(pos, std::string::npos);
  text.insert(pos + 14, "1");
  std::istringstream is(text);
  EXPECT_THROW(read_checkpoint<double>(is), CheckpointError);
}

TEST(Checkpoint, RejectsTruncationAndGarbage) {
  const TrainConfig c = small_config();
  std::stringstream ss;
  write_checkpoint(ss, make_model<double>(c, 1), c, 0);
  const std::string text = ss.str();
  std::istringstream truncated(text.substr(0, text.size() - 40));
  EXPECT_THROW(read_checkpoint<double>(truncated), CheckpointError);
  std::string garbled = text;
  garbled.replace(garbled.size() - 10, 3, "zzz");
  std::istringstream bad(garbled);
  EXPECT_THROW(read_checkpoint<double>(bad), CheckpointError);
  std::istringstream empty("");
  EXPECT_THROW(read_checkpoint<double>(empty), CheckpointError);
}

TEST(Checkpoint, RejectsShapeMismatch) {
  const TrainConfig c = small_config();
  std::stringstream ss;
  write_checkpoint(ss, make_model<double>(c, 1), c, 0);
  std::string text = ss.str();
  const auto pos = text.find("mlp nerf input=");
  ASSERT_NE(pos, std::string::npos);
  text.replace(text.find("width=", pos), 7, "width=9");
  std::istringstream is(text);
  EXPECT_THROW(read_checkpoint<double>(is), CheckpointError);
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

TEST(Ppm, RoundTripQuantizesToBytes) {
  ImageBuffer img(3, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.1, 1.1);
  for (Rgb& p : img.pixels) p = Rgb(u(rng), u(rng), u(rng));
  std::stringstream ss;
  write_ppm(ss, img);
  EXPECT_EQ(ss.str().substr(0, 11), "P6\n3 2\n255\n");
  EXPECT_EQ(ss.str().size(), 11u + 18u);
  const ImageBuffer back = read_ppm(ss);
  ASSERT_EQ(back.pixels.size(), img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(back.pixels[i](c), std::clamp(img.pixels[i](c), 0.0, 1.0), 0.5 / 255 + 1e-12);
  // second trip is exact
  std::stringstream again;
  write_ppm(again, back);
  std::stringstream first;
  write_ppm(first, img);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Ppm, RejectsBadInput) {
  std::istringstream p3("P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(read_ppm(p3), std::runtime_error);
  std::istringstream truncated(std::string("P6\n2 1\n255\n") + std::string(4, 'x'));
  EXPECT_THROW(read_ppm(truncated), std::runtime_error);
  ImageBuffer nan_img(1, 1);
  nan_img.pixels[0](0) = std::nan("");
  std::ostringstream os;
  EXPECT_THROW(write_ppm(os, nan_img), std::invalid_argument);
}

TEST(Depth, RoundTrip) {
  DepthGrid d{3, 2, {0.1, 1.5, 100.0, 2.25, 1e-3, 7.0}};
  std::stringstream ss;
  write_depth(ss, d);
  const DepthGrid back = read_depth(ss);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.height, 2);
  for (std::size_t i = 0; i < d.values.size(); ++i) EXPECT_NEAR(back.values[i], d.values[i], 1e-8 * d.values[i]);
  std::istringstream bad("unerf-depth 1\n2 2\n1 2 3\n");
  EXPECT_THROW(read_depth(bad), std::runtime_error);
}
