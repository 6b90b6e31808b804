#include "smdlab/io/checkpoint.hpp"
#include "smdlab/io/config.hpp"
#include "smdlab/io/emit.hpp"
#include "smdlab/io/idx.hpp"
#include "smdlab/io/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace smdlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("smdlab_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const Model m = Model::mlp({3, 4, 1});
  Rng rng(1);
  Vector w = normal_vector(rng, m.param_count());
  w[0] = -0.0;
  w[1] = std::numeric_limits<double>::denorm_min();
  const auto c = io::make_checkpoint(m, Potential::qnorm(1.1), w, 77, 12345);
  const auto dir = scratch("ckpt");
  io::save_checkpoint((dir / "a.ckpt").string(), c);
  const auto back = io::load_checkpoint((dir / "a.ckpt").string(), m.spec_hash());
  EXPECT_TRUE(back == c);
  EXPECT_TRUE(std::signbit(back.w[0]));
  const auto e = io::decode_checkpoint(io::encode_checkpoint(io::make_checkpoint(m, Potential::entropy(), w, 0, 0)));
  EXPECT_TRUE(e.pot.is_entropy());
}

TEST(Checkpoint, CorruptionIsDetected) {
  const Model m = Model::linear(5);
  const auto c = io::make_checkpoint(m, Potential::qnorm(3.0), Vector::LinSpaced(5, -1, 1), 1, 2);
  const auto good = io::encode_checkpoint(c);
  for (std::size_t k : {std::size_t{20}, std::size_t{40}, good.size() - 3}) {
    auto bad = good;
    bad[k] ^= 0x10;
    EXPECT_THROW(io::decode_checkpoint(bad), FormatError) << "byte " << k;
  }
  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(io::decode_checkpoint(magic), FormatError);
  auto trunc = good;
  trunc.pop_back();
  EXPECT_THROW(io::decode_checkpoint(trunc), FormatError);
  EXPECT_THROW(io::decode_checkpoint({good.begin(), good.begin() + 30}), FormatError);
}

TEST(Checkpoint, SpecHashMismatch) {
  const auto c = io::make_checkpoint(Model::linear(4), Potential::qnorm(2.0), Vector::Ones(4), 0, 0);
  const auto bytes = io::encode_checkpoint(c);
  const std::uint64_t other = Model::mlp({4, 1}).spec_hash();
  EXPECT_THROW(io::decode_checkpoint(bytes, other), FormatError);
  EXPECT_NO_THROW(io::decode_checkpoint(bytes, other, true));
  EXPECT_THROW(io::load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST(Checkpoint, LoadedWeightsStartANewRun) {
  io::SyntheticSpec sp;
  sp.n = 4;
  sp.d = 10;
  sp.seed = 5;
  const auto sd = io::generate_synthetic(sp);
  const Potential p = Potential::qnorm(3.0);
  SMDConfig cfg;
  cfg.eta = 1e-3;
  cfg.max_steps = 40;
  cfg.loss_threshold = 0.0;
  const Vector w0 = Vector::Constant(10, 0.01);
  const auto full = train(p, sd.model, LossFn::square(), sd.data, w0, cfg);
  cfg.max_steps = 20;
  const auto half = train(p, sd.model, LossFn::square(), sd.data, w0, cfg);
  const auto dir = scratch("resume");
  io::save_checkpoint((dir / "h.ckpt").string(), io::make_checkpoint(sd.model, p, half.w_final, 0, 20));
  const auto ck = io::load_checkpoint((dir / "h.ckpt").string(), sd.model.spec_hash());
  const auto rest = train(p, sd.model, LossFn::square(), sd.data, ck.w, cfg);
  // 20 steps is a whole number of passes, so the cyclic order lines up
  EXPECT_LE((rest.w_final - full.w_final).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(Config, RoundTrip) {
  const auto c = io::load_config(std::string(SMDLAB_FIXTURES) + "/desk_grid.cfg");
  EXPECT_EQ(c.mirrors.size(), 4u);
  EXPECT_EQ(io::parse_config(io::render_config(c)), c);
  auto d = c;
  d.stopping.relative_threshold.reset();
  d.mirrors[0].pot = Potential::entropy();
  d.dataset.anchor_to_init = true;
  EXPECT_EQ(io::parse_config(io::render_config(d)), d);
}

TEST(Config, Rejections) {
  EXPECT_THROW(io::parse_config(R"({"sed": 1})"), ConfigError);
  EXPECT_THROW(io::parse_config(R"({"mirrors": [{"q": 1.0}]})"), ConfigError);
  EXPECT_THROW(io::parse_config(R"({"mirrors": [{"q": 2, "eta": -1}]})"), ConfigError);
  EXPECT_THROW(io::parse_config(R"({"dataset": {"n": "ten"}})"), ConfigError);
  EXPECT_THROW(io::parse_config("{not json"), ConfigError);
  EXPECT_THROW(io::parse_config(R"({"loss": "hinge"})"), ConfigError);
  EXPECT_THROW(io::load_config("/nonexistent/c.cfg"), IoError);
  const auto c = io::parse_config(R"({"mirrors": [{"q": "entropy"}, {"q": 1.1, "eta": "auto"}]})");
  EXPECT_TRUE(c.mirrors[0].pot.is_entropy());
  EXPECT_FALSE(c.mirrors[1].eta.has_value());
}

TEST(Config, SeedsAreDerivedDeterministically) {
  const auto c = io::parse_config(R"({"seed": 9, "dataset": {"n": 3, "d": 8}, "inits": {"count": 2}})");
  const auto a = io::prepare(c), b = io::prepare(c);
  EXPECT_EQ(a.data.inputs, b.data.inputs);
  EXPECT_EQ(a.data.labels, b.data.labels);
  ASSERT_EQ(a.grid.inits.size(), 2u);
  EXPECT_NE(a.grid.inits[0].seed, a.grid.inits[1].seed);
  auto c2 = c;
  c2.seed = 10;
  EXPECT_NE(io::prepare(c2).data.inputs, a.data.inputs);
}

TEST(Idx, FourSampleFixture) {
  // 6 images of 2x2; labels 3,7,1,3,7,7
  const std::vector<unsigned char> px{0,   255, 0,   0,  10, 20, 30, 40, 1,  1,  1,  1,
                                      255, 0,   0,   51, 5,  5,  5,  5,  9,  9,  9,  9};
  const std::vector<unsigned char> lab{3, 7, 1, 3, 7, 7};
  const auto dir = scratch("idx");
  write_bytes(dir / "img", io::encode_idx_images(2, 2, px));
  write_bytes(dir / "lab", io::encode_idx_labels(lab));
  const auto ds = io::load_idx_subset((dir / "img").string(), (dir / "lab").string(), 4, {3, 7});
  ASSERT_EQ(ds.size(), 4);
  ASSERT_EQ(ds.dim(), 4);
  EXPECT_EQ(ds.labels, (Vector(4) << 1, -1, 1, -1).finished());
  EXPECT_DOUBLE_EQ(ds.inputs(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(ds.inputs(1, 0), 10.0 / 255.0);
  EXPECT_DOUBLE_EQ(ds.inputs(2, 3), 51.0 / 255.0);
  EXPECT_DOUBLE_EQ(ds.inputs(3, 2), 5.0 / 255.0);
  // big-endian header on disk
  const auto raw = io::detail::read_file((dir / "img").string());
  EXPECT_EQ(raw[2], 0x08);
  EXPECT_EQ(raw[3], 0x03);
  EXPECT_EQ(raw[7], 6);
}

TEST(Idx, Rejections) {
  const auto dir = scratch("idxbad");
  write_bytes(dir / "img", io::encode_idx_images(1, 1, {1, 2}));
  write_bytes(dir / "lab", io::encode_idx_labels({0, 1, 1}));
  write_bytes(dir / "lab1", io::encode_idx_labels({0, 0}));
  const auto img = (dir / "img").string();
  EXPECT_THROW(io::load_idx_subset(img, (dir / "lab").string(), 2, {0, 1}), FormatError);
  EXPECT_THROW(io::load_idx_subset(img, (dir / "lab1").string(), 2, {0, 1}), DataError);
  EXPECT_THROW(io::load_idx_subset(img, img, 2, {0, 1}), FormatError);
  EXPECT_THROW(io::load_idx_subset(img, (dir / "lab1").string(), 0, {0, 1}), DataError);
  auto trunc = io::encode_idx_images(2, 2, {1, 2, 3, 4});
  trunc.pop_back();
  EXPECT_THROW(io::parse_idx_images(trunc), FormatError);
}

TEST(Synthetic, DeterministicAndInterpolating) {
  io::SyntheticSpec sp;
  sp.n = 6;
  sp.d = 5;
  sp.hidden = {4};
  sp.seed = 3;
  const auto a = io::generate_synthetic(sp), b = io::generate_synthetic(sp);
  EXPECT_EQ(a.data.inputs, b.data.inputs);
  EXPECT_EQ(a.teacher, b.teacher);
  EXPECT_LE(residuals(a.model, a.teacher, a.data).lpNorm<Eigen::Infinity>(), 0.0);
  sp.d = 1;
  sp.hidden = {};
  EXPECT_THROW(io::generate_synthetic(sp), ConfigError);
}

namespace {

RunCollection two_by_two() {
  RunCollection rc;
  rc.n_inits = 2;
  rc.n_mirrors = 2;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t m = 0; m < 2; ++m) {
      RunRecord r;
      r.init_index = i;
      r.mirror_index = m;
      r.pot = Potential::qnorm(m == 0 ? 2.0 : 3.0);
      r.w0 = Vector::Constant(3, 0.1 * static_cast<double>(i + 1));
      r.result.w_final = Vector::LinSpaced(3, 1.0 / 3.0, static_cast<double>(i + m) + 0.7);
      r.result.converged = r.converged = !(i == 1 && m == 1);
      r.eta = 1.0 / 7.0;
      rc.runs.push_back(r);
    }
  return rc;
}

}  // namespace

TEST(Emit, MatrixCsvParsesBackExactly) {
  const auto rc = two_by_two();
  const auto dm = distance_matrix(rc, Potential::qnorm(3.0), MatrixLayout::ByMirror);
  const auto parsed = io::parse_matrix_csv(io::matrix_csv(dm));
  EXPECT_EQ(parsed.col_labels, dm.col_labels);
  EXPECT_EQ(parsed.row_labels, dm.row_labels);
  EXPECT_EQ(parsed.argmin, dm.argmin);
  for (Eigen::Index r = 0; r < 2; ++r)
    for (Eigen::Index c = 0; c < 2; ++c) {
      if (dm.missing(r, c)) {
        EXPECT_TRUE(std::isnan(parsed.entries(r, c)));
        continue;
      }
      // within one ulp; shortest round-trip text should in fact be exact
      EXPECT_LE(std::abs(parsed.entries(r, c) - dm.entries(r, c)),
                std::nextafter(dm.entries(r, c), INFINITY) - dm.entries(r, c));
    }
  EXPECT_THROW(io::parse_matrix_csv("a,b\n"), FormatError);
  EXPECT_THROW(io::parse_matrix_csv("row,x,argmin\ninit0,1e,0\n"), FormatError);
}

TEST(Emit, WritesAllFiles) {
  const auto rc = two_by_two();
  io::ResultsBundle b;
  b.runs = &rc;
  b.matrices.push_back(distance_matrix(rc, Potential::qnorm(2.0), MatrixLayout::FullCross));
  b.histograms.push_back(histogram(rc.runs[0].result.w_final, 10, 1e-3, "init0/q=2"));
  const auto dir = scratch("emit");
  io::emit_results(b, dir.string());
  EXPECT_TRUE(fs::exists(dir / "results.json"));
  EXPECT_TRUE(fs::exists(dir / "tables.txt"));
  EXPECT_TRUE(fs::exists(dir / "matrix_full-cross_q_2.csv"));
  std::ifstream in(dir / "results.json");
  const auto j = nlohmann::json::parse(in);
  ASSERT_EQ(j["runs"].size(), 4u);
  EXPECT_EQ(j["runs"][0]["eta"].get<double>(), 1.0 / 7.0);
  EXPECT_FALSE(j["runs"][3]["converged"].get<bool>());
  EXPECT_TRUE(j["matrices"][0]["entries"][1][3].is_null());
  EXPECT_EQ(j["histograms"][0]["label"], "init0/q=2");
}

TEST(Emit, EmptyCollection) {
  io::ResultsBundle b;
  const auto dir = scratch("empty");
  io::emit_results(b, dir.string());
  std::ifstream in(dir / "results.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_TRUE(j["runs"].empty());
  EXPECT_TRUE(j["matrices"].empty());
  EXPECT_THROW(io::emit_results(b, "/proc/smdlab_cannot_write_here"), IoError);
}
