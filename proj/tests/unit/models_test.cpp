#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <span>

#include "prowave/audio.hpp"
#include "prowave/error.hpp"
#include "prowave/models.hpp"
#include "reference.hpp"
#include "reference_net.hpp"

namespace ad = prowave::ad;
namespace m = prowave::models;
using prowave::Rng;
using prowave::Shape;
using prowave::Tensor;

namespace {

m::LayerSpec layer(m::LayerKind kind, std::size_t k = 0, std::size_t s = 1, std::size_t in = 0, std::size_t out = 0) {
  m::LayerSpec l;
  l.kind = kind;
  l.kernel = k;
  l.stride = s;
  l.in_channels = in;
  l.out_channels = out;
  return l;
}

// Two-level encoder/decoder on 64 samples with both kinds of skip.
m::NetworkSpec tiny_autoencoder() {
  using K = m::LayerKind;
  m::NetworkSpec spec;
  spec.role = m::Role::autoencoder;
  spec.input_shape = {64, 1};
  spec.layers = {layer(K::conv, 5, 2, 1, 2),  layer(K::relu), layer(K::conv, 5, 2, 2, 3),  layer(K::relu),
                 layer(K::tconv, 5, 2, 3, 2), layer(K::relu), layer(K::tconv, 5, 2, 2, 1), layer(K::tanh)};
  spec.skips = {{2, 4}, {0, 6}};
  return spec;
}

m::NetworkSpec tiny_critic(std::size_t shuffle_n) {
  using K = m::LayerKind;
  m::NetworkSpec spec;
  spec.role = m::Role::discriminator;
  spec.input_shape = {32, 2};
  auto ps = layer(K::phase_shuffle);
  ps.shuffle_n = shuffle_n;
  auto rs = layer(K::reshape);
  rs.target = {16};
  spec.layers = {layer(K::conv, 5, 2, 2, 3), layer(K::lrelu), ps, layer(K::conv, 5, 2, 3, 2), layer(K::lrelu),
                 rs, layer(K::dense, 0, 1, 16, 1)};
  return spec;
}

m::ModelParams randomized(const m::NetworkSpec& spec, Rng& rng, double scale) {
  auto p = m::init_params(spec, rng);
  for (auto& [name, t] : p) t = reference::random_tensor(t.shape(), rng, scale);
  return p;
}

std::vector<std::size_t> lengths(const std::vector<Shape>& trace, m::LayerKind kind, const m::NetworkSpec& spec) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == kind) out.push_back(trace[i + 1][0]);
  }
  return out;
}

double correlation(std::span<const float> a, std::span<const float> b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

class ShapeSchedule : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ShapeSchedule, GeneratorLengthsAndChannels) {
  const std::size_t d = GetParam();
  const auto spec = m::build_generator(d);
  const auto trace = m::shape_trace(spec);
  EXPECT_EQ(trace.front(), (Shape{100}));
  EXPECT_EQ(trace[2], (Shape{16, 16 * d}));
  EXPECT_EQ(lengths(trace, m::LayerKind::tconv, spec), (std::vector<std::size_t>{64, 256, 1024, 4096, 16384}));
  std::vector<std::size_t> channels;
  for (const auto& l : spec.layers) {
    if (l.kind == m::LayerKind::tconv) {
      channels.push_back(l.out_channels);
      EXPECT_EQ(l.kernel, 25u);
      EXPECT_EQ(l.stride, 4u);
    }
  }
  EXPECT_EQ(channels, (std::vector<std::size_t>{8 * d, 4 * d, 2 * d, d, 1}));
  EXPECT_EQ(trace.back(), (Shape{16384, 1}));
  EXPECT_EQ(spec.layers.back().kind, m::LayerKind::tanh);
}

TEST_P(ShapeSchedule, DiscriminatorLengthsAndChannels) {
  const std::size_t d = GetParam();
  const auto spec = m::build_discriminator(d, 2);
  const auto trace = m::shape_trace(spec);
  EXPECT_EQ(trace.front(), (Shape{16384, 1}));
  EXPECT_EQ(lengths(trace, m::LayerKind::conv, spec), (std::vector<std::size_t>{4096, 1024, 256, 64, 16}));
  std::vector<std::size_t> channels;
  for (const auto& l : spec.layers) {
    if (l.kind == m::LayerKind::conv) channels.push_back(l.out_channels);
  }
  EXPECT_EQ(channels, (std::vector<std::size_t>{d, 2 * d, 4 * d, 8 * d, 16 * d}));
  std::size_t shuffles = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != m::LayerKind::phase_shuffle) continue;
    ++shuffles;
    EXPECT_EQ(spec.layers[i - 1].kind, m::LayerKind::lrelu);
    EXPECT_EQ(spec.layers[i].shuffle_n, 2u);
  }
  EXPECT_EQ(shuffles, 4u);
  EXPECT_EQ(trace.back(), (Shape{1}));
}

TEST_P(ShapeSchedule, AutoencoderBottleneckAndSkips) {
  const std::size_t d = GetParam();
  const auto spec = m::build_autoencoder(d);
  const auto trace = m::shape_trace(spec);
  EXPECT_EQ(lengths(trace, m::LayerKind::conv, spec), (std::vector<std::size_t>{4096, 1024, 256, 64}));
  EXPECT_EQ(lengths(trace, m::LayerKind::tconv, spec), (std::vector<std::size_t>{256, 1024, 4096, 16384}));
  EXPECT_EQ(trace[8], (Shape{64, 8 * d}));
  EXPECT_EQ(trace.back(), (Shape{16384, 1}));
  ASSERT_EQ(spec.skips.size(), 4u);
  for (const auto& s : spec.skips) {
    EXPECT_EQ(spec.layers[s.target].kind, m::LayerKind::tconv);
    EXPECT_EQ(trace[s.source], trace[s.target + 1]);
  }
}

INSTANTIATE_TEST_SUITE_P(ModelDims, ShapeSchedule, ::testing::Values(1, 2, 4, 64));

TEST(Builders, CanonicalWidthBottleneckIs64By512) {
  EXPECT_EQ(m::shape_trace(m::build_autoencoder(64))[8], (Shape{64, 512}));
}

TEST(Builders, ZeroModelDimIsRejected) {
  EXPECT_THROW(m::build_generator(0), prowave::ParameterError);
  EXPECT_THROW(m::build_discriminator(0, 2), prowave::ParameterError);
  EXPECT_THROW(m::build_autoencoder(0), prowave::ParameterError);
}

TEST(Builders, GeneratorNoiseDimensionIsFixed) {
  EXPECT_THROW(m::build_generator(1, 64), prowave::ParameterError);
  auto spec = m::build_generator(1);
  spec.input_shape = {64};
  EXPECT_THROW(m::shape_trace(spec), prowave::ShapeError);
}

TEST(Builders, SkipsOnlyInAutoencoders) {
  auto spec = tiny_critic(0);
  spec.skips = {{1, 1}};
  EXPECT_THROW(m::shape_trace(spec), prowave::ShapeError);
}

TEST(Builders, SkipBetweenDifferentShapesIsRejected) {
  auto spec = tiny_autoencoder();
  spec.skips = {{0, 4}};
  EXPECT_THROW(m::shape_trace(spec), prowave::ShapeError);
}

TEST(Builders, ShapeErrorNamesTheLayer) {
  auto spec = tiny_autoencoder();
  spec.layers[2].in_channels = 5;
  try {
    m::shape_trace(spec);
    FAIL() << "expected ShapeError";
  } catch (const prowave::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos) << e.what();
  }
}

TEST(Params, InitMatchesSpecShapes) {
  Rng rng(3);
  const auto spec = m::build_generator(1);
  const auto p = m::init_params(spec, rng);
  EXPECT_EQ(p.size(), 12u);
  EXPECT_EQ(p.at("0.weight").shape(), (Shape{100, 256}));
  EXPECT_EQ(p.at("3.weight").shape(), (Shape{25, 16, 8}));
  EXPECT_EQ(p.at("3.bias").shape(), (Shape{8}));
  for (float v : p.at("3.bias").data()) EXPECT_EQ(v, 0.0f);
  double ss = 0;
  for (float v : p.at("0.weight").data()) ss += double(v) * v;
  EXPECT_NEAR(std::sqrt(ss / p.at("0.weight").size()), 0.02, 0.002);
  EXPECT_NO_THROW(m::check_params(spec, p));
}

TEST(Params, CheckRejectsMissingExtraAndMisshapen) {
  Rng rng(3);
  const auto spec = tiny_autoencoder();
  auto p = m::init_params(spec, rng);
  auto missing = p;
  missing.erase("2.bias");
  EXPECT_THROW(m::check_params(spec, missing), prowave::ShapeError);
  auto extra = p;
  extra.emplace("1.weight", Tensor({1}));
  EXPECT_THROW(m::check_params(spec, extra), prowave::ShapeError);
  auto bad = p;
  bad.at("0.weight") = Tensor({5, 1, 3});
  EXPECT_THROW(m::check_params(spec, bad), prowave::ShapeError);
}

TEST(PhaseShuffle, ZeroIsIdentity) {
  Rng rng(1);
  const auto x = reference::random_tensor({2, 8, 3}, rng);
  EXPECT_EQ(m::phase_shuffle(ad::Var(x), 0, rng).value(), x);
}

TEST(PhaseShuffle, LengthMustExceedN) {
  Rng rng(1);
  EXPECT_THROW(m::phase_shuffle(ad::Var(Tensor({1, 2, 1})), 2, rng), prowave::ParameterError);
  EXPECT_NO_THROW(m::phase_shuffle(ad::Var(Tensor({1, 3, 1})), 2, rng));
}

TEST(PhaseShuffle, EachChannelIsAMirroredShiftWithinRange) {
  Rng rng(9);
  const long B = 3, L = 16, C = 4, n = 2;
  const auto x = reference::random_tensor({3, 16, 4}, rng);
  const auto y = m::phase_shuffle(ad::Var(x), n, rng).value();
  const auto xd = reference::to_double(x);
  for (long b = 0; b < B; ++b)
    for (long c = 0; c < C; ++c) {
      int matches = 0;
      for (long k = -n; k <= n; ++k) {
        bool same = true;
        for (long i = 0; i < L; ++i) {
          same &= y[(b * L + i) * C + c] == float(xd[(b * L + reference::mirror_index(i + k, L)) * C + c]);
        }
        matches += same;
      }
      EXPECT_EQ(matches, 1) << "batch " << b << " channel " << c;
    }
}

TEST(PhaseShuffle, ShiftsAreDrawnUniformly) {
  Rng rng(5);
  Tensor x({1, 8, 1}, {0, 1, 2, 3, 4, 5, 6, 7});
  std::map<float, int> counts;
  for (int i = 0; i < 5000; ++i) ++counts[m::phase_shuffle(ad::Var(x), 2, rng).value()[3]];
  ASSERT_EQ(counts.size(), 5u);
  for (const auto& [v, c] : counts) EXPECT_NEAR(c, 1000, 150) << "value " << v;
}

TEST(Forward, GeneratorOnZeroNoiseIsFiniteAndBounded) {
  Rng rng(11);
  const auto spec = m::build_generator(1);
  const auto p = m::init_params(spec, rng);
  const auto y = m::evaluate(spec, p, Tensor({2, 100}));
  EXPECT_EQ(y.shape(), (Shape{2, 16384, 1}));
  EXPECT_TRUE(y.all_finite());
  for (float v : y.data()) EXPECT_LE(std::abs(v), 1.0f);
}

TEST(Forward, GeneratorStaysBoundedForLargeWeights) {
  Rng rng(12);
  const auto spec = m::build_generator(1);
  const auto p = randomized(spec, rng, 3.0);
  const auto y = m::evaluate(spec, p, reference::random_tensor({1, 100}, rng));
  EXPECT_TRUE(y.all_finite());
  for (float v : y.data()) EXPECT_LE(std::abs(v), 1.0f);
}

TEST(Forward, GeneratorIsDeterministicForAFixedSeed) {
  auto run = [] {
    Rng rng(42);
    const auto spec = m::build_generator(1);
    const auto p = m::init_params(spec, rng);
    return m::evaluate(spec, p, reference::random_tensor({1, 100}, rng));
  };
  EXPECT_EQ(run(), run());
}

TEST(Forward, DiscriminatorScoresAGeneratedClip) {
  Rng rng(13);
  const auto g = m::build_generator(1);
  const auto d = m::build_discriminator(1, 2);
  const auto clip = m::evaluate(g, m::init_params(g, rng), reference::random_tensor({1, 100}, rng));
  const auto dp = m::init_params(d, rng);
  const auto score = m::evaluate(d, dp, clip, &rng);
  EXPECT_EQ(score.shape(), (Shape{1, 1}));
  EXPECT_TRUE(score.all_finite());
}

TEST(Forward, DiscriminatorWithoutShuffleIsDeterministic) {
  Rng rng(14);
  const auto d = m::build_discriminator(1, 0);
  const auto dp = randomized(d, rng, 0.2);
  const auto x = reference::random_tensor({2, 16384, 1}, rng);
  Rng a(1), b(2);
  EXPECT_EQ(m::evaluate(d, dp, x, &a), m::evaluate(d, dp, x, &b));
}

TEST(Forward, RejectsWrongInputShape) {
  Rng rng(1);
  const auto spec = tiny_autoencoder();
  const auto p = m::init_params(spec, rng);
  EXPECT_THROW(m::evaluate(spec, p, Tensor({1, 63, 1})), prowave::ShapeError);
  EXPECT_THROW(m::evaluate(spec, p, Tensor({64, 1})), prowave::ShapeError);
}

TEST(Forward, MissingParameterNamesTheLayer) {
  Rng rng(1);
  const auto spec = tiny_autoencoder();
  auto p = m::init_params(spec, rng);
  p.erase("4.weight");
  try {
    m::evaluate(spec, p, Tensor({1, 64, 1}));
    FAIL() << "expected ShapeError";
  } catch (const prowave::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 4"), std::string::npos) << e.what();
  }
}

TEST(Forward, MatchesDoublePrecisionReference) {
  Rng rng(21);
  const auto spec = tiny_autoencoder();
  const auto p = randomized(spec, rng, 0.4);
  const auto x = reference::random_tensor({3, 64, 1}, rng);
  const auto got = m::evaluate(spec, p, x);
  const auto want = reference::network(spec, reference::to_double(p), reference::to_double(x), 3);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5) << i;
}

TEST(Forward, ShuffledCriticMatchesReferenceWithSameDraws) {
  Rng rng(22);
  const auto spec = tiny_critic(2);
  const auto p = randomized(spec, rng, 0.4);
  const auto x = reference::random_tensor({4, 32, 2}, rng);
  Rng a(77), b(77);
  const auto got = m::evaluate(spec, p, x, &a);
  const auto want = reference::network(spec, reference::to_double(p), reference::to_double(x), 4, &b);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5) << i;
}

TEST(Forward, ZeroDecoderGivesTanhOfInput) {
  Rng rng(23);
  const auto spec = m::build_autoencoder(1);
  auto p = randomized(spec, rng, 0.3);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != m::LayerKind::tconv) continue;
    p.at(m::weight_name(i)) = Tensor(p.at(m::weight_name(i)).shape());
    p.at(m::bias_name(i)) = Tensor(p.at(m::bias_name(i)).shape());
  }
  const auto x = reference::random_tensor({2, 16384, 1}, rng, 0.9);
  const auto y = m::evaluate(spec, p, x);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(y[i], std::tanh(double(x[i])), 1e-6) << i;
}

TEST(Forward, ZeroDecoderIsLinearInSkipsBeforeTanh) {
  Rng rng(24);
  auto spec = tiny_autoencoder();
  spec.layers.pop_back();
  auto p = randomized(spec, rng, 0.5);
  for (std::string name : {"4.weight", "4.bias", "6.weight", "6.bias"}) p.at(name) = Tensor(p.at(name).shape());
  const auto x1 = reference::random_tensor({1, 64, 1}, rng);
  const auto x2 = reference::random_tensor({1, 64, 1}, rng);
  Tensor sum(x1.shape());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = x1[i] + x2[i];
  const auto y1 = m::evaluate(spec, p, x1), y2 = m::evaluate(spec, p, x2), ys = m::evaluate(spec, p, sum);
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_NEAR(ys[i], y1[i] + y2[i], 1e-5);
}

TEST(Gradients, AutoencoderParamsMatchFiniteDifferences) {
  Rng rng(31);
  const auto spec = tiny_autoencoder();
  const auto p = randomized(spec, rng, 0.4);
  const auto x = reference::random_tensor({2, 64, 1}, rng);
  const auto w = reference::random_tensor({2, 64, 1}, rng);

  ad::Tape tape;
  const auto bound = m::bind_params(p, &tape);
  const auto y = m::forward(spec, bound, ad::Var(x), nullptr);
  const auto grads = tape.backward(ad::sum_all(ad::mul(y, ad::Var(w))));

  const auto pd = reference::to_double(p);
  const auto xd = reference::to_double(x), wd = reference::to_double(w);
  for (const auto& [name, value] : pd) {
    auto f = [&, name = name](const reference::Vec& v) {
      auto q = pd;
      q.at(name) = v;
      return reference::dot(reference::network(spec, q, xd, 2), wd);
    };
    const auto numeric = reference::central_differences(f, value, 1e-6);
    const auto analytic = reference::to_double(grads.at(bound.at(name)));
    EXPECT_LT(reference::max_relative_error(analytic, numeric), 1e-3) << name;
  }
}

TEST(Gradients, ShuffledCriticInputMatchesFiniteDifferences) {
  Rng rng(32);
  const auto spec = tiny_critic(2);
  const auto p = randomized(spec, rng, 0.4);
  const auto x = reference::random_tensor({3, 32, 2}, rng);

  ad::Tape tape;
  const auto xv = tape.leaf(x);
  Rng draws(5);
  const auto y = m::forward(spec, m::bind_params(p, nullptr), xv, &draws);
  const auto grads = tape.backward(ad::sum_all(y));

  const auto pd = reference::to_double(p);
  auto f = [&](const reference::Vec& v) {
    Rng same(5);
    const auto out = reference::network(spec, pd, v, 3, &same);
    double s = 0;
    for (double o : out) s += o;
    return s;
  };
  const auto numeric = reference::central_differences(f, reference::to_double(x), 1e-6);
  EXPECT_LT(reference::max_relative_error(reference::to_double(grads.at(xv)), numeric), 1e-3);
}

TEST(Gradients, AutoencoderOverfitsOneClip) {
  Rng rng(33);
  const auto spec = m::build_autoencoder(1);
  auto p = m::init_params(spec, rng);
  const auto clip = prowave::audio::fit_length(prowave::audio::synth_fixture(prowave::audio::FixtureKind::chirp, 4));
  const Tensor x({1, 16384, 1}, clip.samples);
  std::map<std::string, std::pair<Tensor, Tensor>> moments;
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999;
  for (int step = 1; step <= 200; ++step) {
    ad::Tape tape;
    const auto bound = m::bind_params(p, &tape);
    const auto diff = ad::sub(m::forward(spec, bound, ad::Var(x), nullptr), ad::Var(x));
    const auto grads = tape.backward(ad::reduce_mean(ad::mul(diff, diff)));
    for (auto& [name, t] : p) {
      const auto& g = grads.at(bound.at(name));
      auto& [mo, ve] = moments.try_emplace(name, Tensor(t.shape()), Tensor(t.shape())).first->second;
      for (std::size_t i = 0; i < t.size(); ++i) {
        mo[i] = float(b1 * mo[i] + (1 - b1) * g[i]);
        ve[i] = float(b2 * ve[i] + (1 - b2) * double(g[i]) * g[i]);
        const double mh = mo[i] / (1 - std::pow(b1, step)), vh = ve[i] / (1 - std::pow(b2, step));
        t[i] = float(t[i] - lr * mh / (std::sqrt(vh) + 1e-8));
      }
    }
  }
  const auto y = m::evaluate(spec, p, x);
  EXPECT_GT(correlation(y.data(), x.data()), 0.9);
}

TEST(Serialization, TextRoundTrip) {
  for (const auto& spec : {m::build_generator(2), m::build_discriminator(1, 2), m::build_autoencoder(4),
                           tiny_critic(1), tiny_autoencoder()}) {
    EXPECT_EQ(m::network_from_text(m::to_text(spec)), spec);
  }
}

TEST(Serialization, MalformedLinesAreReported) {
  EXPECT_THROW(m::network_from_text("role generator\nlayer wobble\n"), prowave::FormatError);
  EXPECT_THROW(m::network_from_text("role critic\n"), prowave::FormatError);
  EXPECT_THROW(m::network_from_text("input 4 1\n"), prowave::FormatError);
  try {
    m::network_from_text("role autoencoder\ninput 8 1\nlayer conv 5 x 1 1\n");
    FAIL();
  } catch (const prowave::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, EmptyStageListIsRejected) { EXPECT_THROW(m::Pipeline({}), prowave::ParameterError); }

TEST(Pipeline, SingleGeneratorEqualsPlainOutput) {
  Rng rng(41);
  const auto g = m::build_generator(1);
  const auto gp = m::init_params(g, rng);
  const auto z = reference::random_tensor({2, 100}, rng);
  const m::Pipeline pipe({{g, gp}});
  EXPECT_EQ(pipe.run(z), m::evaluate(g, gp, z));
}

TEST(Pipeline, GeneratorThenAutoencoderKeepsIntermediates) {
  Rng rng(42);
  const auto g = m::build_generator(1);
  const auto a = m::build_autoencoder(1);
  const auto gp = m::init_params(g, rng);
  const auto ap = m::init_params(a, rng);
  const auto z = reference::random_tensor({1, 100}, rng);
  const m::Pipeline pipe({{g, gp}, {a, ap}});
  const auto outs = pipe.run_all(z);
  ASSERT_EQ(outs.size(), 2u);
  EXPECT_EQ(outs[0], m::evaluate(g, gp, z));
  EXPECT_EQ(outs[1], m::evaluate(a, ap, outs[0]));
  EXPECT_EQ(outs[1].shape(), (Shape{1, 16384, 1}));
}

TEST(Pipeline, IncompatibleStagesAreRejected) {
  Rng rng(43);
  const auto g = m::build_generator(1);
  const auto gp = m::init_params(g, rng);
  EXPECT_THROW(m::Pipeline({{g, gp}, {g, gp}}), prowave::ShapeError);
  const auto a = tiny_autoencoder();
  EXPECT_THROW(m::Pipeline({{g, gp}, {a, m::init_params(a, rng)}}), prowave::ShapeError);
  EXPECT_THROW(m::Pipeline({{a, m::init_params(a, rng)}}), prowave::ShapeError);
}
