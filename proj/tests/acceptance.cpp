// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>

#include "hemb/audit.hpp"
#include "hemb/config.hpp"
#include "hemb/data_io.hpp"
#include "hemb/errors.hpp"
#include "hemb/experiment.hpp"
#include "hemb/gradcheck.hpp"
#include "hemb/lgp.hpp"
#include "hemb/model.hpp"
#include "hemb/ssm.hpp"
#include "off_fuzz.hpp"
#include "reference/reference.hpp"
#include "test_util.hpp"

using namespace hemb;
using Clock = std::chrono::steady_clock;

namespace {

const std::filesystem::path kFixtures = HEMB_FIXTURE_DIR;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome ssm_oracle() {
  const auto start = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 1 + rng.below(8), n = 1 + rng.below(16), l = 1 + rng.below(64);
    ContinuousLti s;
    s.channels = c;
    s.states = n;
    for (std::size_t i = 0; i < c * n; ++i) {
      s.a.push_back(-std::exp(rng.uniform(-2.0, 1.5)));
      s.b.push_back(rng.normal());
      s.c.push_back(rng.normal());
    }
    for (std::size_t i = 0; i < c; ++i) {
      s.delta.push_back(std::exp(rng.uniform(-4.0, 0.0)));
      s.d.push_back(rng.normal());
    }
    const DiscreteLti sys = discretize(s);
    const Tensor x = testutil::random_tensor({c, l}, rng);
    worst = std::max(worst,
                     testutil::max_abs_diff(recurrent_scan(x, sys), lti_conv_apply(x, lti_conv_kernel(sys, l), sys.d)));
  }
  const double t = seconds_since(start);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max-abs %.3e (< 1e-10), %.2f s (< 10 s)", worst, t);
  return {worst < 1e-10 && t < 10.0, buf};
}

Outcome zoh_precision() {
  using big = boost::multiprecision::cpp_bin_float_50;
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 5000; ++trial) {
    const double delta = std::pow(10.0, rng.uniform(-10.0, 1.0));
    const double a = -std::pow(10.0, rng.uniform(-3.0, 1.0));
    const double b = rng.normal();
    const ZohStep got = zoh_discretize(a, b, delta);
    const big e = boost::multiprecision::exp(big(delta) * big(a));
    const double a_bar = static_cast<double>(e);
    const double b_bar = static_cast<double>((e - 1) / big(a) * big(b));
    worst = std::max({worst, std::abs(got.a_bar - a_bar), std::abs(got.b_bar - b_bar)});
  }
  double jump = 0.0;
  for (double a : {-1.0, -0.01, -3.7, -10.0}) {
    const double at = kZohSeriesThreshold / -a;
    const double lo = zoh_discretize(a, 1.0, std::nextafter(at, 0.0)).b_bar;
    const double hi = zoh_discretize(a, 1.0, std::nextafter(at, 1.0)).b_bar;
    jump = std::max(jump, std::abs(lo - hi));
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max-abs vs 50-digit %.3e (< 1e-12), switch jump %.3e (< 1e-9)", worst, jump);
  return {worst < 1e-12 && jump < 1e-9, buf};
}

Outcome gradient_suite() {
  const auto start = Clock::now();
  const auto rows = run_gradcheck(0, 5);
  const double t = seconds_since(start);
  bool pass = t < 120.0;
  std::string detail;
  for (const auto& row : rows) {
    pass = pass && row.passed();
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s %.1e; ", row.module.c_str(), row.worst);
    detail += buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f s (< 120 s)", t);
  return {pass && rows.size() == 7, detail + buf};
}

Outcome invariance_suite() {
  Rng rng(404);
  // (a) translation and uniform scale of the patch centers.
  double lgp_similarity = 0.0;
  double lgp_permutation = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto centers = testutil::random_points(32, rng, 10.0);
    const Tensor tokens = testutil::random_tensor({33, 16}, rng);
    LgpParams params = LgpParams::init(16, rng);
    for (double& v : params.beta.leaf_data()) v = 0.3 * rng.normal();
    const LgpGeometry geo = make_lgp_geometry(centers, 8);
    const Tensor base = lgp_forward(tokens, geo, params);
    const double s = std::pow(10.0, rng.uniform(0.0, 3.0));
    const Point3 t{rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0)};
    std::vector<Point3> moved = centers;
    for (auto& p : moved)
      for (int d = 0; d < 3; ++d) p[d] = s * p[d] + t[d];
    lgp_similarity =
        std::max(lgp_similarity, testutil::max_abs_diff(lgp_forward(tokens, make_lgp_geometry(moved, 8), params), base));
    // (b) neighbor order inside each neighborhood.
    LgpGeometry shuffled = geo;
    std::vector<double> w = testutil::values(geo.weights);
    for (std::size_t i = 0; i < geo.num_centers(); ++i)
      for (std::size_t j = geo.k - 1; j > 0; --j) {
        const std::size_t r = rng.below(j + 1);
        std::swap(shuffled.neighbor_idx[i * geo.k + j], shuffled.neighbor_idx[i * geo.k + r]);
        std::swap(w[i * geo.k + j], w[i * geo.k + r]);
      }
    shuffled.weights = Tensor(geo.weights.shape(), w);
    lgp_permutation = std::max(lgp_permutation, testutil::max_abs_diff(lgp_forward(tokens, shuffled, params), base));
  }
  // (c) end-to-end point order.
  double model_permutation = 0.0;
  {
    ModelConfig config;
    const ModelParams params = ModelParams::init(config);
    NoGradGuard guard;
    for (std::size_t cls = 0; cls < kSyntheticClasses; ++cls) {
      PointCloud cloud = generate_synthetic(cls, 256, 500 + cls, true);
      const Tensor base = forward(cloud, params);
      for (std::size_t i = cloud.size() - 1; i > 0; --i) std::swap(cloud.points[i], cloud.points[rng.below(i + 1)]);
      model_permutation = std::max(model_permutation, testutil::max_abs_diff(forward(cloud, params), base));
    }
  }
  // (d) patch normalization.
  double centroid = 0.0, norm = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    auto patch = testutil::random_points(4 + rng.below(60), rng, std::pow(10.0, rng.uniform(0.0, 3.0)));
    for (auto& p : patch) p[0] += 42.0;
    const auto out = normalize_patch(patch);
    Point3 mu{0, 0, 0};
    double ms = 0.0;
    for (const auto& p : out) {
      for (int d = 0; d < 3; ++d) mu[d] += p[d] / double(out.size());
      ms += (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / double(out.size());
    }
    centroid = std::max({centroid, std::abs(mu[0]), std::abs(mu[1]), std::abs(mu[2])});
    norm = std::max(norm, std::abs(ms - 1.0));
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "(a) %.2e < 1e-6, (b) %.2e < 1e-12, (c) %.2e < 1e-9, (d) centroid %.2e < 1e-9, norm %.2e < 1e-4",
                lgp_similarity, lgp_permutation, model_permutation, centroid, norm);
  return {lgp_similarity < 1e-6 && lgp_permutation < 1e-12 && model_permutation < 1e-9 && centroid < 1e-9 &&
              norm < 1e-4,
          buf};
}

Outcome parameter_deltas() {
  const ParamAudit audit = count_params(ModelConfig::paper());
  char buf[160];
  std::snprintf(buf, sizeof(buf), "CoFE-added %zu in [25000, 35000], geometric-path delta %lld == 0", audit.cofe_delta,
                audit.geometry_delta);
  return {audit.cofe_delta >= 25000 && audit.cofe_delta <= 35000 && audit.geometry_delta == 0, buf};
}

Outcome reference_equivalence() {
  Rng rng(606);
  double lgp_err = 0.0, cofe_err = 0.0, bissm_err = 0.0;
  auto perturb = [&](const ParamList& list) {
    for (const auto& p : list)
      if (!p.name.ends_with(".a_log")) {
        Tensor t = p.tensor;
        for (double& v : t.leaf_data()) v += 0.2 * rng.normal();
      }
  };
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t l = 8 + rng.below(24), c = 4 * (1 + rng.below(4)), k = 2 + rng.below(7);
    {
      LgpParams p = LgpParams::init(c, rng);
      ParamList list;
      p.collect("lgp", list);
      perturb(list);
      const auto centers = testutil::random_points(l, rng);
      const LgpGeometry geo = make_lgp_geometry(centers, k);
      const Tensor tokens = testutil::random_tensor({l + 1, c}, rng);
      lgp_err = std::max(lgp_err, ref::max_abs_diff(lgp_forward(tokens, geo, p), ref::lgp(ref::from_tensor(tokens), geo, p)));
    }
    {
      const std::size_t b = 1 + rng.below(3);
      CofeParams p = CofeParams::init(c, 4, rng);
      ParamList list;
      p.collect("cofe", list);
      perturb(list);
      const Tensor x = testutil::random_tensor({b, c, l}, rng);
      cofe_err = std::max(cofe_err, ref::max_abs_diff(cofe_forward(x, p), ref::cofe(testutil::values(x), b, c, l, p)));
    }
    {
      const std::size_t b = 1 + rng.below(2);
      BissmParams p = BissmParams::init(c, 1 + rng.below(16), 4, {}, rng);
      ParamList list;
      p.collect("bissm", list);
      perturb(list);
      const Tensor x = testutil::random_tensor({b, c, l}, rng);
      bissm_err = std::max(bissm_err,
                           ref::max_abs_diff(bissm_forward(x, p), ref::bissm_batch(testutil::values(x), b, c, l, p)));
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max-abs lgp %.2e, cofe %.2e, bissm %.2e (< 1e-12)", lgp_err, cofe_err, bissm_err);
  return {lgp_err < 1e-12 && cofe_err < 1e-12 && bissm_err < 1e-12, buf};
}

struct TrainingRun {
  std::string csv;
  double final_test_acc = 0.0;
  double seconds = 0.0;
};

TrainingRun train_default(const RunConfig& config) {
  const auto start = Clock::now();
  const auto train = prepare_all(load_split(config, Split::train), config.model);
  const auto test = prepare_all(load_split(config, Split::test), config.model);
  ModelParams params = ModelParams::init(config.model);
  TrainingRun run;
  run.csv = metrics_csv_header();
  fit(params, train, test, config, [&](const EpochMetrics& m) {
    run.csv += metrics_csv_row(m);
    run.final_test_acc = m.test_acc;
    std::fprintf(stderr, "  epoch %zu  loss %.4f  test %.4f\n", m.epoch, m.train_loss, m.test_acc);
  });
  run.seconds = seconds_since(start);
  return run;
}

Outcome desk_training() {
  const RunConfig config = RunConfig::defaults();
  const TrainingRun first = train_default(config);
  const TrainingRun second = train_default(config);
  const bool shape_ok = config.model.depth == 4 && config.model.dim == 64 && config.model.num_groups == 32 &&
                        config.model.group_size == 16 && config.train_per_class == 200 &&
                        config.test_per_class == 50 && config.num_points == 256;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "test OA %.4f (>= 0.90) after %zu epochs (<= 50), runs %.0f s / %.0f s (< 1800 s), %s",
                first.final_test_acc, config.optimizer.epochs, first.seconds, second.seconds,
                first.csv == second.csv ? "CSV identical" : "CSV differs");
  return {shape_ok && first.final_test_acc >= 0.90 && config.optimizer.epochs <= 50 && first.seconds < 1800.0 &&
              second.seconds < 1800.0 && first.csv == second.csv,
          buf};
}

Outcome parser_robustness() {
  const std::vector<std::string> corpus{testutil::read_file(kFixtures / "tetrahedron.off"),
                                        testutil::read_file(kFixtures / "fused_header.off"),
                                        testutil::read_file(kFixtures / "quad_cube.off")};
  const auto stats = testutil::fuzz_off(corpus, 10000, 808);
  bool golden = false;
  try {
    const Mesh split = load_off(kFixtures / "tetrahedron.off");
    const Mesh fused = load_off(kFixtures / "fused_header.off");
    const Mesh quads = load_off(kFixtures / "quad_cube.off");
    golden = split.vertices.size() == 4 && split.faces.size() == 4 && fused.vertices.size() == 4 &&
             fused.faces.size() == 4 && quads.vertices.size() == 8 && quads.faces.size() == 12;
  } catch (const std::exception&) {
    golden = false;
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%zu mutants: %zu accepted, %zu rejected, %zu unexpected; golden fixtures %s",
                stats.runs, stats.accepted, stats.rejected, stats.unexpected, golden ? "ok" : "wrong");
  return {stats.runs == 10000 && stats.unexpected == 0 && golden, buf};
}

Outcome checkpoint_round_trip() {
  std::size_t identical = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig c;
    c.seed = seed;
    c.depth = 1 + seed % 3;
    c.use_cofe = seed % 2 == 0;
    c.head_pool_concat = seed % 4 == 1;
    const ModelParams params = ModelParams::init(c);
    const Checkpoint ck{"seed = " + std::to_string(seed) + "\n", params.parameters()};
    std::ostringstream out(std::ios::binary);
    write_checkpoint(out, ck);
    std::istringstream in(out.str(), std::ios::binary);
    const Checkpoint back = read_checkpoint(in);
    bool same = back.config == ck.config && back.tensors.size() == ck.tensors.size();
    for (std::size_t i = 0; same && i < ck.tensors.size(); ++i) {
      const Tensor& a = ck.tensors[i].tensor;
      const Tensor& b = back.tensors[i].tensor;
      same = back.tensors[i].name == ck.tensors[i].name && a.shape() == b.shape() &&
             std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
    }
    identical += same;
  }
  ModelConfig c;
  c.depth = 1;
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, Checkpoint{"x", ModelParams::init(c).parameters()});
  const std::string bytes = out.str();
  auto rejected = [](const std::string& b) {
    std::istringstream in(b, std::ios::binary);
    try {
      read_checkpoint(in);
    } catch (const FormatError&) {
      return true;
    } catch (...) {
    }
    return false;
  };
  std::string bad_magic = bytes;
  bad_magic[1] = 'X';
  std::size_t truncations = 0, truncations_rejected = 0;
  for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 7) {
    ++truncations;
    truncations_rejected += rejected(bytes.substr(0, len));
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%zu/20 bitwise identical, bad magic %s, %zu/%zu truncations rejected", identical,
                rejected(bad_magic) ? "rejected" : "accepted", truncations_rejected, truncations);
  return {identical == 20 && rejected(bad_magic) && truncations_rejected == truncations, buf};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"ssm oracle equivalence", ssm_oracle},
      {"zoh correctness", zoh_precision},
      {"gradient suite", gradient_suite},
      {"invariance suite", invariance_suite},
      {"parameter deltas", parameter_deltas},
      {"reference equivalence", reference_equivalence},
      {"desk-scale training", desk_training},
      {"parser robustness", parser_robustness},
      {"checkpoint round trip", checkpoint_round_trip},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
