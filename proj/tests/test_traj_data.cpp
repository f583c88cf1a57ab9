#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "ctpnet/traj_data.hpp"

using namespace ctp;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& content) {
  fs::path dir = fs::temp_directory_path() / "ctpnet_traj_tests";
  fs::create_directories(dir);
  fs::path p = dir / name;
  std::ofstream out(p);
  out << content;
  return p;
}

TrajectoryWindow make_window(long ped, long start, const std::vector<Vec2>& obs,
                             const std::vector<Vec2>& fut) {
  TrajectoryWindow w;
  w.ped_id = ped;
  w.start_frame = start;
  w.obs = obs;
  w.fut = fut;
  return w;
}

std::vector<TrajectoryWindow> n_windows(int n) {
  std::vector<TrajectoryWindow> ws;
  for (int i = 0; i < n; ++i)
    ws.push_back(make_window(i, 10 * i, {{double(i), 0}, {double(i), 1}}, {{double(i), 2}}));
  return ws;
}

RawAnnotationTable straight_ped(long ped, int samples, long step = 10) {
  RawAnnotationTable t;
  for (int k = 0; k < samples; ++k) t.rows.push_back({k * step, ped, double(k), 2.0 * k});
  return t;
}

}  // namespace

TEST_CASE("parse_annotations maps fields through the column order") {
  auto p = write_temp("basic.txt", "0 1 2.5 3.5\n");
  auto table = parse_annotations(p.string(), ColumnOrder::parse("frame,ped,x,y"), 1);
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0].frame == 0);
  CHECK(table.rows[0].ped == 1);
  CHECK(table.rows[0].x == 2.5);
  CHECK(table.rows[0].y == 3.5);

  auto q = write_temp("permuted.txt", "2.5 3.5 0 1\n");
  auto t2 = parse_annotations(q.string(), ColumnOrder::parse("x,y,frame,ped"), 1);
  REQUIRE(t2.rows.size() == 1);
  CHECK(t2.rows[0].x == 2.5);
  CHECK(t2.rows[0].ped == 1);
}

TEST_CASE("parse_annotations downsamples by frame stride") {
  auto p = write_temp("stride.txt", "0 7 0 0\n10 7 1 1\n20 7 2 2\n15 7 9 9\n");
  auto table = parse_annotations(p.string(), ColumnOrder::parse("frame,ped,x,y"), 10);
  REQUIRE(table.rows.size() == 3);  // frames 0, 10, 20 kept; 15 dropped
  CHECK(table.rows[2].frame == 20);
}

TEST_CASE("parse_annotations rejects malformed input with the line number") {
  auto p = write_temp("short.txt", "0 1 2.5 3.5\n4 5 6\n");
  CHECK_THROWS_WITH(parse_annotations(p.string(), ColumnOrder(), 1),
                    Catch::Matchers::ContainsSubstring("line 2"));

  auto q = write_temp("alpha.txt", "0 1 2.5 banana\n");
  CHECK_THROWS_AS(parse_annotations(q.string(), ColumnOrder(), 1), ParseError);

  auto r = write_temp("dup.txt", "0 1 2.5 3.5\n0 1 9 9\n");
  CHECK_THROWS_AS(parse_annotations(r.string(), ColumnOrder(), 1), DataError);

  CHECK_THROWS_AS(parse_annotations("/nonexistent/file.txt", ColumnOrder(), 1), IoError);
}

TEST_CASE("parse_annotations skips blank lines") {
  auto p = write_temp("blank.txt", "0 1 2.5 3.5\n\n10 1 2.6 3.6\n");
  CHECK(parse_annotations(p.string(), ColumnOrder(), 1).rows.size() == 2);
}

TEST_CASE("extract_windows counts follow max(0, n - lo - lf + 1)") {
  CHECK(extract_windows(straight_ped(1, 20), 8, 12, 1).size() == 1);
  CHECK(extract_windows(straight_ped(1, 19), 8, 12, 1).size() == 0);

  // Independent brute-force enumeration of run starts.
  for (int n : {20, 21, 25, 40}) {
    int expected = 0;
    for (int s = 0; s + 20 <= n; ++s) ++expected;
    CHECK(extract_windows(straight_ped(1, n), 8, 12, 1).size() == std::size_t(expected));
  }
  CHECK(extract_windows(straight_ped(1, 25), 8, 12, 1).size() == 6);
}

TEST_CASE("extract_windows honors slide and window contents") {
  auto ws = extract_windows(straight_ped(3, 24), 2, 2, 2);
  REQUIRE(ws.size() == (24 - 4) / 2 + 1);
  CHECK(ws[0].ped_id == 3);
  CHECK(ws[0].start_frame == 0);
  CHECK(ws[0].obs.size() == 2);
  CHECK(ws[0].fut.size() == 2);
  CHECK(ws[0].fut[1][0] == 3.0);
  CHECK(ws[1].start_frame == 20);  // slide 2 at period 10
}

TEST_CASE("extract_windows breaks runs at frame gaps") {
  auto t = straight_ped(1, 12);
  t.rows.erase(t.rows.begin() + 6);  // gap in the middle
  // runs of 6 and 5 samples; lo=3, lf=2 -> 2 + 1 windows
  CHECK(extract_windows(t, 3, 2, 1).size() == 3);
}

TEST_CASE("to_offsets differences and from_offsets reconstructs") {
  std::vector<Vec2> coords{{0, 0}, {1, 2}, {3, 3}};
  auto seq = to_offsets(coords);
  REQUIRE(seq.offsets.size() == 2);
  CHECK(seq.offsets[0] == Vec2{1, 2});
  CHECK(seq.offsets[1] == Vec2{2, 1});
  CHECK(seq.origin == Vec2{0, 0});

  std::vector<Vec2> constant(5, Vec2{4.0, -1.0});
  for (const auto& d : to_offsets(constant).offsets) CHECK(d == Vec2{0, 0});

  CHECK_THROWS_AS(to_offsets(std::vector<Vec2>{{1, 1}}), ShapeError);

  CHECK(from_offsets({0, 0}, std::vector<Vec2>{{1, 0}, {0, 1}}) ==
        std::vector<Vec2>{{0, 0}, {1, 0}, {1, 1}});
  CHECK(from_offsets({7, 8}, std::vector<Vec2>{}) == std::vector<Vec2>{{7, 8}});
}

TEST_CASE("offset round trip is exact and translation invariant") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<Vec2> coords(13);
    for (auto& c : coords) c = {u(rng), u(rng)};
    auto seq = to_offsets(coords);
    auto back = from_offsets(seq.origin, seq.offsets);
    REQUIRE(back.size() == coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
      CHECK(back[i][0] == Catch::Approx(coords[i][0]).margin(1e-12));
      CHECK(back[i][1] == Catch::Approx(coords[i][1]).margin(1e-12));
    }
    // translation leaves offsets intact
    std::vector<Vec2> shifted = coords;
    for (auto& c : shifted) c = {c[0] + 128.0, c[1] - 64.0};
    auto seq2 = to_offsets(shifted);
    for (std::size_t k = 0; k < seq.offsets.size(); ++k) {
      CHECK(seq2.offsets[k][0] == Catch::Approx(seq.offsets[k][0]).margin(1e-9));
      CHECK(seq2.offsets[k][1] == Catch::Approx(seq.offsets[k][1]).margin(1e-9));
    }
  }
}

TEST_CASE("from_offsets matches an independent cumulative-sum oracle") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<Vec2> offsets(12);
  for (auto& d : offsets) d = {u(rng), u(rng)};
  Vec2 origin{u(rng), u(rng)};
  auto coords = from_offsets(origin, offsets);

  double cx = origin[0], cy = origin[1];
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    cx += offsets[k][0];
    cy += offsets[k][1];
    CHECK(coords[k + 1][0] == Catch::Approx(cx).margin(1e-12));
    CHECK(coords[k + 1][1] == Catch::Approx(cy).margin(1e-12));
  }
}

TEST_CASE("make_split follows 8:2 for source and 4:6 for target") {
  auto [train_s, val_s] = make_split(n_windows(10), Domain::source, 1);
  CHECK(train_s.size() == 8);
  CHECK(val_s.size() == 2);

  auto [train_t, test_t] = make_split(n_windows(10), Domain::target, 1);
  CHECK(train_t.size() == 4);
  CHECK(test_t.size() == 6);

  CHECK_THROWS_AS(make_split(n_windows(4), Domain::source, 1), SplitError);
}

TEST_CASE("make_split is deterministic, disjoint, exhaustive, time-ordered") {
  auto ws = n_windows(37);
  auto [a1, b1] = make_split(ws, Domain::target, 5);
  auto [a2, b2] = make_split(ws, Domain::target, 5);
  REQUIRE(a1.size() == a2.size());
  for (std::size_t i = 0; i < a1.size(); ++i) CHECK(a1[i].ped_id == a2[i].ped_id);

  CHECK(a1.size() + b1.size() == ws.size());
  long max_train_frame = -1, min_test_frame = 1 << 30;
  for (const auto& w : a1) max_train_frame = std::max(max_train_frame, w.start_frame);
  for (const auto& w : b1) min_test_frame = std::min(min_test_frame, w.start_frame);
  CHECK(max_train_frame < min_test_frame);  // contiguous time blocks
}

TEST_CASE("apply_shift identity spec returns the input") {
  auto ws = n_windows(6);
  auto out = apply_shift(ws, SyntheticShiftSpec{}, 9);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    CHECK(out[i].obs == ws[i].obs);
    CHECK(out[i].fut == ws[i].fut);
  }
}

TEST_CASE("apply_shift translation moves coordinates but not offsets") {
  auto ws = n_windows(4);
  SyntheticShiftSpec spec;
  spec.translation = {5, 5};
  auto out = apply_shift(ws, spec, 9);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    for (std::size_t k = 0; k < ws[i].obs.size(); ++k) {
      CHECK(out[i].obs[k][0] == Catch::Approx(ws[i].obs[k][0] + 5));
      CHECK(out[i].obs[k][1] == Catch::Approx(ws[i].obs[k][1] + 5));
    }
    auto d_in = to_offsets(ws[i].obs).offsets;
    auto d_out = to_offsets(out[i].obs).offsets;
    for (std::size_t k = 0; k < d_in.size(); ++k) {
      CHECK(d_out[k][0] == Catch::Approx(d_in[k][0]).margin(1e-12));
      CHECK(d_out[k][1] == Catch::Approx(d_in[k][1]).margin(1e-12));
    }
  }
}

TEST_CASE("apply_shift with linear 2I doubles every offset") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-5, 5);
  std::vector<TrajectoryWindow> ws;
  for (int i = 0; i < 5; ++i) {
    std::vector<Vec2> obs(8), fut(12);
    for (auto& c : obs) c = {u(rng), u(rng)};
    for (auto& c : fut) c = {u(rng), u(rng)};
    ws.push_back(make_window(i, i, obs, fut));
  }
  SyntheticShiftSpec spec;
  spec.linear = {{{2, 0}, {0, 2}}};
  auto out = apply_shift(ws, spec, 1);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    auto d_in = to_offsets(ws[i].fut).offsets;
    auto d_out = to_offsets(out[i].fut).offsets;
    for (std::size_t k = 0; k < d_in.size(); ++k) {
      CHECK(d_out[k][0] == Catch::Approx(2 * d_in[k][0]).margin(1e-9));
      CHECK(d_out[k][1] == Catch::Approx(2 * d_in[k][1]).margin(1e-9));
    }
  }
}

TEST_CASE("apply_shift validates the spec and inverts when noiseless") {
  SyntheticShiftSpec singular;
  singular.linear = {{{1, 2}, {2, 4}}};
  CHECK_THROWS_AS(apply_shift(n_windows(2), singular, 1), ConfigError);

  SyntheticShiftSpec bad_speed;
  bad_speed.speed_scale = 0;
  CHECK_THROWS_AS(apply_shift(n_windows(2), bad_speed, 1), ConfigError);

  SyntheticShiftSpec spec;
  spec.linear = {{{0.8, 0.3}, {-0.2, 1.1}}};
  spec.translation = {3, -2};
  spec.speed_scale = 1.5;
  auto ws = n_windows(4);
  auto fwd = apply_shift(ws, spec, 1);

  // Inverse spec: scale by 1/speed and linear^-1, undoing the translation
  // inside the linear map's input.
  double det = spec.det();
  std::array<std::array<double, 2>, 2> li{{{spec.linear[1][1] / det, -spec.linear[0][1] / det},
                                           {-spec.linear[1][0] / det, spec.linear[0][0] / det}}};
  double s = 1.0 / spec.speed_scale;
  SyntheticShiftSpec inv;
  inv.linear = {{{li[0][0] * s, li[0][1] * s}, {li[1][0] * s, li[1][1] * s}}};
  inv.speed_scale = 1.0;
  inv.translation = {-s * (li[0][0] * spec.translation[0] + li[0][1] * spec.translation[1]),
                     -s * (li[1][0] * spec.translation[0] + li[1][1] * spec.translation[1])};

  auto back = apply_shift(fwd, inv, 1);
  for (std::size_t i = 0; i < ws.size(); ++i)
    for (std::size_t k = 0; k < ws[i].obs.size(); ++k) {
      CHECK(back[i].obs[k][0] == Catch::Approx(ws[i].obs[k][0]).margin(1e-9));
      CHECK(back[i].obs[k][1] == Catch::Approx(ws[i].obs[k][1]).margin(1e-9));
    }
}

TEST_CASE("apply_shift noise is deterministic per seed") {
  SyntheticShiftSpec spec;
  spec.noise_std = 0.3;
  auto ws = n_windows(5);
  auto a = apply_shift(ws, spec, 42);
  auto b = apply_shift(ws, spec, 42);
  auto c = apply_shift(ws, spec, 43);
  CHECK(a[0].obs == b[0].obs);
  CHECK(a[0].obs != c[0].obs);
}

TEST_CASE("synth_trajectories yields parseable constant-speed walks") {
  SynthSpec spec;
  spec.n_peds = 3;
  spec.samples_per_ped = 30;
  auto table = synth_trajectories(spec, 11);
  CHECK(table.rows.size() == 90);
  auto ws = extract_windows(table, 8, 12, 1);
  CHECK(ws.size() == 3 * (30 - 20 + 1));
  // constant speed per pedestrian: offset norms equal along the window
  auto d = to_offsets(ws[0].obs).offsets;
  double n0 = std::hypot(d[0][0], d[0][1]);
  for (const auto& step : d) CHECK(std::hypot(step[0], step[1]) == Catch::Approx(n0).margin(1e-9));
}

TEST_CASE("window offset helpers bridge observation and future") {
  auto w = make_window(1, 0, {{0, 0}, {1, 0}, {2, 0}}, {{3, 1}, {4, 1}});
  auto obs_d = window_obs_offsets(w);
  REQUIRE(obs_d.size() == 2);
  CHECK(obs_d[1] == Vec2{1, 0});
  CHECK(window_seed_offset(w) == Vec2{1, 0});
  auto fut_d = window_fut_offsets(w);
  REQUIRE(fut_d.size() == 2);
  CHECK(fut_d[0] == Vec2{1, 1});  // fut[0] - obs.back()
  CHECK(fut_d[1] == Vec2{1, 0});
}
