#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fedad/errors.hpp"
#include "fedad/ppds.hpp"
#include "fedad/rng.hpp"
#include "oracles.hpp"

using namespace fedad;
using namespace fedad::ppds;

namespace {

std::vector<double> random_samples(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::vector<Matrix> sine_windows(std::size_t count, std::size_t len, Rng& rng) {
  std::vector<Matrix> out;
  for (std::size_t w = 0; w < count; ++w) {
    Matrix m(len, 1);
    const double phase = rng.uniform(0.0, 6.28);
    for (std::size_t t = 0; t < len; ++t) {
      m.at(t, 0) = std::sin(0.4 * static_cast<double>(t) + phase) + rng.normal(0.0, 0.05);
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

TEST_CASE("wasserstein point values") {
  const std::vector<double> a = {1.0, 2.0, 3.0};
  CHECK(wasserstein_1d(std::span<const double>(a), std::span<const double>(a)) == 0.0);

  const std::vector<double> x0 = {0.0}, y1 = {1.0};
  CHECK(wasserstein_1d(std::span<const double>(x0), std::span<const double>(y1)) ==
        doctest::Approx(1.0));

  const std::vector<double> x = {1.0, 3.0}, y = {2.0, 4.0};
  CHECK(wasserstein_1d(std::span<const double>(x), std::span<const double>(y)) ==
        doctest::Approx(1.0));

  CHECK_THROWS_AS(wasserstein_1d(std::span<const double>(), std::span<const double>(a)),
                  InputError);
}

TEST_CASE("wasserstein matches the coupling oracle on small sets") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(6);
    const std::size_t m = 1 + rng.uniform_index(6);
    const auto x = random_samples(n, rng);
    const auto y = random_samples(m, rng);
    const double got = wasserstein_1d(std::span<const double>(x), std::span<const double>(y));
    const double expect = oracles::wasserstein_coupling_oracle(x, y);
    CHECK(std::abs(got - expect) <= 1e-9);
  }
}

TEST_CASE("wasserstein metric axioms") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const auto x = random_samples(n, rng);
    const auto y = random_samples(n, rng);
    const auto z = random_samples(n, rng);
    const auto sx = std::span<const double>(x);
    const auto sy = std::span<const double>(y);
    const auto sz = std::span<const double>(z);
    const double dxy = wasserstein_1d(sx, sy);
    const double dyx = wasserstein_1d(sy, sx);
    const double dxz = wasserstein_1d(sx, sz);
    const double dyz = wasserstein_1d(sy, sz);
    CHECK(dxy >= 0.0);
    CHECK(dxy == doctest::Approx(dyx).epsilon(1e-12));
    CHECK(dxz <= dxy + dyz + 1e-12);
    CHECK(wasserstein_1d(sx, sx) == 0.0);
  }
}

TEST_CASE("gaussian_kl closed forms") {
  const std::vector<double> zero = {0.0};
  const std::vector<double> one_mu = {1.0};
  const std::vector<double> lv0 = {0.0};              // sigma^2 = 1
  const std::vector<double> lv2 = {std::log(2.0)};    // sigma^2 = 2
  CHECK(gaussian_kl(zero, lv0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(gaussian_kl(one_mu, lv0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(gaussian_kl(zero, lv2) == doctest::Approx((2.0 - std::log(2.0) - 1.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("gaussian_kl is nonnegative with equality only at the prior") {
  for (double mu = -2.0; mu <= 2.0; mu += 0.25) {
    for (double lv = -2.0; lv <= 2.0; lv += 0.25) {
      const std::vector<double> m = {mu}, l = {lv};
      const double kl = gaussian_kl(m, l);
      CHECK(kl >= -1e-15);
      if (mu != 0.0 || lv != 0.0) CHECK(kl > 0.0);
    }
  }
}

TEST_CASE("mutual information estimator") {
  Rng rng(47);

  SUBCASE("constant x gives zero information") {
    const std::vector<double> x(64, 1.0);
    const auto y = random_samples(64, rng);
    CHECK(std::abs(mutual_information(x, y, 16, 0.5)) <= 1e-12);
  }

  SUBCASE("y == x under hard binning reaches the binned entropy") {
    const auto x = random_samples(256, rng, 0.0, 1.0);
    const double mi = mutual_information(x, x, 8, 0.0);
    // binned entropy computed directly
    std::vector<double> counts(8, 0.0);
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    for (double v : x) {
      auto b = static_cast<std::size_t>((v - *lo) / (*hi - *lo) * 8);
      if (b >= 8) b = 7;
      counts[b] += 1.0;
    }
    double entropy = 0.0;
    for (double c : counts) {
      if (c == 0.0) continue;
      const double p = c / 256.0;
      entropy -= p * std::log(p);
    }
    CHECK(mi == doctest::Approx(entropy).epsilon(1e-12));
  }

  SUBCASE("independent samples carry little information") {
    const auto x = random_samples(10000, rng, 0.0, 1.0);
    const auto y = random_samples(10000, rng, 0.0, 1.0);
    const double mi = mutual_information(x, y, 16, 0.5);
    CHECK(mi >= -1e-9);
    CHECK(mi <= 0.05);
  }

  SUBCASE("hard binning is symmetric") {
    const auto x = random_samples(100, rng);
    const auto y = random_samples(100, rng);
    CHECK(mutual_information(x, y, 12, 0.0) ==
          doctest::Approx(mutual_information(y, x, 12, 0.0)).epsilon(1e-12));
  }

  SUBCASE("nonnegative on random inputs") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = random_samples(50, rng);
      const auto y = random_samples(50, rng);
      CHECK(mutual_information(x, y, 8, 0.5) >= -1e-9);
    }
  }

  const std::vector<double> single = {1.0};
  CHECK_THROWS_AS(mutual_information(single, single, 8, 0.5), InputError);
}

TEST_CASE("loss ops agree with the plain functions and their gradients check out") {
  Rng rng(53);
  const std::size_t n = 24;
  const auto xv = random_samples(n, rng);
  auto yv = random_samples(n, rng);

  const Tensor x(Shape{n}, xv);
  Tensor y(Shape{n}, yv, true);

  SUBCASE("wasserstein value and gradient") {
    const Tensor w = wasserstein_loss(x, y);
    CHECK(w.item() ==
          doctest::Approx(wasserstein_1d(std::span<const double>(xv), std::span<const double>(yv)))
              .epsilon(1e-12));
    backward(w);
    const auto& g = y.grad();
    const double h = 1e-6;
    for (std::size_t i = 0; i < n; i += 5) {
      auto yp = yv, ym = yv;
      yp[i] += h;
      ym[i] -= h;
      const double fp = wasserstein_loss(x, Tensor(Shape{n}, yp)).item();
      const double fm = wasserstein_loss(x, Tensor(Shape{n}, ym)).item();
      CHECK(g[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-5));
    }
  }

  SUBCASE("mutual information value and gradient") {
    const Tensor mi = mutual_information_loss(x, y, 8, 0.5);
    CHECK(mi.item() == doctest::Approx(mutual_information(xv, yv, 8, 0.5)).epsilon(1e-12));
    backward(mi);
    const auto& g = y.grad();

    // skip the range endpoints: the normalization range is held fixed in the
    // analytic gradient
    const auto [lo_it, hi_it] = std::minmax_element(yv.begin(), yv.end());
    const std::size_t lo_i = lo_it - yv.begin();
    const std::size_t hi_i = hi_it - yv.begin();
    const double h = 1e-6;
    for (std::size_t i = 0; i < n; i += 3) {
      if (i == lo_i || i == hi_i) continue;
      auto yp = yv, ym = yv;
      yp[i] += h;
      ym[i] -= h;
      const double fp = mutual_information_loss(x, Tensor(Shape{n}, yp), 8, 0.5).item();
      const double fm = mutual_information_loss(x, Tensor(Shape{n}, ym), 8, 0.5).item();
      const double numeric = (fp - fm) / (2 * h);
      CHECK(std::abs(g[i] - numeric) / std::max(1.0, std::abs(g[i])) <= 1e-4);
    }
  }
}

TEST_CASE("vae training") {
  Rng rng(61);
  const auto windows = sine_windows(24, 20, rng);

  VaeConfig cfg;
  cfg.latent_dim = 4;
  cfg.hidden_dim = 24;
  cfg.epochs = 120;
  cfg.learning_rate = 0.05;
  cfg.synth_length = 50;
  cfg.alpha1 = 0.0;
  cfg.alpha2 = 0.0;

  SUBCASE("plain objective descends") {
    // rerun the first forward loss by training for one epoch vs many
    VaeConfig one = cfg;
    one.epochs = 1;
    const VaeModel m1 = train_vae(windows, one, 7);
    const VaeModel mN = train_vae(windows, cfg, 7);
    // compare reconstruction error of both models on the training windows
    auto recon_err = [&](const VaeModel& m) {
      autograd::NoGradGuard guard;
      std::vector<double> flat;
      for (const auto& w : windows) flat.insert(flat.end(), w.data.begin(), w.data.end());
      const Tensor x({windows.size(), windows[0].size()}, flat);
      const Tensor mu = add_rowwise(matmul(m.encode_hidden(x), m.enc_wmu), m.enc_bmu);
      return mse(m.decode(mu), x).item();
    };
    CHECK(recon_err(mN) < recon_err(m1));
  }

  SUBCASE("same seed reproduces identical weights") {
    const VaeModel a = train_vae(windows, cfg, 11);
    const VaeModel b = train_vae(windows, cfg, 11);
    CHECK(a.enc_w1.values() == b.enc_w1.values());
    CHECK(a.dec_w2.values() == b.dec_w2.values());
  }

  SUBCASE("full objective brings the synthesis distribution closer") {
    VaeConfig full = cfg;
    full.alpha1 = 1.0;
    full.alpha2 = 0.1;
    full.epochs = 250;
    const VaeModel trained = train_vae(windows, full, 13);

    VaeConfig fresh = full;
    fresh.epochs = 1;
    const VaeModel untrained = train_vae(windows, fresh, 13);

    Matrix all_train(0, 1);
    for (const auto& w : windows) {
      all_train.rows += w.rows;
      all_train.data.insert(all_train.data.end(), w.data.begin(), w.data.end());
    }
    all_train.cols = 1;
    const Matrix synth_before = synthesize(untrained, 200, 17);
    const Matrix synth_after = synthesize(trained, 200, 17);
    CHECK(wasserstein_1d(all_train, synth_after) < wasserstein_1d(all_train, synth_before));
  }

  SUBCASE("divergence raises a training error") {
    VaeConfig bad = cfg;
    bad.learning_rate = 1e6;
    bad.epochs = 50;
    CHECK_THROWS_AS(train_vae(windows, bad, 3), TrainingError);
  }

  CHECK_THROWS_AS(train_vae({}, cfg, 1), InputError);
}

TEST_CASE("synthesize output contract") {
  Rng rng(67);
  const auto windows = sine_windows(16, 20, rng);
  VaeConfig cfg;
  cfg.latent_dim = 4;
  cfg.hidden_dim = 16;
  cfg.epochs = 50;
  cfg.alpha1 = 0.0;
  cfg.alpha2 = 0.0;
  const VaeModel m = train_vae(windows, cfg, 5);

  const Matrix s = synthesize(m, 100, 1);
  CHECK(s.rows == 100);
  CHECK(s.cols == 1);

  // finite, and inside six standard deviations of the training values
  double mean = 0.0, var = 0.0;
  std::size_t count = 0;
  for (const auto& w : windows)
    for (double v : w.data) {
      mean += v;
      ++count;
    }
  mean /= static_cast<double>(count);
  for (const auto& w : windows)
    for (double v : w.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(count);
  const double bound = 6.0 * std::sqrt(var);
  for (double v : s.data) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v - mean) <= bound);
  }

  const Matrix s2 = synthesize(m, 100, 2);
  CHECK(s.data != s2.data);

  const Matrix s37 = synthesize(m, 37, 1);
  CHECK(s37.rows == 37);
}

TEST_CASE("shared dataset pooling") {
  Matrix a(3, 1, {1, 2, 3});
  Matrix b(3, 1, {4, 5, 6});

  const SharedDataset one = pool_shared_dataset({{0, a}});
  CHECK(one.size() == 1);
  CHECK(one.entries[0].series.data == a.data);

  const SharedDataset two = pool_shared_dataset({{1, b}, {0, a}});  // arrival order reversed
  CHECK(two.entries[0].client_id == 0);
  CHECK(two.entries[1].client_id == 1);
  CHECK(two.entries[0].series.data == a.data);

  CHECK_THROWS_AS(pool_shared_dataset({{0, a}, {0, b}}), ProtocolError);
}

TEST_CASE("shared csv round trip") {
  namespace fs = std::filesystem;
  Matrix a(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  Matrix b(4, 2, {-1, -2, -3, -4, -5, -6, -7, -8});
  const SharedDataset ds = pool_shared_dataset({{0, a}, {3, b}});
  const std::string path = (fs::temp_directory_path() / "fedad_shared_test.csv").string();
  save_shared_csv(path, ds);
  const SharedDataset r = load_shared_csv(path);
  REQUIRE(r.size() == 2);
  CHECK(r.entries[0].client_id == 0);
  CHECK(r.entries[1].client_id == 3);
  CHECK(r.entries[0].series.data == a.data);
  CHECK(r.entries[1].series.data == b.data);
  fs::remove(path);
}
