#include <gtest/gtest.h>

#include <omp.h>

#include <vector>

#include "cafe/kernels.hpp"
#include "test_util.hpp"

using namespace cafe;
using namespace cafe::kernels;
using testutil::uniform_int;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Triple-loop product with explicit transposes.
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                               bool ta, const std::vector<double>& b, bool tb) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta ? a[p * m + i] : a[i * k + p];
        const double bv = tb ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  return c;
}

class ThreadGuard {
 public:
  explicit ThreadGuard(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~ThreadGuard() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

}  // namespace

TEST(Gemm, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = uniform_int(rng, 1, 9), n = uniform_int(rng, 1, 9), k = uniform_int(rng, 1, 9);
    const bool ta = trial % 2, tb = (trial / 2) % 2;
    auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> c(m * n, 7.0);
    serial::gemm({m, n, k, a.data(), ta ? Trans::Yes : Trans::No, b.data(), tb ? Trans::Yes : Trans::No,
                  c.data(), false});
    auto expect = naive_gemm(m, n, k, a, ta, b, tb);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], expect[i], 1e-12);
  }
}

TEST(Gemm, AccumulateAddsToExisting) {
  std::vector<double> a = {1, 2}, b = {3, 4}, c = {10};
  serial::gemm({1, 1, 2, a.data(), Trans::No, b.data(), Trans::No, c.data(), true});
  EXPECT_EQ(c[0], 21.0);
}

TEST(Parallel, GemmBitwiseEqualsSerial) {
  ThreadGuard guard(4);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = uniform_int(rng, 1, 70), n = uniform_int(rng, 1, 40), k = uniform_int(rng, 1, 40);
    auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    for (auto tb : {Trans::No, Trans::Yes}) {
      std::vector<double> c1(m * n), c2(m * n);
      serial::gemm({m, n, k, a.data(), Trans::No, b.data(), tb, c1.data(), false});
      parallel::gemm({m, n, k, a.data(), Trans::No, b.data(), tb, c2.data(), false});
      EXPECT_EQ(c1, c2);
    }
  }
}

TEST(Parallel, FmForwardAndBackwardBitwiseEqualSerial) {
  ThreadGuard guard(4);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t rows = uniform_int(rng, 1, 50), n = uniform_int(rng, 1, 40), f = uniform_int(rng, 1, 12);
    auto x = random_vec(rows * n, rng), w = random_vec(n, rng), v = random_vec(n * f, rng), g = random_vec(rows, rng);
    std::vector<double> o1(rows), o2(rows), s1(rows * f), s2(rows * f);
    serial::fm_forward({rows, n, f, x.data(), 0.25, w.data(), v.data(), o1.data(), s1.data()});
    parallel::fm_forward({rows, n, f, x.data(), 0.25, w.data(), v.data(), o2.data(), s2.data()});
    EXPECT_EQ(o1, o2);
    EXPECT_EQ(s1, s2);

    std::vector<double> dx1(rows * n), dx2(rows * n), dw1(n), dw2(n), dv1(n * f), dv2(n * f);
    double b1 = 0, b2 = 0;
    serial::fm_backward({rows, n, f, x.data(), w.data(), v.data(), s1.data(), g.data(), dx1.data(), &b1, dw1.data(),
                         dv1.data()});
    parallel::fm_backward({rows, n, f, x.data(), w.data(), v.data(), s2.data(), g.data(), dx2.data(), &b2,
                           dw2.data(), dv2.data()});
    EXPECT_EQ(dx1, dx2);
    EXPECT_EQ(dw1, dw2);
    EXPECT_EQ(dv1, dv2);
    EXPECT_EQ(b1, b2);
  }
}

TEST(Parallel, MaskedSoftmaxBitwiseEqualsSerial) {
  ThreadGuard guard(4);
  std::mt19937_64 rng(4);
  const std::size_t rows = 64, cols = 33;
  auto x = random_vec(rows * cols, rng);
  std::vector<double> mask(cols, 1.0);
  for (std::size_t c = 20; c < cols; ++c) mask[c] = 0.0;
  std::vector<double> y1(rows * cols), y2(rows * cols);
  serial::masked_softmax({rows, cols, x.data(), mask.data(), y1.data()});
  parallel::masked_softmax({rows, cols, x.data(), mask.data(), y2.data()});
  EXPECT_EQ(y1, y2);
}

TEST(MaskedSoftmax, RowsAreDistributions) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = uniform_int(rng, 1, 6), cols = uniform_int(rng, 1, 9);
    auto x = random_vec(rows * cols, rng);
    for (auto& v : x) v *= 30.0;
    std::vector<double> mask(cols);
    for (auto& m : mask) m = uniform_int(rng, 0, 1);
    mask[uniform_int(rng, 0, cols - 1)] = 1.0;
    std::vector<double> y(rows * cols);
    serial::masked_softmax({rows, cols, x.data(), mask.data(), y.data()});
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double w = y[r * cols + c];
        EXPECT_GE(w, 0.0);
        if (mask[c] == 0.0) {
          EXPECT_EQ(w, 0.0);
        }
        total += w;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(MaskedSoftmax, FullyMaskedRejected) {
  std::vector<double> x = {1, 2}, mask = {0, 0}, y(2);
  EXPECT_THROW(serial::masked_softmax({1, 2, x.data(), mask.data(), y.data()}), std::invalid_argument);
}

TEST(Fm, LinearTimeMatchesPairwiseDoubleLoop) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = uniform_int(rng, 1, 64), f = uniform_int(rng, 1, 16);
    auto x = random_vec(n, rng), w = random_vec(n, rng), v = random_vec(n * f, rng);
    double out = 0, sums[16];
    serial::fm_forward({1, n, f, x.data(), -0.3, w.data(), v.data(), &out, sums});
    // Pairwise oracle written out independently of fm_bruteforce.
    double z = -0.3;
    for (std::size_t i = 0; i < n; ++i) z += w[i] * x[i];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double d = 0;
        for (std::size_t q = 0; q < f; ++q) d += v[i * f + q] * v[j * f + q];
        z += d * x[i] * x[j];
      }
    EXPECT_NEAR(out, z, 1e-10);
    EXPECT_NEAR(fm_bruteforce(x, -0.3, w, v, f), z, 1e-12);
  }
}

TEST(Fm, BruteforceRejectsSizeMismatch) {
  std::vector<double> x = {1, 2}, w = {1}, v = {1, 1};
  EXPECT_THROW(fm_bruteforce(x, 0, w, v, 1), std::invalid_argument);
}
