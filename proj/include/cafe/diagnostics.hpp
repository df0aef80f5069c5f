#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cafe/data.hpp"
#include "cafe/model.hpp"

namespace cafe {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Central-difference checks, in double precision, of every layer family and
// of the end-to-end micro model.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, double epsilon = 1e-5);

// Largest |linear-time FM - pairwise FM| over random draws with n <= 64 and
// f <= 16.
double fm_max_deviation(std::size_t trials, std::uint64_t seed);

// Micro model over a tiny fixed vocabulary, float32 rounding off, plus one
// padded pair (premise 4 tokens, hypothesis 3) for end-to-end checks.
struct MicroFixture {
  std::unique_ptr<Model> model;
  Batch batch;
};
MicroFixture make_micro_fixture(std::uint64_t seed, ModelConfig config);

}  // namespace cafe
