#pragma once

#include <string>
#include <vector>

#include "cafe/layers.hpp"

namespace cafe {

// One minibatch. Every premise is padded to the batch-wide premise extent and
// every hypothesis to the hypothesis extent; char ids share one width.
struct Batch {
  std::vector<TokenIds> premises;
  std::vector<TokenIds> hypotheses;
  std::vector<std::size_t> labels;
  std::vector<std::string> pair_ids;

  std::size_t size() const { return premises.size(); }
};

}  // namespace cafe
