#include "dslu/fixtures.hpp"

#include <stdexcept>

namespace dslu::fixtures {

BucketTable confidence_table(const std::string& name) {
  BucketTable t;
  if (name == "fsc-utt") {
    t.rows = {{">=0.8", 1604, 84.9, 89.5}, {"<0.8", 2600, 61.8, 77.9}};
  } else if (name == "fsc-spk") {
    t.rows = {{">=0.8", 2694, 97.6, 99.2}, {"<0.8", 655, 63.0, 93.6}};
  } else if (name == "slurp") {
    t.rows = {{">=0.65", 2556, 96.6, 97.4}, {"<0.65", 10522, 70.9, 84.0}};
  } else {
    throw std::invalid_argument("unknown fixture '" + name + "'");
  }
  return t;
}

std::vector<std::string> confidence_table_names() { return {"fsc-utt", "fsc-spk", "slurp"}; }

std::string prefix_curve_csv() {
  return "prefix_seconds,accuracy\n"
         "1,35.6\n"
         "2,75.9\n"
         "3,83.6\n"
         "4,85.5\n"
         "5,86.0\n";
}

}  // namespace dslu::fixtures
