#pragma once

#include <string>
#include <vector>

#include "dslu/eval.hpp"

// Published reference numbers used as report fixtures.
namespace dslu::fixtures {

// Confidence-bucket tables: row 0 high confidence, row 1 low.
// "fsc-utt"  : threshold 0.80, utterance test set
// "fsc-spk"  : threshold 0.80, speaker test set
// "slurp"    : threshold 0.65
BucketTable confidence_table(const std::string& name);
std::vector<std::string> confidence_table_names();

// Accuracy-vs-prefix curve (prefix seconds, accuracy) in CSV form.
std::string prefix_curve_csv();

}  // namespace dslu::fixtures
