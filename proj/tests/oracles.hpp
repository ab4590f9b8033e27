#ifndef ADAPTERSEG_TESTS_ORACLES_HPP
#define ADAPTERSEG_TESTS_ORACLES_HPP

#include <vector>

#include "adapterseg/tensor.hpp"

// Independent, definition-direct reference implementations used to check the
// production metrics. Deliberately naive: explicit confusion counts,
// brute-force distance scans, direct convolution. No code is shared with
// src/.
namespace adapterseg::oracle {

struct Counts {
  long tp = 0, tn = 0, fp = 0, fn = 0;
};

Counts count_confusion(const Tensor& pred, const Tensor& gt, double threshold = 0.5);

double mae(const Tensor& pred, const Tensor& gt);
double dice(const Tensor& pred, const Tensor& gt, double threshold = 0.5);
double iou(const Tensor& pred, const Tensor& gt, double threshold = 0.5);
double ber(const Tensor& pred, const Tensor& gt, double threshold = 0.5);
double f1(const Tensor& pred, const Tensor& gt, double threshold = 0.5);

double s_measure(const Tensor& pred, const Tensor& gt);
double e_measure_mean(const Tensor& pred, const Tensor& gt);
double weighted_f_beta(const Tensor& pred, const Tensor& gt);

}  // namespace adapterseg::oracle

#endif  // ADAPTERSEG_TESTS_ORACLES_HPP
