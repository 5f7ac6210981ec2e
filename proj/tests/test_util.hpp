// Small fixtures shared by the unit tests.

#ifndef PISA_TEST_UTIL_HPP_
#define PISA_TEST_UTIL_HPP_

#include <memory>
#include <numeric>
#include <vector>

#include "pisa/problem.hpp"

namespace pisa::testing {

inline std::shared_ptr<const Dataset> Regression(Matrix features, Vector targets) {
  auto d = std::make_shared<Dataset>();
  d->features = std::move(features);
  d->targets = std::move(targets);
  return d;
}

inline std::shared_ptr<const Dataset> Classification(Matrix features, std::vector<int> labels,
                                                     int classes) {
  auto d = std::make_shared<Dataset>();
  d->features = std::move(features);
  d->labels = std::move(labels);
  d->num_classes = classes;
  return d;
}

inline IndexList Range(std::size_t n) {
  IndexList out(n);
  std::iota(out.begin(), out.end(), Index{0});
  return out;
}

inline Vector Vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

}  // namespace pisa::testing

#endif  // PISA_TEST_UTIL_HPP_
