#ifndef SPECSIM_TESTS_GRADCHECK_H_
#define SPECSIM_TESTS_GRADCHECK_H_

// Finite-difference checks for the autodiff primitives, shared by the unit
// tests and the acceptance suite.

#include <algorithm>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "specsim/autodiff.h"
#include "test_util.h"

namespace specsim::testing {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Checks every input's gradient of <proj, op(inputs)> against central
// differences at `min_coords` randomly chosen coordinates (all coordinates
// when there are fewer). Returns the worst relative error.
double check_op(const Builder& build, std::vector<Tensor> inputs,
                std::size_t min_coords = 100, unsigned seed = 1) {
  Tensor proj;
  auto forward = [&](Tape& tape, std::vector<Var>& vars) {
    vars.clear();
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, true));
    return build(tape, vars);
  };
  auto objective = [&]() {
    Tape tape;
    std::vector<Var> vars;
    const Var out = forward(tape, vars);
    const Tensor& v = tape.value(out);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += proj[i] * v[i];
    return acc;
  };

  // Analytic gradients, seeding the reverse sweep with a random projection.
  Tape tape;
  std::vector<Var> vars;
  const Var out = forward(tape, vars);
  const std::size_t n = tape.value(out).size();
  proj = random_tensor({n}, seed + 100);
  const Var flat = tape.flatten(out);
  const Var scalar = tape.affine(flat, tape.leaf(proj.reshaped({1, n}), false),
                                 tape.leaf(Tensor({1}), false));
  tape.backward(scalar);
  std::vector<Tensor> grads;
  for (Var v : vars) grads.push_back(tape.grad(v));

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < inputs.size(); ++t)
    for (std::size_t i = 0; i < inputs[t].size(); ++i) coords.emplace_back(t, i);
  std::mt19937_64 gen(seed);
  std::shuffle(coords.begin(), coords.end(), gen);
  if (coords.size() > min_coords) coords.resize(min_coords);

  double worst = 0.0;
  for (auto [t, i] : coords) {
    std::vector<double> storage(inputs[t].values().begin(), inputs[t].values().end());
    auto f = [&]() {
      for (std::size_t j = 0; j < storage.size(); ++j) inputs[t][j] = storage[j];
      return objective();
    };
    const double fd = testing::central_difference(f, storage, i);
    for (std::size_t j = 0; j < storage.size(); ++j) inputs[t][j] = storage[j];
    worst = std::max(worst, rel_error(grads[t][i], fd));
  }
  return worst;
}

std::size_t coordinate_count(const std::vector<Tensor>& inputs) {
  std::size_t n = 0;
  for (const Tensor& t : inputs) n += t.size();
  return n;
}

struct GradCase {
  std::string name;
  Builder build;
  std::vector<Tensor> inputs;
  std::size_t coords = 100;
};

// Lets test listings show the case name instead of raw bytes.
inline void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

// One case per primitive, each covering at least 100 coordinates (the
// softmax cross-entropy case is split over several labels).
inline std::vector<GradCase> primitive_grad_cases() {
  using V = const std::vector<Var>&;
  std::vector<GradCase> cases{
      {"add", [](Tape& t, V v) { return t.add(v[0], v[1]); },
       {random_tensor({8, 9}, 1), random_tensor({8, 9}, 2)}},
      {"multiply", [](Tape& t, V v) { return t.multiply(v[0], v[1]); },
       {random_tensor({8, 9}, 3), random_tensor({8, 9}, 4)}},
      {"scale", [](Tape& t, V v) { return t.scale(v[0], -2.5); },
       {random_tensor({11, 11}, 5)}},
      {"matmul", [](Tape& t, V v) { return t.matmul(v[0], v[1]); },
       {random_tensor({7, 9}, 6), random_tensor({9, 5}, 7)}},
      {"conv2d 3x3", [](Tape& t, V v) { return t.conv2d(v[0], v[1], v[2]); },
       {random_tensor({2, 7, 6}, 8), random_tensor({3, 2, 3, 3}, 9), random_tensor({3}, 10)},
       150},
      {"conv2d 5x5", [](Tape& t, V v) { return t.conv2d(v[0], v[1], v[2]); },
       {random_tensor({1, 8, 8}, 11), random_tensor({2, 1, 5, 5}, 12),
        random_tensor({2}, 13)}},
      {"relu", [](Tape& t, V v) { return t.relu(v[0]); }, {random_tensor({12, 12}, 14)}},
      {"max_pool2d", [](Tape& t, V v) { return t.max_pool2d(v[0]); },
       {random_tensor({2, 9, 8}, 15)}},
      {"flatten", [](Tape& t, V v) { return t.flatten(v[0]); },
       {random_tensor({3, 6, 6}, 16)}},
      {"affine", [](Tape& t, V v) { return t.affine(v[0], v[1], v[2]); },
       {random_tensor({12}, 17), random_tensor({8, 12}, 18), random_tensor({8}, 19)}},
  };
  const Tensor left = random_tensor({5, 6}, 20);
  const Tensor right = random_tensor({4, 7}, 21);
  cases.push_back({"bilinear",
                   [left, right](Tape& t, V v) { return t.bilinear(v[0], left, right); },
                   {random_tensor({3, 6, 7}, 22)}});
  for (std::size_t label : {0u, 3u, 9u, 14u, 19u}) {
    cases.push_back({"softmax_cross_entropy label " + std::to_string(label),
                     [label](Tape& t, V v) { return t.softmax_cross_entropy(v[0], label); },
                     {random_tensor({20}, 23 + static_cast<unsigned>(label), -3, 3)}});
  }
  cases.push_back({"composed network",
                   [](Tape& t, V v) {
                     const Var h = t.max_pool2d(t.relu(t.conv2d(v[0], v[1], v[2])));
                     return t.softmax_cross_entropy(t.affine(t.flatten(h), v[3], v[4]), 2);
                   },
                   {random_tensor({1, 6, 6}, 30), random_tensor({2, 1, 3, 3}, 31),
                    random_tensor({2}, 32), random_tensor({4, 18}, 33), random_tensor({4}, 34)},
                   120});
  return cases;
}

}  // namespace specsim::testing

#endif  // SPECSIM_TESTS_GRADCHECK_H_
