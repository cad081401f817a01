#pragma once

#include <cstddef>
#include <vector>

#include "pagen/tensor.hpp"

namespace pagen {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // pixels, x1 < x2, y1 < y2

  double area() const { return (x2 - x1) * (y2 - y1); }
  bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);

enum class Domain { source, target };

// One image with its annotations. Reading the annotations of a target-domain
// sample while a training scope is active is counted by the label guard.
class SceneSample {
 public:
  SceneSample() = default;
  SceneSample(Tensor image, std::vector<Box> boxes, std::vector<int> classes, Domain domain);

  Tensor image;  // [3,H,W] in [0,1]
  Domain domain = Domain::source;

  const std::vector<Box>& boxes() const;
  const std::vector<int>& classes() const;

 private:
  void note_read() const;
  std::vector<Box> boxes_;
  std::vector<int> classes_;
};

namespace label_guard {

// Marks the current thread as training for its lifetime.
class TrainingScope {
 public:
  TrainingScope();
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;

 private:
  int previous_;
};

// Suspends an enclosing training scope, e.g. for periodic evaluation.
class EvaluationScope {
 public:
  EvaluationScope();
  ~EvaluationScope();
  EvaluationScope(const EvaluationScope&) = delete;
  EvaluationScope& operator=(const EvaluationScope&) = delete;

 private:
  int previous_;
};

bool training();
// Process-wide count of target annotation reads made inside training scopes.
std::size_t target_label_reads();
void reset_target_label_reads();

}  // namespace label_guard

}  // namespace pagen
