#include "pagen/scene.hpp"

#include <algorithm>
#include <atomic>

namespace pagen {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace label_guard {
void count_read();
namespace {
thread_local int training_depth = 0;
std::atomic<std::size_t> reads{0};
}  // namespace

void count_read() { reads.fetch_add(1); }

TrainingScope::TrainingScope() : previous_(training_depth) { ++training_depth; }
TrainingScope::~TrainingScope() { training_depth = previous_; }
EvaluationScope::EvaluationScope() : previous_(training_depth) { training_depth = 0; }
EvaluationScope::~EvaluationScope() { training_depth = previous_; }

bool training() { return training_depth > 0; }
std::size_t target_label_reads() { return reads.load(); }
void reset_target_label_reads() { reads.store(0); }

}  // namespace label_guard

SceneSample::SceneSample(Tensor image_, std::vector<Box> boxes, std::vector<int> classes,
                         Domain domain_)
    : image(std::move(image_)), domain(domain_), boxes_(std::move(boxes)),
      classes_(std::move(classes)) {
  if (boxes_.size() != classes_.size()) {
    throw DimensionError("SceneSample: " + std::to_string(boxes_.size()) + " boxes but " +
                         std::to_string(classes_.size()) + " classes");
  }
}

void SceneSample::note_read() const {
  if (domain == Domain::target && label_guard::training()) label_guard::count_read();
}

const std::vector<Box>& SceneSample::boxes() const {
  note_read();
  return boxes_;
}

const std::vector<int>& SceneSample::classes() const {
  note_read();
  return classes_;
}

}  // namespace pagen
