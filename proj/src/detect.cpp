#include "pagen/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "pagen/fda.hpp"
#include "pagen/ops.hpp"

namespace pagen::detect {

void validate(const DetectorConfig& cfg) {
  if (cfg.in_channels == 0 || cfg.stage_channels.empty() || cfg.head_hidden == 0 ||
      cfg.n_classes == 0) {
    throw ConfigError("detector: channels, stages, head width and class count must be positive");
  }
  for (std::size_t c : cfg.stage_channels) {
    if (c == 0) throw ConfigError("detector: stage channel counts must be positive");
  }
}

namespace {

Tensor uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), DType::f64, true);
}

// Uniform bound sqrt(6 / fan_in) for convs followed by an activation.
const double kHeGain = std::sqrt(6.0);

Tensor as_chw(const Tensor& x) { return ops::reshape(x, {x.dim(1), x.dim(2), x.dim(3)}); }
Tensor as_batch(const Tensor& x) { return ops::reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<std::pair<std::string, Tensor>> DetectorParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string p = "stage" + std::to_string(i) + ".";
    out.emplace_back(p + "conv.weight", stages[i].conv_weight);
    out.emplace_back(p + "conv.bias", stages[i].conv_bias);
    out.emplace_back(p + "pw.weight", stages[i].pw_weight);
    out.emplace_back(p + "pw.bias", stages[i].pw_bias);
  }
  out.emplace_back("head.hidden.weight", head.hidden_weight);
  out.emplace_back("head.hidden.bias", head.hidden_bias);
  out.emplace_back("head.box_hidden.weight", head.box_hidden_weight);
  out.emplace_back("head.box_hidden.bias", head.box_hidden_bias);
  out.emplace_back("head.obj.weight", head.obj_weight);
  out.emplace_back("head.obj.bias", head.obj_bias);
  out.emplace_back("head.box.weight", head.box_weight);
  out.emplace_back("head.box.bias", head.box_bias);
  out.emplace_back("head.cls.weight", head.cls_weight);
  out.emplace_back("head.cls.bias", head.cls_bias);
  return out;
}

std::vector<Tensor> DetectorParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void DetectorParams::assign(const std::string& name, Tensor value) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string p = "stage" + std::to_string(i) + ".";
    if (name == p + "conv.weight") { stages[i].conv_weight = std::move(value); return; }
    if (name == p + "conv.bias") { stages[i].conv_bias = std::move(value); return; }
    if (name == p + "pw.weight") { stages[i].pw_weight = std::move(value); return; }
    if (name == p + "pw.bias") { stages[i].pw_bias = std::move(value); return; }
  }
  Tensor* slots[] = {&head.hidden_weight,     &head.hidden_bias, &head.box_hidden_weight,
                     &head.box_hidden_bias,   &head.obj_weight,  &head.obj_bias,
                     &head.box_weight,        &head.box_bias,    &head.cls_weight,
                     &head.cls_bias};
  const char* names[] = {"head.hidden.weight",     "head.hidden.bias", "head.box_hidden.weight",
                         "head.box_hidden.bias",   "head.obj.weight",  "head.obj.bias",
                         "head.box.weight",        "head.box.bias",    "head.cls.weight",
                         "head.cls.bias"};
  for (std::size_t i = 0; i < 10; ++i) {
    if (name == names[i]) { *slots[i] = std::move(value); return; }
  }
  throw FormatError("detector: unknown parameter tensor \"" + name + "\"");
}

DetectorParams init_detector(const DetectorConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  DetectorParams p;
  p.config = cfg;
  std::size_t c_in = cfg.in_channels;
  for (std::size_t c : cfg.stage_channels) {
    StageParams s;
    s.conv_weight = uniform({c, c_in, 3, 3}, c_in * 9, rng, kHeGain);
    s.conv_bias = uniform({c}, c_in * 9, rng);
    s.pw_weight = uniform({c, c, 1, 1}, c, rng, kHeGain);
    s.pw_bias = uniform({c}, c, rng);
    p.stages.push_back(std::move(s));
    c_in = c;
  }
  const std::size_t hh = cfg.head_hidden;
  p.head.hidden_weight = uniform({hh, c_in, 3, 3}, c_in * 9, rng, kHeGain);
  p.head.hidden_bias = uniform({hh}, c_in * 9, rng);
  p.head.box_hidden_weight = uniform({hh, c_in, 3, 3}, c_in * 9, rng, kHeGain);
  p.head.box_hidden_bias = uniform({hh}, c_in * 9, rng);
  p.head.obj_weight = uniform({1, hh, 1, 1}, hh, rng);
  p.head.obj_bias = uniform({1}, hh, rng);
  p.head.box_weight = uniform({4, hh, 1, 1}, hh, rng);
  p.head.box_bias = uniform({4}, hh, rng);
  p.head.cls_weight = uniform({cfg.n_classes, hh, 1, 1}, hh, rng);
  p.head.cls_bias = uniform({cfg.n_classes}, hh, rng);
  return p;
}

FeaturePyramid backbone_forward(const DetectorParams& params, const Tensor& image) {
  const DetectorConfig& cfg = params.config;
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels) {
    throw DimensionError("backbone: expected [" + std::to_string(cfg.in_channels) +
                         ",H,W] image, got " + shape_to_string(image.shape()));
  }
  const std::size_t stride = cfg.stride();
  if (image.dim(1) % stride != 0 || image.dim(2) % stride != 0) {
    throw ConfigError("backbone: image extents " + std::to_string(image.dim(1)) + "x" +
                      std::to_string(image.dim(2)) + " are not divisible by " +
                      std::to_string(stride));
  }
  FeaturePyramid pyramid;
  // Fixed input standardization: [0,1] pixels to roughly zero mean, unit range.
  Tensor x = ops::add_scalar(ops::scale(as_batch(image), 4.0), -2.0);
  for (const StageParams& s : params.stages) {
    x = ops::silu(ops::conv2d(x, s.conv_weight, s.conv_bias, {2, 1, 1}));
    x = ops::silu(ops::conv2d(x, s.pw_weight, s.pw_bias));
    pyramid.push_back(as_chw(x));
  }
  return pyramid;
}

DensePredictions head_forward(const DetectorParams& params, const FeaturePyramid& pyramid) {
  if (pyramid.empty()) throw DimensionError("head: empty feature pyramid");
  const HeadParams& h = params.head;
  const Tensor x = as_batch(pyramid.back());
  const Tensor hidden = ops::silu(ops::conv2d(x, h.hidden_weight, h.hidden_bias, {1, 1, 1}));
  const Tensor box_hidden =
      ops::silu(ops::conv2d(x, h.box_hidden_weight, h.box_hidden_bias, {1, 1, 1}));
  return {as_chw(ops::conv2d(hidden, h.obj_weight, h.obj_bias)),
          as_chw(ops::conv2d(box_hidden, h.box_weight, h.box_bias)),
          as_chw(ops::conv2d(hidden, h.cls_weight, h.cls_bias))};
}

CellTargets encode_targets(std::span<const Box> boxes, std::span<const int> classes,
                           std::size_t image_h, std::size_t image_w, std::size_t grid_h,
                           std::size_t grid_w) {
  if (boxes.size() != classes.size()) {
    throw DimensionError("encode_targets: boxes and classes differ in length");
  }
  CellTargets t;
  t.grid_h = grid_h;
  t.grid_w = grid_w;
  const std::size_t n = grid_h * grid_w;
  t.objectness.assign(n, 0.0);
  t.ltrb.assign(4 * n, 0.0);
  t.box_mask.assign(4 * n, 0);
  t.labels.assign(n, -1);
  const double sy = static_cast<double>(image_h) / static_cast<double>(grid_h);
  const double sx = static_cast<double>(image_w) / static_cast<double>(grid_w);
  const double fh = static_cast<double>(image_h), fw = static_cast<double>(image_w);
  for (std::size_t i = 0; i < grid_h; ++i) {
    for (std::size_t j = 0; j < grid_w; ++j) {
      const double cy = (static_cast<double>(i) + 0.5) * sy;
      const double cx = (static_cast<double>(j) + 0.5) * sx;
      std::ptrdiff_t best = -1;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const Box& box = boxes[b];
        if (!(cx > box.x1 && cx < box.x2 && cy > box.y1 && cy < box.y2)) continue;
        if (best < 0 || box.area() < boxes[static_cast<std::size_t>(best)].area()) {
          best = static_cast<std::ptrdiff_t>(b);
        }
      }
      if (best < 0) continue;
      const Box& box = boxes[static_cast<std::size_t>(best)];
      const std::size_t cell = i * grid_w + j;
      t.objectness[cell] = 1.0;
      t.labels[cell] = classes[static_cast<std::size_t>(best)];
      const double d[4] = {(cx - box.x1) / fw, (cy - box.y1) / fh, (box.x2 - cx) / fw,
                           (box.y2 - cy) / fh};
      for (std::size_t k = 0; k < 4; ++k) {
        t.ltrb[k * n + cell] = d[k];
        t.box_mask[k * n + cell] = 1;
      }
      ++t.positives;
    }
  }
  return t;
}

Tensor DetectionLoss::total() const { return ops::add(rpn, roi); }

DetectionLoss detection_loss(const DensePredictions& preds, const CellTargets& targets) {
  const std::size_t gh = preds.objectness.dim(1), gw = preds.objectness.dim(2);
  if (gh != targets.grid_h || gw != targets.grid_w) {
    throw DimensionError("detection_loss: prediction grid does not match the targets");
  }
  const std::size_t n = gh * gw;
  const Tensor obj_t(preds.objectness.shape(), targets.objectness);
  const Tensor box_t(preds.box_deltas.shape(), targets.ltrb);
  const Tensor bce = ops::bce_with_logits(preds.objectness, obj_t);
  const Tensor l1 = ops::masked_l1(preds.box_deltas, box_t, targets.box_mask);
  const std::size_t k = preds.class_logits.dim(0);
  const Tensor ce = ops::cross_entropy(ops::reshape(preds.class_logits, {k, n}), targets.labels);
  return {ops::add(bce, l1), ce};
}

DetectionLoss detection_loss(const DensePredictions& preds, const SceneSample& truth) {
  const CellTargets t =
      encode_targets(truth.boxes(), truth.classes(), truth.image.dim(1), truth.image.dim(2),
                     preds.objectness.dim(1), preds.objectness.dim(2));
  return detection_loss(preds, t);
}

Tensor feature_alignment_loss(const FeaturePyramid& src, const FeaturePyramid& adapted) {
  if (src.empty() || src.size() != adapted.size()) {
    throw DimensionError("feature_alignment_loss: pyramids have " + std::to_string(src.size()) +
                         " and " + std::to_string(adapted.size()) + " stages");
  }
  Tensor acc = ops::mse(src[0], adapted[0]);
  for (std::size_t i = 1; i < src.size(); ++i) acc = ops::add(acc, ops::mse(src[i], adapted[i]));
  return ops::scale(acc, 1.0 / static_cast<double>(src.size()));
}

Tensor total_loss(const Tensor& l_det, const Tensor& l_fa, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("total_loss: lambda must be >= 0");
  return ops::add(l_det, ops::scale(l_fa, lambda));
}

namespace {

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.cell < b.cell;
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> candidates, double iou_thresh) {
  std::stable_sort(candidates.begin(), candidates.end(), ranks_before);
  std::vector<Detection> kept;
  for (const Detection& d : candidates) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_thresh;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> decode_and_nms(const DensePredictions& preds, std::size_t image_h,
                                      std::size_t image_w, double score_thresh,
                                      double iou_thresh) {
  const std::size_t gh = preds.objectness.dim(1), gw = preds.objectness.dim(2), n = gh * gw;
  const std::size_t k = preds.class_logits.dim(0);
  const double fh = static_cast<double>(image_h), fw = static_cast<double>(image_w);
  const double sy = fh / static_cast<double>(gh), sx = fw / static_cast<double>(gw);
  std::vector<Detection> cands;
  for (std::size_t cell = 0; cell < n; ++cell) {
    const double obj = sigmoid(preds.objectness[cell]);
    double mx = preds.class_logits[cell];
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (preds.class_logits[c * n + cell] > mx) {
        mx = preds.class_logits[c * n + cell];
        best = c;
      }
    }
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(preds.class_logits[c * n + cell] - mx);
    const double score = obj / z;
    if (!(score > score_thresh)) continue;
    const double cy = (static_cast<double>(cell / gw) + 0.5) * sy;
    const double cx = (static_cast<double>(cell % gw) + 0.5) * sx;
    const auto d = [&](std::size_t i) { return std::max(0.0, preds.box_deltas[i * n + cell]); };
    Box box{std::clamp(cx - d(0) * fw, 0.0, fw), std::clamp(cy - d(1) * fh, 0.0, fh),
            std::clamp(cx + d(2) * fw, 0.0, fw), std::clamp(cy + d(3) * fh, 0.0, fh)};
    if (!(box.x2 > box.x1) || !(box.y2 > box.y1)) continue;
    cands.push_back({box, score, static_cast<int>(best), cell});
  }
  return nms(std::move(cands), iou_thresh);
}

double average_precision(std::span<const double> scores, std::span<const unsigned char> tp,
                         std::size_t n_truth) {
  if (n_truth == 0) throw EvaluationError("average_precision: no ground truth");
  // Precision/recall points at the end of each run of equal scores.
  std::vector<double> recall{0.0}, precision{1.0};
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    hits += tp[i] ? 1 : 0;
    if (i + 1 < scores.size() && scores[i + 1] == scores[i]) continue;
    recall.push_back(static_cast<double>(hits) / static_cast<double>(n_truth));
    precision.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
  }
  for (std::size_t i = precision.size() - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  for (std::size_t i = 1; i < recall.size(); ++i) ap += (recall[i] - recall[i - 1]) * precision[i];
  return ap;
}

MapReport evaluate_map(std::span<const std::vector<Detection>> detections,
                       std::span<const SceneSample> truths, std::size_t n_classes,
                       double iou_thresh) {
  if (detections.size() != truths.size()) {
    throw EvaluationError("evaluate_map: " + std::to_string(detections.size()) +
                          " detection lists for " + std::to_string(truths.size()) + " images");
  }
  MapReport report;
  report.ap.assign(n_classes, std::numeric_limits<double>::quiet_NaN());
  report.n_truth.assign(n_classes, 0);
  for (const SceneSample& t : truths) {
    for (int c : t.classes()) {
      if (c < 0 || static_cast<std::size_t>(c) >= n_classes) {
        throw EvaluationError("evaluate_map: truth class " + std::to_string(c) + " out of range");
      }
      ++report.n_truth[static_cast<std::size_t>(c)];
    }
  }
  struct Ranked {
    double score;
    std::size_t image;
    Box box;
  };
  std::size_t present = 0;
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (report.n_truth[c] == 0) continue;
    std::vector<Ranked> ranked;
    for (std::size_t img = 0; img < detections.size(); ++img) {
      for (const Detection& d : detections[img]) {
        if (d.class_id == static_cast<int>(c)) ranked.push_back({d.score, img, d.box});
      }
    }
    // Canonical order: score, then box geometry, then image.
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.score != b.score) return a.score > b.score;
      const double ka[4] = {a.box.x1, a.box.y1, a.box.x2, a.box.y2};
      const double kb[4] = {b.box.x1, b.box.y1, b.box.x2, b.box.y2};
      for (int i = 0; i < 4; ++i) {
        if (ka[i] != kb[i]) return ka[i] < kb[i];
      }
      return a.image < b.image;
    });
    std::vector<std::vector<unsigned char>> matched(truths.size());
    for (std::size_t img = 0; img < truths.size(); ++img) {
      matched[img].assign(truths[img].boxes().size(), 0);
    }
    std::vector<double> scores;
    std::vector<unsigned char> tp;
    for (const Ranked& r : ranked) {
      const auto& boxes = truths[r.image].boxes();
      const auto& classes = truths[r.image].classes();
      double best = -1.0;
      std::ptrdiff_t best_idx = -1;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        if (classes[b] != static_cast<int>(c) || matched[r.image][b]) continue;
        const double o = iou(r.box, boxes[b]);
        if (o > best) {
          best = o;
          best_idx = static_cast<std::ptrdiff_t>(b);
        }
      }
      const bool hit = best_idx >= 0 && best >= iou_thresh;
      if (hit) matched[r.image][static_cast<std::size_t>(best_idx)] = 1;
      scores.push_back(r.score);
      tp.push_back(hit ? 1 : 0);
    }
    report.ap[c] = average_precision(scores, tp, report.n_truth[c]);
    sum += report.ap[c];
    ++present;
  }
  if (present == 0) throw EvaluationError("evaluate_map: no ground-truth boxes at all");
  report.map = sum / static_cast<double>(present);
  return report;
}

std::vector<Detection> detect(const DetectorParams& params, const Tensor& image,
                              double score_thresh, double iou_thresh) {
  autograd::NoGradGuard no_grad;
  const DensePredictions preds = head_forward(params, backbone_forward(params, image));
  return decode_and_nms(preds, image.dim(1), image.dim(2), score_thresh, iou_thresh);
}

namespace {

// Calls fn(i) for i in [0, n) on up to `threads` workers. Each worker gets
// its own no-grad scope.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    autograd::NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      autograd::NoGradGuard no_grad;
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

MapReport evaluate_detector(const DetectorParams& params, std::span<const SceneSample> samples,
                            double score_thresh, double iou_thresh, std::size_t threads) {
  std::vector<std::vector<Detection>> dets(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    dets[i] = detect(params, samples[i].image, score_thresh, iou_thresh);
  });
  return evaluate_map(dets, samples, params.config.n_classes);
}

std::vector<std::vector<double>> embed(const DetectorParams& params,
                                       std::span<const Tensor> images) {
  autograd::NoGradGuard no_grad;
  std::vector<std::vector<double>> rows;
  for (const Tensor& img : images) {
    const Tensor last = backbone_forward(params, img).back();
    const std::size_t c = last.dim(0), plane = last.dim(1) * last.dim(2);
    std::vector<double> row(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < plane; ++i) row[ch] += last[ch * plane + i];
      row[ch] /= static_cast<double>(plane);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::pagen: return "pagen";
    case TrainMode::fda: return "fda";
    case TrainMode::source_only: return "source_only";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "pagen") return TrainMode::pagen;
  if (name == "fda") return TrainMode::fda;
  if (name == "source_only") return TrainMode::source_only;
  throw ConfigError("mode must be one of pagen, fda, source_only; got \"" + name + "\"");
}

void validate(const TrainConfig& cfg) {
  if (cfg.steps == 0) throw ConfigError("train: steps must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (!(cfg.pagen_lr > 0.0)) throw ConfigError("train: pagen_lr must be > 0");
  if (!(cfg.pagen_clip >= 0.0)) throw ConfigError("train: pagen_clip must be >= 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("train: momentum must lie in [0,1)");
  if (!(cfg.lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
  if (!(cfg.score_thresh >= 0.0 && cfg.score_thresh <= 1.0)) throw ConfigError("train: score_thresh must lie in [0,1]");
  if (!(cfg.nms_iou >= 0.0 && cfg.nms_iou <= 1.0)) throw ConfigError("train: nms_iou must lie in [0,1]");
  fda::validate({cfg.fda_beta});
  generator::validate(cfg.pagen);
  validate(cfg.detector);
}

namespace {

// Momentum SGD over one parameter group. A positive clip rescales the
// group's gradient to at most that global L2 norm before the update.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double lr, double momentum, double clip = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), clip_(clip) {
    for (const Tensor& p : params_) velocity_.emplace_back(p.numel(), 0.0);
  }

  void step() {
    double scale = 1.0;
    if (clip_ > 0.0) {
      double sq = 0.0;
      for (const Tensor& p : params_) {
        for (double g : p.grad()) sq += g * g;
      }
      const double norm = std::sqrt(sq);
      if (norm > clip_) scale = clip_ / norm;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;
      std::span<const double> g = p.grad();
      std::span<double> w = p.mutable_data();
      std::vector<double>& v = velocity_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = momentum_ * v[k] + scale * g[k];
        w[k] -= lr_ * v[k];
      }
      p.zero_grad();
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_, momentum_, clip_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    purpose};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const data::Dataset& data, const StepCallback& on_step) {
  validate(cfg);
  if (data.source.empty() || data.target.empty()) {
    throw ConfigError("train: source and target splits must both be non-empty");
  }
  if (cfg.detector.n_classes < data.spec.n_classes) {
    throw ConfigError("train: detector n_classes is smaller than the dataset's");
  }
  const std::size_t reads_before = label_guard::target_label_reads();
  label_guard::TrainingScope training;

  TrainResult result;
  result.detector = init_detector(cfg.detector, derive_seed(cfg.seed, 1));
  result.generator = generator::init_params(cfg.pagen, derive_seed(cfg.seed, 2));
  Sgd det_opt(result.detector.tensors(), cfg.lr, cfg.momentum);
  Sgd gen_opt(cfg.mode == TrainMode::pagen ? result.generator.tensors() : std::vector<Tensor>{},
              cfg.pagen_lr, cfg.momentum, cfg.pagen_clip);
  std::mt19937_64 rng(derive_seed(cfg.seed, 3));
  std::uniform_int_distribution<std::size_t> pick_src(0, data.source.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_tgt(0, data.target.size() - 1);

  const auto run_eval = [&](std::size_t step) {
    label_guard::EvaluationScope eval;
    result.evals.push_back(
        {step, evaluate_detector(result.detector, data.target, cfg.score_thresh, cfg.nms_iou,
                                 cfg.threads)});
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    autograd::tape().clear();
    const SceneSample& src = data.source[pick_src(rng)];
    const Tensor& tgt_image = data.target[pick_tgt(rng)].image;

    const FeaturePyramid pyr_s = backbone_forward(result.detector, src.image);
    const CellTargets targets = encode_targets(
        src.boxes(), src.classes(), src.image.dim(1), src.image.dim(2),
        pyr_s.back().dim(1), pyr_s.back().dim(2));
    const Tensor l_det_s = detection_loss(head_forward(result.detector, pyr_s), targets).total();

    LossRecord rec;
    rec.step = step;
    Tensor total = l_det_s;
    if (cfg.mode != TrainMode::source_only) {
      const Tensor adapted = cfg.mode == TrainMode::pagen
                                 ? generator::forward(result.generator, src.image, tgt_image).adapted
                                 : fda::fda_swap(src.image, tgt_image, {cfg.fda_beta});
      const FeaturePyramid pyr_a = backbone_forward(result.detector, adapted);
      const Tensor l_det_a = detection_loss(head_forward(result.detector, pyr_a), targets).total();
      const Tensor l_fa = feature_alignment_loss(pyr_s, pyr_a);
      total = total_loss(ops::add(l_det_s, l_det_a), l_fa, cfg.lambda);
      rec.l_det_a = l_det_a.item();
      rec.l_fa = l_fa.item();
    }
    rec.l_det_s = l_det_s.item();
    rec.total = total.item();
    backward(total);
    det_opt.step();
    gen_opt.step();
    result.losses.push_back(rec);
    if (on_step) on_step(rec);
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps) run_eval(step);
  }
  autograd::tape().clear();
  run_eval(cfg.steps);
  result.target_label_reads = label_guard::target_label_reads() - reads_before;
  return result;
}

}  // namespace pagen::detect
