#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pagen/data.hpp"
#include "pagen/generator.hpp"
#include "pagen/scene.hpp"
#include "pagen/tensor.hpp"

// Small convolutional detector, its losses, decoding, mAP evaluation and the
// joint training loop with the amplitude generator.
namespace pagen::detect {

struct DetectorConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::size_t head_hidden = 32;
  std::size_t n_classes = 3;

  std::size_t stride() const { return std::size_t{1} << stage_channels.size(); }
  bool operator==(const DetectorConfig&) const = default;
};

void validate(const DetectorConfig& cfg);

// 3x3 stride-2 conv then pointwise conv, each followed by SiLU.
struct StageParams {
  Tensor conv_weight;  // [c_out, c_in, 3, 3]
  Tensor conv_bias;
  Tensor pw_weight;    // [c_out, c_out, 1, 1]
  Tensor pw_bias;
};

// Two 3x3 towers on the last stage: one feeds objectness and class logits,
// the other the box distances.
struct HeadParams {
  Tensor hidden_weight;  // [head_hidden, c_last, 3, 3]
  Tensor hidden_bias;
  Tensor box_hidden_weight;  // [head_hidden, c_last, 3, 3]
  Tensor box_hidden_bias;
  Tensor obj_weight;     // [1, head_hidden, 1, 1]
  Tensor obj_bias;
  Tensor box_weight;     // [4, head_hidden, 1, 1]
  Tensor box_bias;
  Tensor cls_weight;     // [K, head_hidden, 1, 1]
  Tensor cls_bias;
};

struct DetectorParams {
  DetectorConfig config;
  std::vector<StageParams> stages;
  HeadParams head;

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
  void assign(const std::string& name, Tensor value);
};

DetectorParams init_detector(const DetectorConfig& cfg, std::uint64_t seed);

// One [C_i, H_i, W_i] feature map per stage.
using FeaturePyramid = std::vector<Tensor>;

FeaturePyramid backbone_forward(const DetectorParams& params, const Tensor& image);

struct DensePredictions {
  Tensor objectness;    // [1, Hf, Wf] logits
  Tensor box_deltas;    // [4, Hf, Wf] ltrb distances as fractions of W, H, W, H
  Tensor class_logits;  // [K, Hf, Wf]
};

DensePredictions head_forward(const DetectorParams& params, const FeaturePyramid& pyramid);

// Per-cell training targets. A cell is positive when its center lies inside a
// box; overlapping boxes go to the smallest one.
struct CellTargets {
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<double> objectness;        // [Hf*Wf]
  std::vector<double> ltrb;              // [4*Hf*Wf]
  std::vector<unsigned char> box_mask;   // [4*Hf*Wf]
  std::vector<int> labels;               // [Hf*Wf], -1 on negatives
  std::size_t positives = 0;
};

CellTargets encode_targets(std::span<const Box> boxes, std::span<const int> classes,
                           std::size_t image_h, std::size_t image_w, std::size_t grid_h,
                           std::size_t grid_w);

struct DetectionLoss {
  Tensor rpn;  // objectness BCE + box L1 on positives
  Tensor roi;  // class cross-entropy on positives
  Tensor total() const;
};

DetectionLoss detection_loss(const DensePredictions& preds, const CellTargets& targets);
DetectionLoss detection_loss(const DensePredictions& preds, const SceneSample& truth);

// Stage-averaged mean squared error between two pyramids.
Tensor feature_alignment_loss(const FeaturePyramid& src, const FeaturePyramid& adapted);

Tensor total_loss(const Tensor& l_det, const Tensor& l_fa, double lambda);

struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;
  std::size_t cell = 0;  // tie-break key
};

// Greedy per-class suppression of boxes with IoU above `iou_thresh`. Output is
// ordered by descending score, ties by ascending cell.
std::vector<Detection> nms(std::vector<Detection> candidates, double iou_thresh);

// Score = sigmoid(objectness) * max softmax class probability.
std::vector<Detection> decode_and_nms(const DensePredictions& preds, std::size_t image_h,
                                      std::size_t image_w, double score_thresh,
                                      double iou_thresh);

struct MapReport {
  std::vector<double> ap;        // per class; NaN for classes absent from the truth
  std::vector<std::size_t> n_truth;
  double map = 0.0;
};

MapReport evaluate_map(std::span<const std::vector<Detection>> detections,
                       std::span<const SceneSample> truths, std::size_t n_classes,
                       double iou_thresh = 0.5);

// All-point interpolated AP of a ranked list of TP flags over `n_truth` truths.
double average_precision(std::span<const double> scores, std::span<const unsigned char> tp,
                         std::size_t n_truth);

std::vector<Detection> detect(const DetectorParams& params, const Tensor& image,
                              double score_thresh, double iou_thresh);

// Runs the detector over `samples` on `threads` workers and scores it.
MapReport evaluate_detector(const DetectorParams& params, std::span<const SceneSample> samples,
                            double score_thresh, double iou_thresh, std::size_t threads = 1);

// Mean-pooled last-stage features, one row per image.
std::vector<std::vector<double>> embed(const DetectorParams& params,
                                       std::span<const Tensor> images);

enum class TrainMode { pagen, fda, source_only };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);

struct TrainConfig {
  std::size_t steps = 5000;
  double lr = 0.005;
  double pagen_lr = 1e-2;    // generator step size
  double pagen_clip = 1.0;   // generator gradient norm cap; 0 disables
  double momentum = 0.9;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::pagen;
  double fda_beta = 0.05;
  std::size_t eval_every = 0;  // 0: evaluate only after the last step
  double score_thresh = 0.05;
  double nms_iou = 0.5;
  std::size_t threads = 1;     // evaluation workers
  generator::PAGenConfig pagen;
  DetectorConfig detector;
};

void validate(const TrainConfig& cfg);

struct LossRecord {
  std::size_t step = 0;
  double l_det_s = 0, l_det_a = 0, l_fa = 0, total = 0;
};

struct EvalRecord {
  std::size_t step = 0;
  MapReport target;
};

struct TrainResult {
  DetectorParams detector;
  generator::PAGenParams generator;  // untouched in fda / source_only mode
  std::vector<LossRecord> losses;
  std::vector<EvalRecord> evals;
  std::size_t target_label_reads = 0;
};

using StepCallback = std::function<void(const LossRecord&)>;

// Target annotations are read only inside evaluation scopes; the guard count
// observed over the run is reported in the result.
TrainResult train(const TrainConfig& cfg, const data::Dataset& data,
                  const StepCallback& on_step = {});

}  // namespace pagen::detect
