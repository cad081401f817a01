#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pagen/checkpoint.hpp"
#include "pagen/config.hpp"
#include "pagen/data.hpp"
#include "pagen/detect.hpp"
#include "pagen/embedding.hpp"
#include "pagen/fda.hpp"
#include "pagen/generator.hpp"
#include "pagen/gradcheck_suite.hpp"
#include "pagen/ops.hpp"
#include "pagen/serialize.hpp"
#include "pagen/spectral.hpp"

namespace fs = std::filesystem;
using namespace pagen;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

// Exclusive marker file in an output directory, removed on scope exit.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw UsageError("output directory " + dir.string() + " is locked by another run (" +
                       path_.string() + ")");
    }
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

std::size_t env_threads() {
  const char* v = std::getenv("PAGEN_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 256) {
    throw UsageError(std::string("PAGEN_THREADS must be an integer in [1,256], got \"") + v + "\"");
  }
  return static_cast<std::size_t>(n);
}

// Config file (optional) then `--key value` / `--key=value` overrides.
RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& extras) {
  RunConfig cfg;
  if (!config_path.empty()) apply_config_file(cfg, config_path);
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw UsageError("unexpected argument: " + arg);
    std::string key = arg.substr(2), value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else {
      if (i + 1 >= extras.size()) throw UsageError("missing value for --" + key);
      value = extras[++i];
    }
    apply_setting(cfg, key, value);
  }
  cfg.train.threads = env_threads();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string eval_table(const detect::MapReport& r) {
  std::ostringstream out;
  out << "class  n_truth  AP\n";
  for (std::size_t c = 0; c < r.ap.size(); ++c) {
    out << c << "      " << r.n_truth[c] << "      " << fixed(r.ap[c]) << "\n";
  }
  out << "mAP@0.5 " << fixed(r.map) << "\n";
  return out.str();
}

std::string eval_csv_header(std::size_t n_classes) {
  std::string h = "step,map";
  for (std::size_t c = 0; c < n_classes; ++c) h += ",ap_" + std::to_string(c);
  return h + "\n";
}

std::string eval_csv_row(std::size_t step, const detect::MapReport& r) {
  std::string row = std::to_string(step) + "," + num(r.map);
  for (double ap : r.ap) row += "," + (std::isnan(ap) ? std::string("nan") : num(ap));
  return row + "\n";
}

// ---- decompose / recompose -------------------------------------------------

int cmd_decompose(const std::string& image_path, const std::string& out_dir) {
  const Tensor img = data::load_ppm(image_path);
  const auto spec = spectral::dft2(img);
  const Tensor phase = spectral::phase(spec);
  const Tensor amp = spectral::amplitude(spec);
  fs::create_directories(out_dir);
  io::save_tensor((fs::path(out_dir) / "phase.pgtn").string(), phase);
  io::save_tensor((fs::path(out_dir) / "amplitude.pgtn").string(), amp);

  // log1p amplitude with DC at the center, each channel scaled to its maximum.
  const Tensor shifted = spectral::center_shift(amp);
  const std::size_t c = img.dim(0), plane = img.dim(1) * img.dim(2);
  std::vector<double> preview(shifted.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double peak = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      preview[ch * plane + i] = std::log1p(shifted[ch * plane + i]);
      peak = std::max(peak, preview[ch * plane + i]);
    }
    // Constant channels carry energy only at DC; float noise elsewhere is dropped.
    for (std::size_t i = 0; i < plane; ++i) {
      double& v = preview[ch * plane + i];
      v = peak > 0.0 && v > 1e-9 * peak ? v / peak : 0.0;
    }
  }
  data::save_ppm((fs::path(out_dir) / "amplitude_preview.ppm").string(),
                 Tensor(img.shape(), std::move(preview)));
  std::cout << "decomposed " << image_path << " shape " << shape_to_string(img.shape()) << "\n";
  return kOk;
}

int cmd_recompose(const std::string& phase_path, const std::string& amp_path,
                  const std::string& out_path) {
  const Tensor phase = io::load_tensor(phase_path);
  const Tensor amp = io::load_tensor(amp_path);
  const Tensor img = ops::clip(spectral::idft2_from_polar(phase, amp), 0.0, 1.0);
  data::save_ppm(out_path, img);
  return kOk;
}

// ---- adapt -----------------------------------------------------------------

int cmd_adapt(const std::string& src_path, const std::string& tgt_path, const std::string& method,
              double beta, const std::string& checkpoint, const std::string& out_path,
              const std::string& tensor_out) {
  const Tensor src = data::load_ppm(src_path);
  const Tensor tgt = data::load_ppm(tgt_path);
  if (src.shape() != tgt.shape()) {
    throw UsageError("source and target shapes differ: " + shape_to_string(src.shape()) + " vs " +
                     shape_to_string(tgt.shape()));
  }
  Tensor adapted;
  const auto t0 = std::chrono::steady_clock::now();
  if (method == "fda") {
    adapted = fda::fda_swap(src, tgt, {beta});
  } else if (method == "pagen") {
    if (checkpoint.empty()) throw UsageError("method=pagen requires --checkpoint");
    if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
    const auto params = io::load_checkpoint(checkpoint);
    autograd::NoGradGuard no_grad;
    adapted = generator::forward(params, src, tgt).adapted;
  } else {
    throw UsageError("unknown method \"" + method + "\" (expected fda or pagen)");
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  data::save_ppm(out_path, adapted);
  if (!tensor_out.empty()) io::save_tensor(tensor_out, adapted);
  std::cout << "adapted " << src_path << " with " << method << " in " << fixed(ms, 3) << " ms\n";
  return kOk;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::vector<std::string>& extras) {
  RunConfig cfg = resolve_config(config_path, extras);
  validate(cfg);
  const fs::path out(cfg.out);
  DirLock lock(out);
  write_file(out / "resolved_config.txt", resolved_config_text(cfg));

  const data::Dataset ds = data::generate_dataset(cfg.dataset);
  std::ofstream loss_csv(out / "loss.csv", std::ios::binary);
  if (!loss_csv) throw FormatError("cannot open loss.csv for writing");
  loss_csv << "step,l_det_s,l_det_a,l_fa,total\n";
  const std::size_t log_every = std::max<std::size_t>(1, cfg.train.steps / 20);
  const auto t0 = std::chrono::steady_clock::now();
  const detect::TrainResult result = detect::train(cfg.train, ds, [&](const detect::LossRecord& r) {
    loss_csv << r.step << "," << num(r.l_det_s) << "," << num(r.l_det_a) << "," << num(r.l_fa)
             << "," << num(r.total) << "\n";
    if (r.step % log_every == 0 || r.step == cfg.train.steps) {
      std::cout << "step " << r.step << "/" << cfg.train.steps << " total " << fixed(r.total)
                << " l_det_s " << fixed(r.l_det_s) << " l_det_a " << fixed(r.l_det_a) << " l_fa "
                << fixed(r.l_fa) << "\n"
                << std::flush;
    }
  });
  loss_csv.close();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::string csv = eval_csv_header(cfg.dataset.n_classes);
  for (const auto& e : result.evals) csv += eval_csv_row(e.step, e.target);
  write_file(out / "eval.csv", csv);
  const detect::MapReport& final_report = result.evals.back().target;
  write_file(out / "eval.txt", "split target, step " + std::to_string(cfg.train.steps) + "\n" +
                                   eval_table(final_report));
  io::save_detector((out / "detector.pgdt").string(), result.detector);
  if (cfg.train.mode == detect::TrainMode::pagen) {
    io::save_checkpoint((out / "generator.pagn").string(), result.generator);
  }
  std::cout << eval_table(final_report) << "target label reads during training "
            << result.target_label_reads << "\ntrained in " << fixed(secs, 1) << " s\n";
  if (result.target_label_reads != 0) {
    std::cerr << "error: training read target annotations\n";
    return kCheckFailed;
  }
  return kOk;
}

// ---- eval ------------------------------------------------------------------

void check_compatible(const detect::DetectorConfig& ckpt, const RunConfig& cfg) {
  const detect::DetectorConfig& want = cfg.train.detector;
  if (ckpt.n_classes != want.n_classes) {
    throw UsageError("checkpoint/config mismatch in n_classes: checkpoint " +
                     std::to_string(ckpt.n_classes) + ", config " + std::to_string(want.n_classes));
  }
  if (ckpt.stage_channels != want.stage_channels) {
    throw UsageError("checkpoint/config mismatch in stage_channels");
  }
  if (ckpt.head_hidden != want.head_hidden) {
    throw UsageError("checkpoint/config mismatch in head_hidden: checkpoint " +
                     std::to_string(ckpt.head_hidden) + ", config " +
                     std::to_string(want.head_hidden));
  }
  if (ckpt.in_channels != 3) throw UsageError("checkpoint/config mismatch in in_channels");
}

// Lines of `image x1 y1 x2 y2 score class`; `#` comments allowed.
std::vector<std::vector<detect::Detection>> read_detections(const std::string& path,
                                                             std::size_t n_images) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open detections file " + path);
  std::vector<std::vector<detect::Detection>> out(n_images);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::size_t image = 0;
    detect::Detection d;
    if (!(ls >> image)) continue;
    if (!(ls >> d.box.x1 >> d.box.y1 >> d.box.x2 >> d.box.y2 >> d.score >> d.class_id)) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected image x1 y1 x2 y2 score class");
    }
    if (image >= n_images) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": image index out of range");
    }
    d.cell = out[image].size();
    out[image].push_back(d);
  }
  return out;
}

int cmd_eval(const std::string& config_path, const std::vector<std::string>& extras,
             const std::string& checkpoint, const std::string& split,
             const std::string& detections_path) {
  RunConfig cfg = resolve_config(config_path, extras);
  validate(cfg);
  if (split != "source" && split != "target") {
    throw UsageError("split must be source or target, got \"" + split + "\"");
  }
  const data::Dataset ds = data::generate_dataset(cfg.dataset);
  const std::vector<SceneSample>& samples = split == "source" ? ds.source : ds.target;

  detect::MapReport report;
  if (!detections_path.empty()) {
    const auto dets = read_detections(detections_path, samples.size());
    report = detect::evaluate_map(dets, samples, cfg.dataset.n_classes, cfg.train.nms_iou);
  } else {
    if (checkpoint.empty()) throw UsageError("eval requires --checkpoint or --detections");
    if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
    const detect::DetectorParams det = io::load_detector(checkpoint);
    check_compatible(det.config, cfg);
    report = detect::evaluate_detector(det, samples, cfg.train.score_thresh, cfg.train.nms_iou,
                                       cfg.train.threads);
  }
  const fs::path out(cfg.out);
  DirLock lock(out);
  write_file(out / "eval.csv", eval_csv_header(cfg.dataset.n_classes) + eval_csv_row(0, report));
  const std::string table = "split " + split + "\n" + eval_table(report);
  write_file(out / "eval.txt", table);
  std::cout << table;
  return kOk;
}

// ---- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const std::string& fault_op) {
  if (!fault_op.empty()) autograd::inject_backward_fault(fault_op);
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_suite(1e-4, 1e-5);
  autograd::inject_backward_fault("");
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::vector<std::string> failing;
  for (const auto& r : results) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", r.max_rel_error);
    std::cout << r.name << std::string(width + 2 - r.name.size(), ' ') << buf << "  "
              << r.coordinates << " coords  " << (r.passed ? "PASS" : "FAIL") << "\n";
    if (!r.passed) failing.push_back(r.name);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << results.size() - failing.size() << "/" << results.size() << " checks passed in "
            << fixed(secs, 1) << " s\n";
  if (failing.empty()) return kOk;
  std::cout << "failing:";
  for (const auto& f : failing) std::cout << " " << f;
  std::cout << "\n";
  return kCheckFailed;
}

// ---- embed -----------------------------------------------------------------

int cmd_embed(const std::string& config_path, const std::vector<std::string>& extras,
              const std::string& detector_path, const std::string& generator_path,
              std::size_t count) {
  RunConfig cfg = resolve_config(config_path, extras);
  validate(cfg);
  for (const std::string& p : {detector_path, generator_path}) {
    if (p.empty()) throw UsageError("embed requires --detector and --generator");
    if (!fs::exists(p)) throw UsageError("checkpoint not found: " + p);
  }
  const detect::DetectorParams det = io::load_detector(detector_path);
  check_compatible(det.config, cfg);
  const generator::PAGenParams gen = io::load_checkpoint(generator_path);
  const data::Dataset ds = data::generate_dataset(cfg.dataset);
  const std::size_t n = std::min({count, ds.source.size(), ds.target.size()});
  if (n == 0) throw UsageError("embed: count must be >= 1");

  std::vector<Tensor> src, adapted, tgt;
  {
    autograd::NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; ++i) {
      src.push_back(ds.source[i].image);
      tgt.push_back(ds.target[i].image);
      adapted.push_back(generator::forward(gen, ds.source[i].image, ds.target[i].image).adapted);
    }
  }
  const auto e_src = detect::embed(det, src);
  const auto e_ad = detect::embed(det, adapted);
  const auto e_tgt = detect::embed(det, tgt);

  const fs::path out(cfg.out);
  DirLock lock(out);
  const std::pair<const char*, const embedding::Rows*> sets[] = {
      {"source", &e_src}, {"adapted", &e_ad}, {"target", &e_tgt}};
  std::string rows_csv = "set,index";
  for (std::size_t j = 0; j < e_src.front().size(); ++j) rows_csv += ",f" + std::to_string(j);
  rows_csv += "\n";
  embedding::Rows all;
  for (const auto& [name, rows] : sets) {
    for (std::size_t i = 0; i < rows->size(); ++i) {
      rows_csv += std::string(name) + "," + std::to_string(i);
      for (double v : (*rows)[i]) rows_csv += "," + num(v);
      rows_csv += "\n";
      all.push_back((*rows)[i]);
    }
  }
  write_file(out / "embeddings.csv", rows_csv);
  const embedding::Projection proj = embedding::pca(all, 2);
  std::string pca_csv = "set,index,pc1,pc2\n";
  std::size_t k = 0;
  for (const auto& [name, rows] : sets) {
    for (std::size_t i = 0; i < rows->size(); ++i, ++k) {
      pca_csv += std::string(name) + "," + std::to_string(i) + "," + num(proj.projected[k][0]) +
                 "," + num(proj.projected[k][1]) + "\n";
    }
  }
  write_file(out / "pca.csv", pca_csv);
  const double d_st = embedding::centroid_distance(e_src, e_tgt);
  const double d_at = embedding::centroid_distance(e_ad, e_tgt);
  const std::string summary = "centroid_distance source-target " + num(d_st) +
                              "\ncentroid_distance adapted-target " + num(d_at) + "\n";
  write_file(out / "centroids.txt", summary);
  std::cout << summary;
  return kOk;
}

// ---- paramcount / generate -------------------------------------------------

int cmd_paramcount(const std::string& config_path, const std::vector<std::string>& extras) {
  const RunConfig cfg = resolve_config(config_path, extras);
  const generator::PAGenConfig& g = cfg.train.pagen;
  generator::validate(g);
  std::cout << "pagen parameters " << generator::param_count(g) << "\n";
  std::cout << "stored scalars " << generator::stored_scalar_count(generator::init_params(g, 0))
            << "\n";
  return kOk;
}

int cmd_generate(const std::string& config_path, const std::vector<std::string>& extras) {
  const RunConfig cfg = resolve_config(config_path, extras);
  data::validate(cfg.dataset);
  DirLock lock(cfg.out);
  data::write_dataset(cfg.dataset, cfg.out);
  std::cout << "wrote " << cfg.dataset.size() << " scenes to " << cfg.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phase-guided amplitude generation for frequency-domain style adaptation"};
  app.require_subcommand(1);

  std::string a, b, c, method = "fda", checkpoint, out, tensor_out, config, split = "target",
                    detections, fault, detector_path, generator_path;
  double beta = 0.01;
  std::size_t count = 100;

  auto* decompose = app.add_subcommand("decompose", "Write phase/amplitude tensors and a preview");
  decompose->add_option("image", a, "input PPM")->required();
  decompose->add_option("out_dir", b, "output directory")->required();

  auto* recompose = app.add_subcommand("recompose", "Rebuild an image from phase/amplitude tensors");
  recompose->add_option("phase", a, "phase PGTN")->required();
  recompose->add_option("amplitude", b, "amplitude PGTN")->required();
  recompose->add_option("out", c, "output PPM")->required();

  auto* adapt = app.add_subcommand("adapt", "Restyle a source image toward a target image");
  adapt->add_option("--src", a, "source PPM")->required();
  adapt->add_option("--tgt", b, "target PPM")->required();
  adapt->add_option("--method", method, "fda or pagen");
  adapt->add_option("--beta", beta, "FDA band fraction in [0,1]");
  adapt->add_option("--checkpoint", checkpoint, "generator checkpoint (pagen)");
  adapt->add_option("--out", out, "output PPM")->required();
  adapt->add_option("--tensor-out", tensor_out, "also write the unquantized result as PGTN");

  const auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "key=value config file");
    sub->allow_extras();
    sub->footer("Any config key may be overridden with --key value.");
  };
  auto* train = app.add_subcommand("train", "Train the detector (and generator)");
  with_config(train);
  auto* eval = app.add_subcommand("eval", "Score a detector checkpoint on a split");
  with_config(eval);
  eval->add_option("--checkpoint", checkpoint, "detector checkpoint");
  eval->add_option("--split", split, "source or target");
  eval->add_option("--detections", detections, "score a detections file instead of a detector");
  auto* gradcheck = app.add_subcommand("gradcheck", "Check every gradient against finite differences");
  gradcheck->add_option("--inject-fault", fault, "negate the backward pass of one op (test hook)");
  auto* embed = app.add_subcommand("embed", "Export last-stage embeddings, PCA and centroid distances");
  with_config(embed);
  embed->add_option("--detector", detector_path, "detector checkpoint")->required();
  embed->add_option("--generator", generator_path, "generator checkpoint")->required();
  embed->add_option("--count", count, "images per set");
  auto* paramcount = app.add_subcommand("paramcount", "Print the generator parameter count");
  with_config(paramcount);
  auto* generate = app.add_subcommand("generate", "Write the synthetic dataset as PPM files");
  with_config(generate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*decompose) return cmd_decompose(a, b);
    if (*recompose) return cmd_recompose(a, b, c);
    if (*adapt) return cmd_adapt(a, b, method, beta, checkpoint, out, tensor_out);
    if (*train) return cmd_train(config, train->remaining());
    if (*eval) return cmd_eval(config, eval->remaining(), checkpoint, split, detections);
    if (*gradcheck) return cmd_gradcheck(fault);
    if (*embed) return cmd_embed(config, embed->remaining(), detector_path, generator_path, count);
    if (*paramcount) return cmd_paramcount(config, paramcount->remaining());
    if (*generate) return cmd_generate(config, generate->remaining());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
