#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "fanet/errors.hpp"
#include "fanet/gradcheck_suite.hpp"
#include "fanet/image_io.hpp"
#include "fanet/metrics.hpp"
#include "fanet/train.hpp"
#include "run_config.hpp"
#include "synthetic.hpp"

namespace fanet::cli {
namespace fs = std::filesystem;

namespace {

WarningSink warnings_to(std::ostream& err) {
  return [&err](const std::string& msg) { err << "warning: " << msg << '\n'; };
}

FaNet open_model(const fs::path& path, Checkpoint* info) {
  try {
    return load_model(path, info);
  } catch (const CorruptContainerError& e) {
    throw IncompatibleCheckpointError("corrupt checkpoint: " + std::string(e.what()));
  }
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& x : items) s += (s.empty() ? "" : ",") + x;
  return s;
}

void require_same_classes(const std::vector<std::string>& checkpoint,
                          const std::vector<std::string>& dataset) {
  if (checkpoint != dataset) {
    throw IncompatibleCheckpointError("checkpoint classes [" + join(checkpoint) + "] (" +
                                      std::to_string(checkpoint.size()) +
                                      ") differ from dataset classes [" + join(dataset) +
                                      "] (" + std::to_string(dataset.size()) + ")");
  }
}

// First architectural field that differs, if any.
std::optional<std::string> config_difference(const FaNetConfig& a, const FaNetConfig& b) {
  const auto &ba = a.backbone, &bb = b.backbone;
  const auto &fa = a.fcssam, &fb = b.fcssam;
  if (ba.input_height != bb.input_height || ba.input_width != bb.input_width ||
      ba.input_channels != bb.input_channels) {
    return "input extents";
  }
  if (ba.widths != bb.widths || ba.strides != bb.strides) return "backbone stages";
  if (fa.reduction != fb.reduction) return "fcssam.reduction";
  if (fa.retention != fb.retention) return "fcssam.retention";
  if (fa.wiring != fb.wiring) return "fcssam.wiring";
  if (fa.gate_form != fb.gate_form) return "fcssam.gate";
  if (fa.share_cam_dense != fb.share_cam_dense) return "fcssam.share_cam_dense";
  if (fa.share_sc != fb.share_sc) return "fcssam.share_sc";
  if (fa.sc_activation != fb.sc_activation) return "fcssam.sc_activation";
  if (fa.sam_kernel != fb.sam_kernel) return "fcssam.sam_kernel";
  if (a.num_classes != b.num_classes) return "number of classes";
  return std::nullopt;
}

// Paths under `root` are stored relative to it so a manifest survives a
// moved dataset.
DatasetIndex relative_to(const DatasetIndex& index, const fs::path& root) {
  DatasetIndex out = index;
  for (Sample& s : out.samples) {
    const fs::path rel = s.path.lexically_relative(root);
    if (!rel.empty() && *rel.begin() != "..") s.path = rel;
  }
  return out;
}

std::ofstream open_text(const fs::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + file.string() + "' for writing");
  return out;
}

void print_report(std::ostream& out, const EvalReport& r,
                  const std::vector<std::string>& names) {
  out << "samples   " << r.confusion.total() << '\n';
  out << "accuracy  " << format_number(r.accuracy) << '\n';
  out << "precision " << format_number(r.precision) << "  (macro)\n";
  out << "recall    " << format_number(r.recall) << "  (macro)\n";
  out << "f1        " << format_number(r.f1) << "  (macro)\n";
  if (r.auc) out << "auc       " << format_number(*r.auc) << '\n';
  out << "class precision recall f1 support\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    out << names[c] << ' ' << format_number(m.precision) << ' ' << format_number(m.recall)
        << ' ' << format_number(m.f1) << ' ' << m.support << '\n';
  }
  out << "confusion (rows true, columns predicted)\n";
  for (std::size_t i = 0; i < r.confusion.num_classes; ++i) {
    out << names[i];
    for (std::size_t j = 0; j < r.confusion.num_classes; ++j) out << ' ' << r.confusion.at(i, j);
    out << '\n';
  }
}

}  // namespace

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  const RunConfig rc = load_run_config(o.config);

  Checkpoint info;
  std::optional<FaNet> resumed;
  if (o.resume) {
    resumed.emplace(open_model(*o.resume, &info));
    if (!info.state) {
      throw IncompatibleCheckpointError("checkpoint '" + o.resume->string() +
                                        "' has no training state to resume");
    }
  }

  const WarningSink warn = warnings_to(err);
  DatasetIndex full = index_dataset(rc.data_root, warn);
  if (rc.skip_undecodable) full = drop_undecodable(full, warn);
  DatasetIndex train, val;
  if (rc.val_root) {
    train = full;
    train.split = Split::kTrain;
    val = index_dataset(*rc.val_root, warn);
    if (rc.skip_undecodable) val = drop_undecodable(val, warn);
    val.split = Split::kVal;
    if (val.class_names != train.class_names) {
      throw DataError("validation classes [" + join(val.class_names) +
                      "] differ from training classes [" + join(train.class_names) + "]");
    }
  } else {
    std::tie(train, val) = split_validation(full, rc.val_fraction, rc.train.seed);
  }
  if (train.size() == 0 || val.size() == 0) throw DataError("no usable samples to train on");

  const FaNetConfig mc = rc.model_config(full.num_classes());
  mc.validate();
  if (resumed) {
    if (auto diff = config_difference(info.config, mc)) {
      throw IncompatibleCheckpointError("checkpoint differs from the run config in " + *diff);
    }
    require_same_classes(info.class_names, full.class_names);
  }
  TrainConfig tc = rc.train_config();
  tc.class_names = full.class_names;

  // Everything is validated; side effects start here.
  fs::create_directories(rc.output_dir);
  open_text(rc.output_dir / "run_config.txt") << format_run_config(rc);
  {
    const DatasetIndex t = relative_to(train, rc.data_root);
    const DatasetIndex v = relative_to(val, rc.data_root);
    write_split_manifest(rc.output_dir / "split.csv", {&t, &v});
  }

  FaNet model = resumed ? std::move(*resumed) : FaNet(mc);
  out << "classes " << join(full.class_names) << "; train " << train.size() << ", val "
      << val.size() << "; parameters " << model.parameters().size() << " tensors\n";
  out << "epoch train_loss train_acc val_loss val_acc\n";
  const TrainingLog log =
      fit(model, train, val, tc, resumed ? info.state : std::nullopt, [&](const EpochRecord& r) {
        out << r.epoch << ' ' << format_number(r.train_loss) << ' '
            << format_number(r.train_acc) << ' ' << format_number(r.val_loss) << ' '
            << format_number(r.val_acc) << '\n';
        out.flush();
      });
  out << "best epoch " << log.best_epoch << " (val_loss " << format_number(log.best_val_loss)
      << ")" << (log.stopped_early ? ", stopped early" : "") << '\n';
  out << "wrote " << (rc.output_dir / "best.fant").string() << ", "
      << (rc.output_dir / "last.fant").string() << ", "
      << (rc.output_dir / "training_log.csv").string() << '\n';
  return kExitOk;
}

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  Checkpoint info;
  const FaNet model = open_model(o.checkpoint, &info);
  DatasetIndex index;
  if (o.split) {
    const Split which = parse_split(o.subset);
    const DatasetIndex listed = read_split_manifest(*o.split, which, {});
    for (const auto& name : listed.class_names) {
      if (std::find(info.class_names.begin(), info.class_names.end(), name) ==
          info.class_names.end()) {
        throw IncompatibleCheckpointError("manifest class '" + name +
                                          "' is unknown to the checkpoint (classes [" +
                                          join(info.class_names) + "])");
      }
    }
    index = read_split_manifest(*o.split, which, info.class_names);
    for (Sample& s : index.samples) {
      if (s.path.is_relative()) s.path = o.data / s.path;
    }
  } else {
    index = index_dataset(o.data, warnings_to(err));
    require_same_classes(info.class_names, index.class_names);
  }
  if (index.size() == 0) throw DataError("no samples to evaluate");

  const BackboneConfig& bc = model.config().backbone;
  ImageLoader loader(bc.input_height, bc.input_width, false);
  const EvalResult r = evaluate(model, index, 32, loader);
  const std::size_t k = model.config().num_classes;
  EvalReport report = classification_metrics(confusion_matrix(r.labels, r.predictions, k));
  try {
    if (k == 2) {
      std::vector<double> scores;
      for (const auto& p : r.probabilities) scores.push_back(p[1]);
      report.auc = roc_auc(scores, r.labels);
    } else {
      report.auc = roc_auc_one_vs_rest(r.probabilities, r.labels, k);
    }
  } catch (const DataError& e) {
    err << "warning: auc omitted: " << e.what() << '\n';
  }

  const fs::path dir = o.out ? *o.out : o.checkpoint.parent_path() / "eval";
  fs::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", report, info.class_names);
  write_confusion_csv(dir / "confusion.csv", report.confusion, info.class_names);
  {
    auto csv = open_text(dir / "predictions.csv");
    csv << "path,true,predicted";
    for (const auto& name : info.class_names) csv << ",p_" << name;
    csv << '\n';
    for (std::size_t i = 0; i < r.labels.size(); ++i) {
      csv << index.samples[i].path.string() << ',' << info.class_names[r.labels[i]] << ','
          << info.class_names[r.predictions[i]];
      for (double p : r.probabilities[i]) csv << ',' << format_number(p);
      csv << '\n';
    }
  }
  print_report(out, report, info.class_names);
  out << "wrote " << (dir / "metrics.csv").string() << '\n';
  return kExitOk;
}

int cmd_explain(const ExplainOptions& o, std::ostream& out, std::ostream&) {
  Checkpoint info;
  const FaNet model = open_model(o.checkpoint, &info);
  const BackboneConfig& bc = model.config().backbone;
  ImageLoader loader(bc.input_height, bc.input_width, false);
  const Tensor image = loader.load(o.image);
  const AttentionDiagnostics d = model.extract_attention_diagnostics(image);

  fs::create_directories(o.out);
  {
    auto csv = open_text(o.out / "cam.csv");
    csv << "channel,weight\n";
    for (std::size_t c = 0; c < d.cam_weights.size(); ++c) {
      csv << c << ',' << format_number(d.cam_weights[c]) << '\n';
    }
  }
  write_pgm(o.out / "sam_avg.pgm", d.sam_avg_map);
  write_pgm(o.out / "sam_max.pgm", d.sam_max_map);
  {
    auto csv = open_text(o.out / "gates.csv");
    csv << "channel,alpha,gate,selected\n";
    for (std::size_t c = 0; c < d.gate_values.size(); ++c) {
      const bool kept = std::binary_search(d.selected_indices.begin(), d.selected_indices.end(), c);
      csv << c << ',' << format_number(d.alpha[c]) << ',' << format_number(d.gate_values[c])
          << ',' << (kept ? 1 : 0) << '\n';
    }
  }
  {
    auto txt = open_text(o.out / "selected.txt");
    for (std::size_t i : d.selected_indices) txt << i << '\n';
  }
  const std::string& label = info.class_names.at(d.predicted_label);
  {
    auto txt = open_text(o.out / "prediction.txt");
    txt << "label " << label << '\n' << "index " << d.predicted_label << '\n';
    for (std::size_t c = 0; c < d.probabilities.size(); ++c) {
      txt << "p_" << info.class_names[c] << ' ' << format_number(d.probabilities[c]) << '\n';
    }
  }
  out << "predicted " << label << " (p=" << format_number(d.probabilities[d.predicted_label])
      << "); heatmaps " << d.sam_avg_map.dim(0) << "x" << d.sam_avg_map.dim(1) << "; kept "
      << d.selected_indices.size() << " of " << d.gate_values.size() << " channels\n";
  out << "wrote " << o.out.string() << '\n';
  return kExitOk;
}

int cmd_project(const ProjectOptions& o, std::ostream& out, std::ostream& err) {
  const FaNet model = open_model(o.checkpoint, nullptr);
  const DatasetIndex index = index_dataset(o.data, warnings_to(err));
  if (index.size() < 4) {
    throw DataError("projection needs at least 4 samples, '" + o.data.string() + "' has " +
                    std::to_string(index.size()));
  }
  const BackboneConfig& bc = model.config().backbone;
  ImageLoader loader(bc.input_height, bc.input_width, false);
  std::vector<double> rows;
  std::vector<std::size_t> labels;
  std::size_t width = 0;
  BatchIterator it(index, 16, std::nullopt, loader);
  while (auto batch = it.next()) {
    const Tensor f = model.extract_gap_features(batch->images);
    width = f.dim(1);
    rows.insert(rows.end(), f.values().begin(), f.values().end());
    labels.insert(labels.end(), batch->labels.begin(), batch->labels.end());
  }
  const PcaResult pca = pca_project(Tensor({labels.size(), width}, std::move(rows)), 3);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  write_projection_csv(o.out, pca.projection, labels, index.class_names);
  out << "samples " << labels.size() << ", feature width " << width << "\n";
  out << "explained variance ratio";
  for (double r : pca.explained_ratio) out << ' ' << format_number(r);
  out << "\nwrote " << o.out.string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream& err) {
  if (!o.corrupt_op.empty()) {
    const auto ops = gradcheck_ops();
    if (std::find(ops.begin(), ops.end(), o.corrupt_op) == ops.end()) {
      throw ConfigError("unknown op '" + o.corrupt_op + "' for --corrupt-op");
    }
  }
  const auto outcomes = run_gradcheck_suite(o.seed, o.corrupt_op);
  std::vector<std::string> failed;
  char line[128];
  for (const auto& r : outcomes) {
    std::snprintf(line, sizeof(line), "%-26s %.6e %s\n", r.op.c_str(), r.max_rel_error,
                  r.passed ? "ok" : "FAIL");
    out << line;
    if (!r.passed) failed.push_back(r.op);
  }
  if (!failed.empty()) {
    err << "error code=" << kExitGradcheck << " kind=gradcheck: max relative error above "
        << kGradcheckTolerance << " in " << join(failed) << '\n';
    return kExitGradcheck;
  }
  return kExitOk;
}

int cmd_synth(const SynthOptions& o, std::ostream& out, std::ostream&) {
  write_synthetic_dataset(o.out, o.per_class, o.size, o.seed);
  out << "wrote " << 2 * o.per_class << " images to " << o.out.string() << '\n';
  return kExitOk;
}

namespace {

int report_error(std::ostream& err, int code, const char* kind, const std::string& msg) {
  std::string flat = msg;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  err << "error code=" << code << " kind=" << kind << ": " << flat << '\n';
  return code;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FA-Net: attention-gated CNN classifier"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* t = app.add_subcommand("train", "train from a run config");
  t->add_option("--config", train.config, "run config file")->required();
  t->add_option("--resume", train.resume, "checkpoint to continue from");

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", eval.checkpoint)->required();
  e->add_option("--data", eval.data, "dataset root")->required();
  e->add_option("--split", eval.split, "split manifest written by train");
  e->add_option("--subset", eval.subset, "manifest subset: train|val|test|all")
      ->capture_default_str();
  e->add_option("--out", eval.out, "output directory for CSVs");

  ExplainOptions explain;
  auto* x = app.add_subcommand("explain", "export attention maps for one image");
  x->add_option("--checkpoint", explain.checkpoint)->required();
  x->add_option("--image", explain.image)->required();
  x->add_option("--out", explain.out, "output directory")->required();

  ProjectOptions project;
  auto* p = app.add_subcommand("project", "3-D PCA of pooled features");
  p->add_option("--checkpoint", project.checkpoint)->required();
  p->add_option("--data", project.data, "dataset root")->required();
  p->add_option("--out", project.out, "output CSV")->required();

  GradcheckOptions gradcheck;
  auto* g = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  g->add_option("--seed", gradcheck.seed)->capture_default_str();
  g->add_option("--corrupt-op", gradcheck.corrupt_op, "test hook: break one op's gradient");

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "write a synthetic two-class PGM dataset");
  s->add_option("--out", synth.out, "dataset root")->required();
  s->add_option("--per-class", synth.per_class)->capture_default_str();
  s->add_option("--size", synth.size)->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h, out, err);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h, out, err);
  } catch (const CLI::ParseError& pe) {
    return report_error(err, kExitConfig, "usage", pe.what());
  }

  try {
    if (*t) return cmd_train(train, out, err);
    if (*e) return cmd_eval(eval, out, err);
    if (*x) return cmd_explain(explain, out, err);
    if (*p) return cmd_project(project, out, err);
    if (*g) return cmd_gradcheck(gradcheck, out, err);
    if (*s) return cmd_synth(synth, out, err);
  } catch (const ConfigError& ex) {
    return report_error(err, kExitConfig, "config", ex.what());
  } catch (const NumericError& ex) {
    return report_error(err, kExitNumeric, "numeric", ex.what());
  } catch (const IncompatibleCheckpointError& ex) {
    return report_error(err, kExitIncompatibleCheckpoint, "checkpoint", ex.what());
  } catch (const CorruptContainerError& ex) {
    return report_error(err, kExitData, "corrupt", ex.what());
  } catch (const Error& ex) {
    return report_error(err, kExitData, "data", ex.what());
  } catch (const fs::filesystem_error& ex) {
    return report_error(err, kExitData, "io", ex.what());
  }
  return kExitConfig;
}

}  // namespace fanet::cli
