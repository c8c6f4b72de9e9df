#include "ebmgan/cli.hpp"

#include "ebmgan/errors.hpp"
#include "ebmgan/eval.hpp"
#include "ebmgan/io.hpp"
#include "ebmgan/oracle.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

namespace ebmgan {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Helpers

std::string first_line(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  std::getline(in, line);
  return line;
}

bool is_afv_file(const fs::path& path) { return first_line(path).starts_with("EBMGAN-AFV "); }

void require_dim(const DiscriminatorModel& d, const Dataset& data, const fs::path& path) {
  if (data.dim() != d.spec.input_dim())
    throw UsageError(fmt::format("dataset '{}' has {} features but the checkpoint's discriminator expects {}",
                                 path.string(), data.dim(), d.spec.input_dim()));
}

std::vector<int> require_labels(const std::optional<std::vector<int>>& labels, const std::string& what) {
  if (!labels) throw UsageError(fmt::format("{} has no labels", what));
  return *labels;
}

std::vector<int> require_labels(const std::vector<int>& labels, const std::string& what) {
  if (labels.empty() || std::ranges::any_of(labels, [](int l) { return l < 0; }))
    throw UsageError(fmt::format("{} has no labels", what));
  return labels;
}

std::vector<int> afv_file_labels(const AfvFile& file) {
  if (file.labels.empty()) return std::vector<int>(file.vectors.size(), -1);
  return file.labels;
}

// ---------------------------------------------------------------------------
// gen-dataset / convert-csv

struct GenDatasetArgs {
  std::string kind;
  std::size_t n = 1000;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::string out;
  bool csv = false;
};

int cmd_gen_dataset(const GenDatasetArgs& a, std::ostream& out) {
  const Dataset data = gen_dataset(a.kind, a.n, a.noise, a.seed);
  if (a.csv)
    write_csv_dataset(a.out, data);
  else
    write_dataset(a.out, data);
  fmt::print(out, "wrote {} rows of {} to {}\n", data.count(), data.name, a.out);
  return kExitOk;
}

struct ConvertCsvArgs {
  std::string in;
  std::string out;
  bool labels = false;
  std::string name = "csv";
};

int cmd_convert_csv(const ConvertCsvArgs& a, std::ostream& out) {
  const Dataset data = read_csv_dataset(a.in, a.labels, a.name);
  write_dataset(a.out, data);
  fmt::print(out, "wrote {} rows x {} features to {}\n", data.count(), data.dim(), a.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string val;
  std::string out;
  std::string resume;
};

fs::path checkpoint_path(const fs::path& dir, std::uint64_t iteration) {
  return dir / fmt::format("checkpoint-{:08}.ckpt", iteration);
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const Dataset data = read_dataset(a.data);
  std::optional<Checkpoint> ckpt;
  if (!a.resume.empty()) ckpt = load_checkpoint(a.resume);
  TrainConfig config;
  if (!a.config.empty())
    config = read_config(a.config);
  else if (ckpt)
    config = ckpt->config;

  Dataset train_set, val_set;
  if (a.val.empty()) {
    std::tie(train_set, val_set) = split_dataset(data, 0.8, config.seed);
  } else {
    train_set = data;
    val_set = read_dataset(a.val);
    if (val_set.dim() != train_set.dim())
      throw UsageError(fmt::format("validation set has {} features, training set has {}", val_set.dim(),
                                   train_set.dim()));
  }

  const fs::path dir(a.out);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.txt");
    cfg << format_config(config);
  }

  const fs::path metrics_path = dir / "metrics.jsonl";
  std::optional<Trainer> trainer;
  std::optional<MetricsWriter> metrics;
  if (ckpt) {
    if (!(ckpt->state.g.spec == generator_spec(config, train_set.dim())) ||
        !(ckpt->state.d.spec == discriminator_spec(config, train_set.dim())) ||
        ckpt->state.d.spectral_enabled != config.spectral_norm)
      throw UsageError("config does not describe the checkpoint's architecture");
    // Keep records up to the checkpoint; later ones are regenerated.
    std::vector<MetricsRecord> kept;
    if (fs::exists(metrics_path)) {
      const MetricsLog log = read_metrics_log(metrics_path);
      for (const auto& r : log.records)
        if (r.iteration <= ckpt->state.iteration) kept.push_back(r);
    }
    metrics.emplace(metrics_path);
    for (const auto& r : kept) metrics->write(r);
    trainer.emplace(config, train_set.features, val_set.features, ckpt->state);
  } else {
    metrics.emplace(metrics_path);
    trainer.emplace(config, train_set.features, val_set.features);
  }

  std::optional<MetricsRecord> last;
  try {
    while (!trainer->done()) {
      const MetricsRecord r = trainer->step();
      metrics->write(r);
      last = r;
      const auto it = trainer->state().iteration;
      if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0 && it < config.iterations)
        save_checkpoint(checkpoint_path(dir, it), config, trainer->state());
    }
  } catch (const NumericalError& e) {
    fmt::print(err, "error: training diverged: {}\n", e.what());
    save_checkpoint(dir / "diverged.ckpt", config, trainer->state());
    return kExitDiverged;
  }

  const TrainState& state = trainer->state();
  save_checkpoint(dir / "final.ckpt", config, state);
  const std::string id = checkpoint_id(state);

  nlohmann::ordered_json summary;
  summary["format"] = "ebmgan-train-summary";
  summary["version"] = 1;
  summary["iterations"] = state.iteration;
  summary["checkpoint"] = "final.ckpt";
  summary["checkpoint_id"] = id;
  summary["train_examples"] = train_set.count();
  summary["val_examples"] = val_set.count();
  summary["d_parameters"] = state.d.params.size();
  summary["g_parameters"] = state.g.params.size();
  if (last) summary["final_metrics"] = nlohmann::ordered_json::parse(metrics_to_json_line(*last));
  {
    std::ofstream s(dir / "summary.json");
    s << summary.dump(2) << "\n";
  }
  fmt::print(out, "trained {} iterations; checkpoint {} ({})\n", state.iteration, (dir / "final.ckpt").string(), id);
  if (last)
    fmt::print(out, "final d_loss {} g_loss {} delta_g {}\n", last->d_loss, last->g_loss, last->delta_g);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// extract-afv

struct ExtractArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::uint64_t stats_seed = 0;
  std::optional<std::size_t> samples;
  std::optional<double> epsilon;
  std::string stats_in;
  std::string stats_out;
};

int cmd_extract_afv(const ExtractArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Dataset data = read_dataset(a.data);
  require_dim(ckpt.state.d, data, a.data);

  FisherStats stats;
  if (!a.stats_in.empty()) {
    stats = read_fisher_stats(a.stats_in, ckpt.state.d.params.layout);
    if (!stats.checkpoint_id.empty() && stats.checkpoint_id != ckpt.id)
      throw UsageError(fmt::format("statistics in '{}' belong to checkpoint {}, not {}", a.stats_in,
                                   stats.checkpoint_id, ckpt.id));
  } else {
    stats = fisher_stats_estimate(ckpt.state.d, ckpt.state.g, a.samples.value_or(ckpt.config.stats_samples),
                                  a.epsilon.value_or(ckpt.config.stats_epsilon), a.stats_seed);
  }
  stats.checkpoint_id = ckpt.id;

  AfvFile file;
  file.checkpoint_id = ckpt.id;
  file.epsilon = stats.epsilon;
  file.vectors = extract_afvs(ckpt.state.d, stats, data.features);
  if (data.labels) file.labels = *data.labels;
  write_afv_file(a.out, file);
  const std::string stats_out = a.stats_out.empty() ? a.out + ".stats" : a.stats_out;
  write_fisher_stats(stats_out, stats);
  fmt::print(out, "wrote {} AFVs of length {} to {} (checkpoint {}); statistics in {}\n", file.vectors.size(),
             stats.size(), a.out, ckpt.id, stats_out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// distance

struct DistanceArgs {
  std::string afv;
  std::vector<std::size_t> pair;
  bool sets_by_label = false;
  double temperature = 10.0;
  bool similarity = false;
  bool per_parameter = false;
};

int cmd_distance(const DistanceArgs& a, std::ostream& out) {
  if (a.pair.empty() == !a.sets_by_label) throw UsageError("distance needs exactly one of --pair or --sets-by-label");
  const AfvFile file = read_afv_file(a.afv);
  const double p = static_cast<double>(file.vectors.front().values.size());
  const double scale = a.per_parameter ? 1.0 / p : 1.0;

  if (!a.pair.empty()) {
    const auto i = a.pair[0], j = a.pair[1];
    if (i >= file.vectors.size() || j >= file.vectors.size())
      throw UsageError(fmt::format("--pair index out of range (file has {} vectors)", file.vectors.size()));
    const double d2 = fisher_distance_squared(file.vectors[i].values, file.vectors[j].values) * scale;
    fmt::print(out, "distance,{}\n", std::sqrt(d2));
    fmt::print(out, "squared_distance,{}\n", d2);
    fmt::print(out, "similarity,{}\n", similarity_from_distance(d2, a.temperature));
    return kExitOk;
  }

  const auto labels = require_labels(afv_file_labels(file), a.afv);
  const ClassDistanceMatrix m = class_distance_matrix(file.vectors, labels);
  out << "label";
  for (int l : m.labels) out << "," << l;
  out << "\n";
  for (std::size_t r = 0; r < m.size(); ++r) {
    out << m.labels[r];
    for (std::size_t c = 0; c < m.size(); ++c) {
      const double d = m.at(r, c) * scale;
      out << "," << fmt::format("{}", a.similarity ? similarity_from_distance(d, a.temperature) : d);
    }
    out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// classify

struct ClassifyArgs {
  std::string train;
  std::string test;
  std::string checkpoint;
  std::string features = "afv";
  double c = 1.0;
  std::size_t epochs = 500;
  double lr = 1e-3;
  bool standardize = true;
  std::uint64_t stats_seed = 0;
  std::optional<std::size_t> samples;
};

struct LabeledFeatures {
  Tensor x;
  std::vector<int> y;
};

int cmd_classify(const ClassifyArgs& a, std::ostream& out) {
  LabeledFeatures tr, te;
  std::string kind;
  if (is_afv_file(a.train) || is_afv_file(a.test)) {
    if (!(is_afv_file(a.train) && is_afv_file(a.test)))
      throw UsageError("--train and --test must both be AFV files or both be datasets");
    const AfvFile ftr = read_afv_file(a.train), fte = read_afv_file(a.test);
    if (ftr.checkpoint_id != fte.checkpoint_id)
      throw UsageError("training and test AFVs come from different checkpoints");
    tr = {afv_matrix(ftr.vectors), require_labels(afv_file_labels(ftr), a.train)};
    te = {afv_matrix(fte.vectors), require_labels(afv_file_labels(fte), a.test)};
    kind = "afv";
  } else {
    const Dataset dtr = read_dataset(a.train), dte = read_dataset(a.test);
    if (dtr.dim() != dte.dim()) throw UsageError("training and test datasets differ in dimension");
    tr.y = require_labels(dtr.labels, a.train);
    te.y = require_labels(dte.labels, a.test);
    kind = a.features;
    if (kind == "raw") {
      tr.x = dtr.features;
      te.x = dte.features;
    } else if (kind == "dpool" || kind == "afv") {
      if (a.checkpoint.empty()) throw UsageError(fmt::format("--features {} needs --checkpoint", kind));
      const Checkpoint ckpt = load_checkpoint(a.checkpoint);
      require_dim(ckpt.state.d, dtr, a.train);
      if (kind == "dpool") {
        tr.x = dpool_feature_matrix(ckpt.state.d, dtr.features);
        te.x = dpool_feature_matrix(ckpt.state.d, dte.features);
      } else {
        const FisherStats stats = fisher_stats_estimate(ckpt.state.d, ckpt.state.g,
                                                        a.samples.value_or(ckpt.config.stats_samples),
                                                        ckpt.config.stats_epsilon, a.stats_seed);
        tr.x = afv_matrix(extract_afvs(ckpt.state.d, stats, dtr.features));
        te.x = afv_matrix(extract_afvs(ckpt.state.d, stats, dte.features));
      }
    } else {
      throw UsageError(fmt::format("unknown feature kind '{}' (expected raw, dpool, afv)", kind));
    }
  }
  if (a.standardize) {
    const Standardizer s = Standardizer::fit(tr.x);
    tr.x = s.apply(tr.x);
    te.x = s.apply(te.x);
  }
  const LinearSvmModel model = l2svm_train(tr.x, tr.y, SvmOptions{a.c, a.epochs, a.lr});
  fmt::print(out, "features,{}\n", kind);
  fmt::print(out, "dimension,{}\n", tr.x.cols());
  fmt::print(out, "train_accuracy,{}\n", accuracy(l2svm_predict(model, tr.x), tr.y));
  fmt::print(out, "test_accuracy,{}\n", accuracy(l2svm_predict(model, te.x), te.y));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// knn

struct KnnArgs {
  std::string afv;
  std::size_t query = 0;
  std::size_t k = 5;
  bool exclude_self = false;
};

int cmd_knn(const KnnArgs& a, std::ostream& out) {
  const AfvFile file = read_afv_file(a.afv);
  if (a.query >= file.vectors.size())
    throw UsageError(fmt::format("--query index out of range (file has {} vectors)", file.vectors.size()));
  const std::size_t extra = a.exclude_self ? 1 : 0;
  if (a.k < 1 || a.k + extra > file.vectors.size())
    throw UsageError(fmt::format("--k must lie in [1, {}]", file.vectors.size() - extra));
  auto hits = knn_query(file.vectors[a.query].values, file.vectors, a.k + extra);
  if (a.exclude_self) {
    std::erase_if(hits, [&](const Neighbor& n) { return n.id == a.query; });
    hits.resize(a.k);
  }
  const auto labels = afv_file_labels(file);
  out << "rank,index,source_id,label,distance\n";
  for (std::size_t r = 0; r < hits.size(); ++r)
    fmt::print(out, "{},{},{},{},{}\n", r + 1, hits[r].id, file.vectors[hits[r].id].source_id, labels[hits[r].id],
               hits[r].distance);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// monitor

struct MonitorArgs {
  std::string metrics;
  std::string out;
};

int cmd_monitor(const MonitorArgs& a, std::ostream& out, std::ostream& err) {
  const MetricsLog log = read_metrics_log(a.metrics);
  if (log.truncated_tail) fmt::print(err, "warning: ignored an incomplete final line in {}\n", a.metrics);
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw UsageError(fmt::format("cannot write '{}'", a.out));
  }
  std::ostream& sink = a.out.empty() ? out : file;
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
  sink << "iteration,fisher_similarity_train,fisher_similarity_val,delta_g,d_loss,g_loss,mean_d_real,mean_d_fake\n";
  for (const auto& r : log.records)
    sink << fmt::format("{},{},{},{},{},{},{},{}\n", r.iteration, opt(r.fisher_similarity_train),
                        opt(r.fisher_similarity_val), r.delta_g, r.d_loss, r.g_loss, r.mean_d_real, r.mean_d_fake);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// oracle-check

struct OracleArgs {
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
};

int cmd_oracle_check(const OracleArgs& a, std::ostream& out) {
  bool all = true;
  for (const auto& c : run_oracle_checks(a.samples, a.seed)) {
    fmt::print(out, "{} {} value={:.6g} threshold={:.6g}\n", c.passed ? "PASS" : "FAIL", c.name, c.value, c.threshold);
    all = all && c.passed;
  }
  fmt::print(out, "{}\n", all ? "all oracle checks passed" : "some oracle checks failed");
  return all ? kExitOk : kExitFailure;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<OracleCheck> run_oracle_checks(std::size_t n_samples, std::uint64_t seed) {
  require(n_samples >= 2, "oracle checks need at least two samples");
  std::vector<OracleCheck> checks;
  auto add = [&](std::string name, double value, double threshold) {
    checks.push_back({std::move(name), value, threshold, std::isfinite(value) && value <= threshold});
  };
  const double n = static_cast<double>(n_samples);

  // Gaussian: sampled scores against the analytic score and information.
  const oracle::GaussianModel gauss{0.0, 1.0};
  const auto xs = oracle::gaussian_sample(gauss, n_samples, seed);
  ParamLayout gauss_layout;
  gauss_layout.append("mu_sigma", {2});
  std::vector<Gradient> gauss_scores;
  gauss_scores.reserve(n_samples);
  for (double x : xs) {
    const auto s = oracle::gaussian_fisher_score_exact(gauss, x);
    gauss_scores.push_back({s[0], s[1]});
  }
  const FisherStats gstats = fisher_stats_from_gradients(gauss_scores, gauss_layout, 0.0);
  const auto ginfo = oracle::gaussian_fisher_information_exact(gauss);
  add("gaussian.mean_score", std::max(std::abs(gstats.mean_grad.values[0]), std::abs(gstats.mean_grad.values[1])),
      5.0 * std::sqrt(2.0 / n));
  add("gaussian.info_mu_rel_error", std::abs(gstats.diag_info[0] - ginfo[0]) / ginfo[0], 0.03);
  add("gaussian.info_sigma_rel_error", std::abs(gstats.diag_info[1] - ginfo[1]) / ginfo[1], 0.03);
  const auto up = oracle::gaussian_fisher_score_exact(gauss, gauss.mu + 1.0);
  const auto down = oracle::gaussian_fisher_score_exact(gauss, gauss.mu - 1.0);
  add("gaussian.asymmetry", std::abs(up[0] + down[0]) + (up[0] > 0.0 ? 0.0 : 1.0), 0.0);

  // Grid EBM: generator-style sampled statistics against exact enumeration.
  const oracle::GridEbm ebm(oracle::grid_2d(9, 9, -1.0, 1.0), oracle::PolynomialFeatures(2, 2),
                            {0.5, -0.3, -1.0, 0.4, -0.8});
  ParamLayout layout;
  layout.append("theta", {ebm.num_params()});
  std::vector<Gradient> grads;
  grads.reserve(n_samples);
  for (const auto& x : ebm.sample_exact(n_samples, seed)) grads.push_back(ebm.param_gradient(x));
  const FisherStats stats = fisher_stats_from_gradients(grads, layout, 0.0);
  const auto exact_diag = ebm.fisher_information_diag_exact();
  const auto& exact_mean = ebm.expected_gradient();
  double mean_err2 = 0.0, trace = 0.0, diag_err = 0.0;
  for (std::size_t i = 0; i < ebm.num_params(); ++i) {
    mean_err2 += std::pow(stats.mean_grad.values[i] - exact_mean[i], 2);
    trace += exact_diag[i];
    diag_err = std::max(diag_err, std::abs(stats.diag_info[i] - exact_diag[i]) / exact_diag[i]);
  }
  add("grid_ebm.score_rel_error", std::sqrt(mean_err2 / trace), 0.05);
  add("grid_ebm.info_diag_rel_error", diag_err, 0.05);
  return checks;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Energy-based GAN training and Adversarial Fisher Vector tools", "ebmgan"};
  app.require_subcommand(1);

  GenDatasetArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-dataset", "Generate a synthetic 2-D dataset");
  gen_cmd->add_option("--kind", gen.kind, "two-moons, rings, gaussian-mixture-<k>, checkerboard")->required();
  gen_cmd->add_option("-n,--n", gen.n, "Number of examples")->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise, "Noise standard deviation")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output path")->required();
  gen_cmd->add_flag("--csv", gen.csv, "Write CSV instead of the binary format");

  ConvertCsvArgs conv;
  auto* conv_cmd = app.add_subcommand("convert-csv", "Convert a CSV file to the binary dataset format");
  conv_cmd->add_option("--in", conv.in, "Input CSV")->required();
  conv_cmd->add_option("--out", conv.out, "Output dataset")->required();
  conv_cmd->add_flag("--labels", conv.labels, "The last column holds integer labels");
  conv_cmd->add_option("--name", conv.name, "Dataset name")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train an energy-based GAN");
  train_cmd->add_option("--config", tr.config, "Config file (key = value); defaults when omitted");
  train_cmd->add_option("--data", tr.data, "Training dataset")->required();
  train_cmd->add_option("--val", tr.val, "Validation dataset (default: 80/20 split of --data)");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--resume", tr.resume, "Resume from a checkpoint");

  ExtractArgs ex;
  auto* ex_cmd = app.add_subcommand("extract-afv", "Compute Adversarial Fisher Vectors for a dataset");
  ex_cmd->add_option("--checkpoint", ex.checkpoint, "Checkpoint")->required();
  ex_cmd->add_option("--data", ex.data, "Dataset")->required();
  ex_cmd->add_option("--out", ex.out, "AFV output file")->required();
  ex_cmd->add_option("--stats-seed", ex.stats_seed, "Seed for the generator samples")->capture_default_str();
  ex_cmd->add_option("--samples", ex.samples, "Generator samples for the statistics");
  ex_cmd->add_option("--epsilon", ex.epsilon, "Variance floor");
  ex_cmd->add_option("--stats-in", ex.stats_in, "Reuse previously written statistics");
  ex_cmd->add_option("--stats-out", ex.stats_out, "Statistics output (default: <out>.stats)");

  DistanceArgs dist;
  auto* dist_cmd = app.add_subcommand("distance", "Fisher distances between examples or label sets");
  dist_cmd->add_option("--afv", dist.afv, "AFV file")->required();
  auto* pair_opt = dist_cmd->add_option("--pair", dist.pair, "Two example indices")->expected(2);
  dist_cmd->add_flag("--sets-by-label", dist.sets_by_label, "Class distance matrix as CSV")->excludes(pair_opt);
  dist_cmd->add_option("--temperature", dist.temperature, "Similarity temperature")->capture_default_str();
  dist_cmd->add_flag("--similarity", dist.similarity, "Print similarities instead of distances");
  dist_cmd->add_flag("--per-parameter", dist.per_parameter, "Divide distances by the AFV length");

  ClassifyArgs cls;
  auto* cls_cmd = app.add_subcommand("classify", "Train and evaluate a linear L2-SVM");
  cls_cmd->add_option("--train", cls.train, "Training AFV file or dataset")->required();
  cls_cmd->add_option("--test", cls.test, "Test AFV file or dataset")->required();
  cls_cmd->add_option("--checkpoint", cls.checkpoint, "Checkpoint (dataset inputs with dpool/afv)");
  cls_cmd->add_option("--features", cls.features, "raw, dpool or afv (dataset inputs)")->capture_default_str();
  cls_cmd->add_option("--c", cls.c, "Penalty C")->capture_default_str();
  cls_cmd->add_option("--epochs", cls.epochs, "Gradient epochs")->capture_default_str();
  cls_cmd->add_option("--lr", cls.lr, "Initial step size")->capture_default_str();
  cls_cmd->add_flag("!--no-standardize", cls.standardize, "Skip per-coordinate standardization");
  cls_cmd->add_option("--stats-seed", cls.stats_seed, "Seed for AFV statistics")->capture_default_str();
  cls_cmd->add_option("--samples", cls.samples, "Generator samples for AFV statistics");

  KnnArgs knn;
  auto* knn_cmd = app.add_subcommand("knn", "Nearest neighbours in AFV space");
  knn_cmd->add_option("--afv", knn.afv, "AFV file")->required();
  knn_cmd->add_option("--query", knn.query, "Query index")->required();
  knn_cmd->add_option("-k,--k", knn.k, "Neighbours to return")->capture_default_str();
  knn_cmd->add_flag("--exclude-self", knn.exclude_self, "Drop the query from its own results");

  MonitorArgs mon;
  auto* mon_cmd = app.add_subcommand("monitor", "Metrics log to CSV series");
  mon_cmd->add_option("--metrics", mon.metrics, "metrics.jsonl")->required();
  mon_cmd->add_option("--out", mon.out, "CSV output (default: stdout)");

  OracleArgs orc;
  auto* orc_cmd = app.add_subcommand("oracle-check", "Cross-check sampled Fisher statistics against exact oracles");
  orc_cmd->add_option("--samples", orc.samples, "Samples per check")->capture_default_str();
  orc_cmd->add_option("--seed", orc.seed, "Seed")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_dataset(gen, out);
    if (*conv_cmd) return cmd_convert_csv(conv, out);
    if (*train_cmd) return cmd_train(tr, out, err);
    if (*ex_cmd) return cmd_extract_afv(ex, out);
    if (*dist_cmd) return cmd_distance(dist, out);
    if (*cls_cmd) return cmd_classify(cls, out);
    if (*knn_cmd) return cmd_knn(knn, out);
    if (*mon_cmd) return cmd_monitor(mon, out, err);
    if (*orc_cmd) return cmd_oracle_check(orc, out);
  } catch (const NumericalError& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ebmgan
