#include "hemb/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "hemb/data_io.hpp"
#include "hemb/errors.hpp"
#include "hemb/rng.hpp"
#include "hemb/train.hpp"

namespace hemb {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string format_metric(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.10g", v);
  return buffer;
}

}  // namespace

std::uint64_t sample_seed(std::uint64_t base, Split split, std::size_t class_id, std::size_t index) {
  std::uint64_t h = splitmix(base);
  h = splitmix(h ^ (split == Split::train ? 0x7261696eULL : 0x74657374ULL));
  h = splitmix(h ^ class_id);
  return splitmix(h ^ index);
}

std::vector<PointCloud> synthetic_split(std::size_t per_class, std::size_t num_points, std::uint64_t seed,
                                        Split split) {
  std::vector<PointCloud> clouds;
  clouds.reserve(per_class * kSyntheticClasses);
  for (std::size_t c = 0; c < kSyntheticClasses; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      clouds.push_back(generate_synthetic(c, num_points, sample_seed(seed, split, c, i), true));
    }
  }
  return clouds;
}

std::vector<PointCloud> load_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  std::vector<PointCloud> clouds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line == "file,label") continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw ParseError(line_no, "expected 'file,label'");
    std::size_t label = 0;
    try {
      std::size_t used = 0;
      label = std::stoul(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(line_no, "label is not a non-negative integer");
    }
    PointCloud cloud = load_xyz(manifest.parent_path() / line.substr(0, comma));
    cloud.label = label;
    clouds.push_back(std::move(cloud));
  }
  if (clouds.empty()) throw ParseError(std::max<std::size_t>(line_no, 1), "manifest lists no clouds");
  return clouds;
}

std::vector<PointCloud> load_split(const RunConfig& config, Split split) {
  const std::string& source = split == Split::train ? config.train_data : config.test_data;
  if (source == "synthetic") {
    return synthetic_split(split == Split::train ? config.train_per_class : config.test_per_class,
                           config.num_points, config.seed, split);
  }
  return load_manifest(source);
}

std::vector<PreparedCloud> prepare_all(const std::vector<PointCloud>& clouds, const ModelConfig& config) {
  std::vector<PreparedCloud> prepared;
  prepared.reserve(clouds.size());
  for (const auto& c : clouds) {
    if (c.label && *c.label >= config.num_classes) {
      throw ConfigError("label " + std::to_string(*c.label) + " is outside num_classes " +
                        std::to_string(config.num_classes));
    }
    prepared.push_back(prepare_cloud(c, config));
  }
  return prepared;
}

EvalResult evaluate(const std::vector<PreparedCloud>& samples, const ModelParams& params) {
  const std::size_t classes = params.config.num_classes;
  EvalResult result;
  result.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  const auto predicted = predict(samples, params);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) throw ContractError("evaluation needs labeled samples");
    const std::size_t truth = *samples[i].label;
    ++result.confusion[truth][predicted[i]];
    if (truth == predicted[i]) ++result.correct;
    ++result.total;
  }
  return result;
}

std::vector<EpochMetrics> fit(ModelParams& params, const std::vector<PreparedCloud>& train,
                              const std::vector<PreparedCloud>& test, const RunConfig& config,
                              const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (train.empty()) throw ConfigError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  AdamW optimizer(params.parameters(), config.optimizer);
  Rng shuffle_rng(config.seed ^ 0x5eedULL);
  Rng drop_rng(config.seed ^ 0xd509ULL);
  std::vector<std::size_t> order(train.size());
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 0; epoch < config.optimizer.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    const double lr = scheduled_lr(config.optimizer, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<const PreparedCloud*> batch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(&train[order[i]]);
      }
      const StepResult step = train_step(batch, params, optimizer, lr, drop_rng);
      loss_sum += step.loss * static_cast<double>(batch.size());
      correct += step.correct;
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(train.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    m.test_acc = test.empty() ? 0.0 : evaluate(test, params).accuracy();
    m.lr = lr;
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

std::string metrics_csv_header() { return "epoch,train_loss,train_acc,test_acc,lr\n"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + format_metric(m.train_loss) + "," + format_metric(m.train_acc) + "," +
         format_metric(m.test_acc) + "," + format_metric(m.lr) + "\n";
}

std::string confusion_csv(const EvalResult& result) {
  std::string out = "true\\pred";
  for (std::size_t c = 0; c < result.confusion.size(); ++c) out += "," + std::to_string(c);
  out += "\n";
  for (std::size_t r = 0; r < result.confusion.size(); ++r) {
    out += std::to_string(r);
    for (std::size_t v : result.confusion[r]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

}  // namespace hemb
