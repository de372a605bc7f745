#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hemb/config.hpp"
#include "hemb/geometry.hpp"
#include "hemb/model.hpp"

namespace hemb {

enum class Split { train, test };

/// Seed of one synthetic sample, a pure function of its coordinates.
std::uint64_t sample_seed(std::uint64_t base, Split split, std::size_t class_id, std::size_t index);

/// `per_class` augmented clouds of each synthetic class, class-major order.
std::vector<PointCloud> synthetic_split(std::size_t per_class, std::size_t num_points, std::uint64_t seed,
                                        Split split);

/// Clouds listed in a "file,label" manifest; paths are relative to it.
std::vector<PointCloud> load_manifest(const std::filesystem::path& manifest);

/// Train and test clouds described by the run config.
std::vector<PointCloud> load_split(const RunConfig& config, Split split);

std::vector<PreparedCloud> prepare_all(const std::vector<PointCloud>& clouds, const ModelConfig& config);

struct EvalResult {
  std::vector<std::vector<std::size_t>> confusion;  // rows true class, columns predicted
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

EvalResult evaluate(const std::vector<PreparedCloud>& samples, const ModelParams& params);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
};

/// Mini-batch training with a per-epoch shuffle drawn from the run seed.
/// `on_epoch` sees each row as soon as it is complete.
std::vector<EpochMetrics> fit(ModelParams& params, const std::vector<PreparedCloud>& train,
                              const std::vector<PreparedCloud>& test, const RunConfig& config,
                              const std::function<void(const EpochMetrics&)>& on_epoch = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);
std::string confusion_csv(const EvalResult& result);

}  // namespace hemb
