#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace clustsens {

enum class OutcomeScale { continuous, binary };

std::string to_string(OutcomeScale scale);
OutcomeScale parse_outcome_scale(const std::string& text);

struct ObservationRecord {
  std::string cluster_id;
  int unit_index = 0;  // ordinal within the cluster, assigned on construction
  double outcome = 0.0;
  int treatment = 0;
  double covariate_x = 0.0;
  std::optional<std::string> study_id;
  // Simulation truth only. Never enters a design matrix.
  std::optional<double> truth_u;
};

// Long-format clustered data, validated and immutable after construction.
class ClusteredDataset {
 public:
  /// Validates every record and assigns unit_index in order of appearance.
  /// Throws ValidationError (1-based row) on bad treatment/outcome values.
  ClusteredDataset(std::vector<ObservationRecord> records, OutcomeScale scale);

  const std::vector<ObservationRecord>& records() const { return records_; }
  OutcomeScale scale() const { return scale_; }
  std::size_t size() const { return records_.size(); }
  std::size_t cluster_count() const { return cluster_labels_.size(); }
  std::size_t study_count() const { return study_count_; }

  /// Dense cluster index (0..J-1, first-appearance order) for each record.
  const std::vector<int>& cluster_index() const { return cluster_index_; }
  const std::vector<std::string>& cluster_labels() const { return cluster_labels_; }
  std::vector<std::size_t> cluster_sizes() const;

 private:
  std::vector<ObservationRecord> records_;
  OutcomeScale scale_;
  std::vector<int> cluster_index_;
  std::vector<std::string> cluster_labels_;
  std::size_t study_count_ = 1;
};

/// Read a comma-separated file with header. Required columns: cluster_id,
/// outcome, treatment, covariate_x. Optional: study_id, truth_u.
ClusteredDataset load_csv(const std::filesystem::path& path, OutcomeScale scale);
ClusteredDataset read_csv(std::istream& in, OutcomeScale scale);

/// Inverse of read_csv. Reals are written with 17 significant digits.
void write_csv(const ClusteredDataset& ds, std::ostream& out);
void write_csv(const ClusteredDataset& ds, const std::filesystem::path& path);

struct PositivityStratum {
  double covariate_x = 0.0;
  std::size_t treated = 0;
  std::size_t control = 0;
  bool flagged = false;  // no treated or no control units in this stratum
};

/// Treated/control counts for each distinct covariate value, ascending.
std::vector<PositivityStratum> positivity_report(const ClusteredDataset& ds);

}  // namespace clustsens
