#include "clustsens/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "clustsens/errors.hpp"

namespace clustsens {

std::string to_string(OutcomeScale scale) {
  return scale == OutcomeScale::continuous ? "continuous" : "binary";
}

OutcomeScale parse_outcome_scale(const std::string& text) {
  if (text == "continuous") return OutcomeScale::continuous;
  if (text == "binary") return OutcomeScale::binary;
  throw DomainError("unknown outcome scale '" + text + "' (expected continuous or binary)");
}

ClusteredDataset::ClusteredDataset(std::vector<ObservationRecord> records, OutcomeScale scale)
    : records_(std::move(records)), scale_(scale) {
  std::unordered_map<std::string, int> index_of;
  std::vector<int> next_unit;
  std::set<std::string> studies;
  cluster_index_.reserve(records_.size());

  for (std::size_t r = 0; r < records_.size(); ++r) {
    auto& rec = records_[r];
    const std::size_t row = r + 1;
    if (rec.treatment != 0 && rec.treatment != 1) {
      throw ValidationError(row, "treatment must be 0 or 1, got " + std::to_string(rec.treatment));
    }
    if (!std::isfinite(rec.outcome)) throw ValidationError(row, "outcome is not finite");
    if (!std::isfinite(rec.covariate_x)) throw ValidationError(row, "covariate_x is not finite");
    if (scale_ == OutcomeScale::binary && rec.outcome != 0.0 && rec.outcome != 1.0) {
      throw ValidationError(row, "binary outcome must be 0 or 1");
    }
    if (rec.truth_u && !std::isfinite(*rec.truth_u)) throw ValidationError(row, "truth_u is not finite");

    auto [it, inserted] = index_of.emplace(rec.cluster_id, static_cast<int>(cluster_labels_.size()));
    if (inserted) {
      cluster_labels_.push_back(rec.cluster_id);
      next_unit.push_back(0);
    }
    cluster_index_.push_back(it->second);
    rec.unit_index = next_unit[it->second]++;
    if (rec.study_id) studies.insert(*rec.study_id);
  }
  study_count_ = std::max<std::size_t>(1, studies.size());
}

std::vector<std::size_t> ClusteredDataset::cluster_sizes() const {
  std::vector<std::size_t> sizes(cluster_labels_.size(), 0);
  for (int c : cluster_index_) ++sizes[c];
  return sizes;
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(first, last - first + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_real(const std::string& field, std::size_t row, const char* column) {
  if (field.empty()) throw ValidationError(row, std::string("missing value in column '") + column + "'");
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ValidationError(row, std::string("cannot parse '") + field + "' in column '" + column + "'");
  }
  return value;
}

}  // namespace

ClusteredDataset read_csv(std::istream& in, OutcomeScale scale) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty input: header row required");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const auto header = split_fields(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* required : {"cluster_id", "outcome", "treatment", "covariate_x"}) {
    if (!column.count(required)) throw SchemaError(required);
  }
  const auto c_cluster = column["cluster_id"];
  const auto c_outcome = column["outcome"];
  const auto c_treatment = column["treatment"];
  const auto c_x = column["covariate_x"];
  const auto study_it = column.find("study_id");
  const auto truth_it = column.find("truth_u");

  std::vector<ObservationRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ValidationError(row, "expected " + std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()));
    }
    ObservationRecord rec;
    rec.cluster_id = fields[c_cluster];
    if (rec.cluster_id.empty()) throw ValidationError(row, "missing value in column 'cluster_id'");
    rec.outcome = parse_real(fields[c_outcome], row, "outcome");
    const double a = parse_real(fields[c_treatment], row, "treatment");
    if (a != 0.0 && a != 1.0) {
      throw ValidationError(row, "treatment must be 0 or 1, got '" + fields[c_treatment] + "'");
    }
    rec.treatment = static_cast<int>(a);
    rec.covariate_x = parse_real(fields[c_x], row, "covariate_x");
    if (study_it != column.end()) {
      if (fields[study_it->second].empty()) throw ValidationError(row, "missing value in column 'study_id'");
      rec.study_id = fields[study_it->second];
    }
    if (truth_it != column.end()) rec.truth_u = parse_real(fields[truth_it->second], row, "truth_u");
    if (scale == OutcomeScale::binary && rec.outcome != 0.0 && rec.outcome != 1.0) {
      throw ValidationError(row, "binary outcome must be 0 or 1, got '" + fields[c_outcome] + "'");
    }
    records.push_back(std::move(rec));
  }
  return ClusteredDataset(std::move(records), scale);
}

ClusteredDataset load_csv(const std::filesystem::path& path, OutcomeScale scale) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_csv(in, scale);
}

namespace {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_csv(const ClusteredDataset& ds, std::ostream& out) {
  const auto& recs = ds.records();
  const bool has_study = std::any_of(recs.begin(), recs.end(), [](const auto& r) { return r.study_id.has_value(); });
  const bool has_truth = std::any_of(recs.begin(), recs.end(), [](const auto& r) { return r.truth_u.has_value(); });
  out << "cluster_id,outcome,treatment,covariate_x";
  if (has_study) out << ",study_id";
  if (has_truth) out << ",truth_u";
  out << '\n';
  for (const auto& r : recs) {
    out << r.cluster_id << ',' << format_real(r.outcome) << ',' << r.treatment << ','
        << format_real(r.covariate_x);
    if (has_study) out << ',' << r.study_id.value_or("");
    if (has_truth) out << ',' << (r.truth_u ? format_real(*r.truth_u) : std::string());
    out << '\n';
  }
}

void write_csv(const ClusteredDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_csv(ds, out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<PositivityStratum> positivity_report(const ClusteredDataset& ds) {
  std::map<double, PositivityStratum> strata;
  for (const auto& r : ds.records()) {
    auto& s = strata[r.covariate_x];
    s.covariate_x = r.covariate_x;
    (r.treatment == 1 ? s.treated : s.control)++;
  }
  std::vector<PositivityStratum> out;
  for (auto& [x, s] : strata) {
    s.flagged = s.treated == 0 || s.control == 0;
    out.push_back(s);
  }
  return out;
}

}  // namespace clustsens
