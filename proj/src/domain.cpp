#include "filtertwin/domain.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <istream>
#include <ostream>
#include <sstream>

namespace filtertwin {

std::string_view to_string(SeriesStatus s) {
  return s == SeriesStatus::open ? "open" : "complete";
}

SeriesStatus series_status_from_string(std::string_view s) {
  if (s == "open") return SeriesStatus::open;
  if (s == "complete") return SeriesStatus::complete;
  throw DomainError("unknown series status '" + std::string(s) + "'");
}

std::string_view to_string(Target t) { return t == Target::pressure ? "pressure" : "flow"; }

Target target_from_string(std::string_view s) {
  if (s == "pressure") return Target::pressure;
  if (s == "flow") return Target::flow;
  throw DomainError("unknown target '" + std::string(s) + "' (expected pressure|flow)");
}

std::vector<double> CycleSeries::times() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.t);
  return out;
}

std::vector<double> CycleSeries::pressures() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.pressure);
  return out;
}

std::vector<double> CycleSeries::flows() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.flow);
  return out;
}

namespace {

bool valid_id_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
         c == '_' || c == '.';
}

}  // namespace

std::vector<std::string> validate_config(const ExperimentConfig& c) {
  std::vector<std::string> violations;
  const auto& id = c.experiment_id;
  bool id_ok = !id.empty() && id.size() <= 64 && id != "." && id != "..";
  for (char ch : id) id_ok = id_ok && valid_id_char(ch);
  if (!id_ok) violations.emplace_back("experiment_id matches [A-Za-z0-9._-]{1,64}");
  if (!(std::isfinite(c.concentration) && c.concentration > 0.0))
    violations.emplace_back("concentration > 0");
  if (c.plate_count < 1) violations.emplace_back("plate_count >= 1");
  if (!(std::isfinite(c.end_pressure) && c.end_pressure > 0.0))
    violations.emplace_back("end_pressure > 0");
  if (std::isfinite(c.end_pressure) && c.end_pressure > kMaxEndPressure)
    violations.emplace_back("end_pressure <= 10");
  if (c.cloth_cycles < 1) violations.emplace_back("cloth_cycles >= 1");
  return violations;
}

void require_valid(const ExperimentConfig& config) {
  auto v = validate_config(config);
  if (v.empty()) return;
  std::string msg = "invalid experiment config:";
  for (const auto& s : v) msg += " [" + s + "]";
  throw DomainError(msg);
}

FeatureVector feature_vector(const ExperimentConfig& c, double t) {
  if (!std::isfinite(t) || t < 0.0) throw DomainError("feature time must be finite and >= 0");
  FeatureVector f{};
  f[feature::chambers] = static_cast<double>(c.plate_count);
  f[feature::time] = t;
  f[feature::concentration] = c.concentration;
  f[feature::cycles] = static_cast<double>(c.cloth_cycles);
  f[feature::max_pressure] = c.end_pressure;
  return f;
}

std::optional<std::size_t> first_sample_violation(std::span<const Sample> samples,
                                                  std::optional<double> previous_t) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!std::isfinite(s.t) || !std::isfinite(s.pressure) || !std::isfinite(s.flow)) return i;
    if (s.t < 0.0 || s.pressure < 0.0 || s.flow < 0.0) return i;
    if (previous_t && !(s.t > *previous_t)) return i;
    previous_t = s.t;
  }
  return std::nullopt;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"experiment_id", c.experiment_id},   {"concentration", c.concentration},
                     {"plate_count", c.plate_count},       {"end_pressure", c.end_pressure},
                     {"cloth_cycles", c.cloth_cycles},     {"created_at", c.created_at}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  try {
    c.experiment_id = j.at("experiment_id").get<std::string>();
    c.concentration = j.at("concentration").get<double>();
    c.plate_count = j.at("plate_count").get<int>();
    c.end_pressure = j.at("end_pressure").get<double>();
    c.cloth_cycles = j.at("cloth_cycles").get<int>();
    c.created_at = j.value("created_at", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed experiment config: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const Sample& s) {
  j = nlohmann::json{{"t", s.t}, {"pressure", s.pressure}, {"flow", s.flow}};
}

void from_json(const nlohmann::json& j, Sample& s) {
  try {
    s.t = j.at("t").get<double>();
    s.pressure = j.at("pressure").get<double>();
    s.flow = j.at("flow").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed sample: ") + e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_series_csv(std::ostream& out, const std::vector<Sample>& samples) {
  out << kSeriesCsvHeader << '\n';
  for (const auto& s : samples)
    out << format_double(s.t) << ',' << format_double(s.pressure) << ',' << format_double(s.flow)
        << '\n';
}

std::string series_csv(const std::vector<Sample>& samples) {
  std::ostringstream os;
  write_series_csv(os, samples);
  return os.str();
}

namespace {

double parse_field(std::string_view field, std::size_t line_no) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
    throw DomainError("series csv line " + std::to_string(line_no) + ": bad number '" +
                      std::string(field) + "'");
  return v;
}

}  // namespace

std::vector<Sample> parse_series_csv(std::string_view text) {
  std::vector<Sample> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kSeriesCsvHeader)
        throw DomainError("series csv: expected header '" + std::string(kSeriesCsvHeader) + "'");
      header_seen = true;
      continue;
    }
    auto c1 = line.find(',');
    auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos)
      throw DomainError("series csv line " + std::to_string(line_no) + ": expected 3 fields");
    out.push_back(Sample{parse_field(line.substr(0, c1), line_no),
                         parse_field(line.substr(c1 + 1, c2 - c1 - 1), line_no),
                         parse_field(line.substr(c2 + 1), line_no)});
  }
  if (!header_seen) throw DomainError("series csv: missing header");
  return out;
}

std::vector<Sample> read_series_csv(std::istream& in) {
  std::ostringstream os;
  os << in.rdbuf();
  return parse_series_csv(os.str());
}

std::string utc_timestamp_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace filtertwin
