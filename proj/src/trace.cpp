#include "planbound/trace.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "planbound/errors.hpp"

namespace planbound {

std::string_view to_string(Operator op) {
  switch (op) {
    case Operator::SS: return "SS";
    case Operator::IS: return "IS";
    case Operator::HJ: return "HJ";
    case Operator::NL: return "NL";
    case Operator::MJ: return "MJ";
  }
  return "??";
}

Operator operator_from_string(std::string_view text) {
  if (text == "SS") return Operator::SS;
  if (text == "IS") return Operator::IS;
  if (text == "HJ") return Operator::HJ;
  if (text == "NL") return Operator::NL;
  if (text == "MJ") return Operator::MJ;
  throw ConfigError("unknown operator code '" + std::string(text) + "'");
}

std::string to_string(const Pattern& p) {
  std::string s;
  s += to_string(p.parent);
  s += '|';
  s += to_string(p.left);
  s += '|';
  s += to_string(p.right);
  return s;
}

Pattern pattern_from_string(std::string_view text) {
  auto first = text.find('|');
  auto second = text.rfind('|');
  if (first == std::string_view::npos || second == first)
    throw ConfigError("malformed pattern '" + std::string(text) + "', expected OP|OP|OP");
  Pattern p{operator_from_string(text.substr(0, first)),
            operator_from_string(text.substr(first + 1, second - first - 1)),
            operator_from_string(text.substr(second + 1))};
  if (!is_join(p.parent))
    throw ConfigError("pattern parent '" + std::string(to_string(p.parent)) + "' is not a join");
  return p;
}

std::size_t Workload::total_steps() const {
  std::size_t n = 0;
  for (const auto& t : traces) n += t.steps.size();
  return n;
}

std::string format_double(double v) {
  std::array<char, 40> buf;
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  return std::string(buf.data(), ptr);
}

namespace {

void check_value(double v, const char* what, std::size_t line_no) {
  if (std::isnan(v) || std::isinf(v)) throw ParseError(std::string("non-finite ") + what, line_no);
  if (v < 0.0) throw ParseError(std::string("negative ") + what, line_no);
}

StepRecord record_from_json(const std::string& line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw ParseError("malformed json", line_no);
  }
  StepRecord r;
  try {
    r.query_id = j.at("query_id").get<std::string>();
    r.step = j.at("step").get<std::uint32_t>();
    const auto& pat = j.at("pattern");
    if (!pat.is_null()) {
      if (!pat.is_array() || pat.size() != 3)
        throw ParseError("pattern must be null or a 3-element array", line_no);
      r.pattern = Pattern{operator_from_string(pat[0].get<std::string>()),
                          operator_from_string(pat[1].get<std::string>()),
                          operator_from_string(pat[2].get<std::string>())};
    }
    r.predicted_cost = j.at("predicted_cost").get<double>();
    r.actual_latency = j.at("actual_latency").get<double>();
  } catch (const ParseError&) {
    throw;
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), line_no);
  } catch (const nlohmann::json::exception&) {
    throw ParseError("missing or mistyped field", line_no);
  }
  check_value(r.predicted_cost, "predicted cost", line_no);
  check_value(r.actual_latency, "latency", line_no);
  return r;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_number(const std::string& text, const char* what, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ParseError(std::string("unparsable ") + what, line_no);
  return v;
}

constexpr const char* kCsvHeader = "query_id,step,pattern,predicted_cost,actual_latency";

StepRecord record_from_csv(const std::string& line, std::size_t line_no) {
  auto fields = split_csv_line(line);
  if (fields.size() != 5) throw ParseError("expected 5 csv fields", line_no);
  StepRecord r;
  r.query_id = fields[0];
  if (r.query_id.empty()) throw ParseError("empty query_id", line_no);
  double step = parse_number(fields[1], "step", line_no);
  if (step < 0 || step != std::floor(step)) throw ParseError("bad step index", line_no);
  r.step = static_cast<std::uint32_t>(step);
  if (!fields[2].empty()) {
    try {
      r.pattern = pattern_from_string(fields[2]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  r.predicted_cost = parse_number(fields[3], "predicted cost", line_no);
  r.actual_latency = parse_number(fields[4], "latency", line_no);
  check_value(r.predicted_cost, "predicted cost", line_no);
  check_value(r.actual_latency, "latency", line_no);
  return r;
}

}  // namespace

Workload parse_workload(std::istream& in, TraceFormat format, std::string label) {
  Workload w;
  w.label = std::move(label);

  std::vector<std::string> order;            // query ids in first-appearance order
  std::map<std::string, QueryTrace> traces;  // id -> accumulating trace
  std::set<std::pair<std::string, std::uint32_t>> seen;

  std::string line;
  std::size_t line_no = 0;
  bool header_done = format != TraceFormat::Csv;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_done) {
      if (line != kCsvHeader) throw ParseError("bad csv header", line_no);
      header_done = true;
      continue;
    }
    StepRecord r = format == TraceFormat::Jsonl ? record_from_json(line, line_no)
                                                : record_from_csv(line, line_no);
    if (!seen.insert({r.query_id, r.step}).second)
      throw ParseError("duplicate step " + std::to_string(r.step) + " for query '" + r.query_id + "'",
                       line_no);
    auto [it, inserted] = traces.try_emplace(r.query_id);
    if (inserted) {
      it->second.query_id = r.query_id;
      order.push_back(r.query_id);
    }
    it->second.steps.push_back(std::move(r));
  }

  for (const auto& id : order) {
    QueryTrace t = std::move(traces.at(id));
    std::sort(t.steps.begin(), t.steps.end(),
              [](const StepRecord& a, const StepRecord& b) { return a.step < b.step; });
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      if (t.steps[i].step != i)
        throw ConfigError("query '" + id + "' has non-dense step indices (missing step " +
                          std::to_string(i) + ")");
    }
    w.traces.push_back(std::move(t));
  }
  return w;
}

void serialize_workload(const Workload& w, std::ostream& out, TraceFormat format) {
  if (format == TraceFormat::Csv) out << kCsvHeader << '\n';
  for (const auto& t : w.traces) {
    for (const auto& s : t.steps) {
      if (format == TraceFormat::Jsonl) {
        nlohmann::ordered_json j;
        j["query_id"] = s.query_id;
        j["step"] = s.step;
        if (s.pattern) {
          j["pattern"] = {to_string(s.pattern->parent), to_string(s.pattern->left),
                          to_string(s.pattern->right)};
        } else {
          j["pattern"] = nullptr;
        }
        j["predicted_cost"] = s.predicted_cost;
        j["actual_latency"] = s.actual_latency;
        out << j.dump() << '\n';
      } else {
        out << s.query_id << ',' << s.step << ',' << (s.pattern ? to_string(*s.pattern) : "") << ','
            << format_double(s.predicted_cost) << ',' << format_double(s.actual_latency) << '\n';
      }
    }
  }
}

namespace {

TraceFormat format_from_path(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return TraceFormat::Csv;
  return TraceFormat::Jsonl;
}

}  // namespace

Workload load_workload(const std::string& path, std::string label) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  if (label.empty()) label = path;
  return parse_workload(in, format_from_path(path), std::move(label));
}

void save_workload(const Workload& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  serialize_workload(w, out, format_from_path(path));
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::pair<Workload, Workload> split_workload(const Workload& w, double calibration_fraction,
                                             std::uint64_t seed) {
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0))
    throw ConfigError("calibration fraction must lie in (0, 1)");
  const std::size_t n = w.traces.size();
  if (n < 2) throw PreconditionError("need at least 2 traces to split");

  const auto take = static_cast<std::size_t>(
      std::floor(calibration_fraction * static_cast<double>(n) + 0.5));

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }

  std::vector<bool> in_cal(n, false);
  for (std::size_t i = 0; i < take && i < n; ++i) in_cal[idx[i]] = true;

  Workload cal, test;
  cal.label = "calibration";
  test.label = "test";
  for (std::size_t i = 0; i < n; ++i)
    (in_cal[i] ? cal : test).traces.push_back(w.traces[i]);
  return {std::move(cal), std::move(test)};
}

std::vector<double> cumulative_signal(const QueryTrace& trace) {
  if (trace.steps.empty()) throw PreconditionError("empty trace has no signal");
  std::vector<double> x;
  x.reserve(trace.steps.size());
  double acc = 0.0;
  for (const auto& s : trace.steps) {
    acc += s.actual_latency;
    x.push_back(acc);
  }
  return x;
}

}  // namespace planbound
