#include "gfqi/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace gfqi {

std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_dataset_csv(const Dataset& data, std::ostream& out) {
  const int p = data.state_dim();
  out << "cluster_id,time,member,action,reward";
  for (int k = 0; k < p; ++k) out << ",state_" << k;
  for (int k = 0; k < p; ++k) out << ",next_state_" << k;
  out << '\n';
  for (const auto& block : data.blocks()) {
    for (std::size_t m = 0; m < block.members.size(); ++m) {
      const auto& tr = block.members[m];
      out << block.cluster_id << ',' << block.time << ',' << m << ',' << tr.action << ','
          << format_real(tr.reward);
      for (double s : tr.state) out << ',' << format_real(s);
      for (double s : tr.next_state) out << ',' << format_real(s);
      out << '\n';
    }
  }
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_dataset_csv(data, out);
  if (!out) throw IoError("write failed: " + path);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, std::size_t line) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  // ERANGE on underflow still yields the correctly rounded subnormal.
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ParseError("invalid number '" + s + "'", line);
  }
  return v;
}

long parse_int(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ParseError("invalid integer '" + s + "'", line);
  }
  return v;
}

}  // namespace

Dataset read_dataset_csv(std::istream& in, std::optional<int> action_count) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 7 || (header.size() - 5) % 2 != 0 || header[0] != "cluster_id" ||
      header[1] != "time" || header[2] != "member" || header[3] != "action" ||
      header[4] != "reward") {
    throw ParseError("unexpected dataset header", 1);
  }
  const int p = static_cast<int>((header.size() - 5) / 2);

  // Blocks keyed by (cluster, time) in order of first appearance.
  std::map<std::pair<long, long>, std::size_t> index;
  std::vector<ClusterBlock> blocks;
  std::vector<std::vector<std::pair<long, Transition>>> pending;
  int max_action = 0;
  long max_member = -1;
  long max_time = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(f.size()),
                       lineno);
    }
    const long cid = parse_int(f[0], lineno);
    const long t = parse_int(f[1], lineno);
    const long member = parse_int(f[2], lineno);
    Transition tr;
    tr.action = static_cast<int>(parse_int(f[3], lineno));
    tr.reward = parse_double(f[4], lineno);
    tr.state.resize(p);
    tr.next_state.resize(p);
    for (int k = 0; k < p; ++k) {
      tr.state[k] = parse_double(f[5 + k], lineno);
      tr.next_state[k] = parse_double(f[5 + p + k], lineno);
    }
    if (tr.action < 0 || member < 0 || t < 0) throw ParseError("negative index", lineno);
    max_action = std::max(max_action, tr.action);
    max_member = std::max(max_member, member);
    max_time = std::max(max_time, t);
    auto [it, inserted] = index.try_emplace({cid, t}, blocks.size());
    if (inserted) {
      blocks.push_back(ClusterBlock{static_cast<int>(cid), static_cast<int>(t), {}});
      pending.emplace_back();
    }
    pending[it->second].emplace_back(member, std::move(tr));
  }
  if (blocks.empty()) throw ParseError("dataset has no rows", lineno);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& members = pending[b];
    std::sort(members.begin(), members.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t m = 0; m < members.size(); ++m) {
      if (members[m].first != static_cast<long>(m)) {
        throw ParseError("cluster " + std::to_string(blocks[b].cluster_id) + " time " +
                             std::to_string(blocks[b].time) + " has missing/duplicate members",
                         0);
      }
      blocks[b].members.push_back(std::move(members[m].second));
    }
  }
  return Dataset(std::move(blocks), static_cast<int>(max_member + 1), static_cast<int>(max_time + 1),
                 action_count.value_or(max_action + 1), p);
}

Dataset read_dataset_csv(const std::string& path, std::optional<int> action_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_dataset_csv(in, action_count);
}

}  // namespace gfqi
