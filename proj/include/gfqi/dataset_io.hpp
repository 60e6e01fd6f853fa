#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "gfqi/core.hpp"

namespace gfqi {

/// Writes the dataset CSV: header
/// `cluster_id,time,member,action,reward,state_0..state_{p-1},next_state_0..next_state_{p-1}`,
/// one row per transition, reals with 17 significant digits.
void write_dataset_csv(const Dataset& data, std::ostream& out);
void write_dataset_csv(const Dataset& data, const std::string& path);

/// Reads a dataset CSV. Cluster size and horizon are inferred from the member
/// and time columns; the action count defaults to max(action) + 1.
Dataset read_dataset_csv(std::istream& in, std::optional<int> action_count = std::nullopt);
Dataset read_dataset_csv(const std::string& path, std::optional<int> action_count = std::nullopt);

/// printf("%.17g") formatting shared by every text output.
std::string format_real(double x);

}  // namespace gfqi
