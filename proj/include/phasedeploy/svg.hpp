#pragma once

#include <string>

#include "phasedeploy/csv.hpp"

namespace phasedeploy::svg {

// Static SVG renderings of emitted CSVs. Output bytes depend only on the
// table contents. Missing columns raise UsageError naming them; an empty table
// raises UsageError.

// Needs columns method, seed, step, success. One polyline per (method, seed)
// in first-appearance order, colored by method.
std::string learning_curves(const csv::Table& curves);

// Needs columns checkpoint, fork_horizon, modal_winner, informative. Cells are colored by
// winner; non-informative cells are drawn pale and hatched with a cross.
std::string verdict_heatmap(const csv::Table& verdicts);

}  // namespace phasedeploy::svg
