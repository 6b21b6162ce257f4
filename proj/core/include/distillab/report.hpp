#pragma once

#include <string>

namespace distillab {

// Reads <dir>/metrics.csv (and config.json for support grouping) and writes
// summary tables plus gnuplot-ready series under <dir>/report/.
void write_report(const std::string& dir);

}  // namespace distillab
