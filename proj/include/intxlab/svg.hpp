#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace intxlab::svg {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> yerr;  // optional, empty or same length as y
};

// Static line chart with optional error bars and a legend. Intended for
// human inspection of experiment CSVs; nothing downstream parses these.
void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, bool log_y = false);

}  // namespace intxlab::svg
