#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ca {

struct ResultRow {
    std::string mechanism;
    std::string setting;  // A | B | C
    int bidders = 0;
    int items = 0;
    double revenue = 0.0;
    double regret = 0.0;
    int64_t samples = 0;
    uint64_t seed = 0;
};

// Schema: mechanism,setting,n,m,revenue,regret,samples,seed with a versioned
// comment line on top. Appends create the file on first use.
void append_result(const std::string& path, const ResultRow& row);
std::vector<ResultRow> read_results(const std::string& path);

struct ReportTables {
    std::string markdown;
    std::string csv;
    std::vector<std::string> warnings;  // duplicate-key notes
};

// Mechanisms x (setting, n x m) grid of "rev / rgt" cells; the best revenue
// per column is bolded in the markdown, missing cells render as "-".
// Duplicate keys keep the latest row.
ReportTables render_report(const std::vector<ResultRow>& rows);

}  // namespace ca
