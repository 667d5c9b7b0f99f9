#include "ca/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ca {

namespace {
constexpr const char* kHeaderComment = "# caforge-results-v1";
constexpr const char* kHeader = "mechanism,setting,n,m,revenue,regret,samples,seed";

std::string fmt(double x, int digits = 6) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
    return buf;
}
}  // namespace

void append_result(const std::string& path, const ResultRow& row) {
    bool fresh = false;
    {
        std::ifstream probe(path);
        fresh = !probe.good();
    }
    std::ofstream f(path, std::ios::app);
    if (!f) throw std::runtime_error("cannot open for append: " + path);
    if (fresh) f << kHeaderComment << '\n' << kHeader << '\n';
    f << row.mechanism << ',' << row.setting << ',' << row.bidders << ',' << row.items << ','
      << fmt(row.revenue) << ',' << fmt(row.regret) << ',' << row.samples << ',' << row.seed << '\n';
}

std::vector<ResultRow> read_results(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<ResultRow> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("mechanism,", 0) == 0) continue;
        std::istringstream ss(line);
        ResultRow r;
        std::string field;
        auto next = [&](const char* what) {
            if (!std::getline(ss, field, ','))
                throw std::runtime_error("malformed results row (missing " + std::string(what) + "): " + line);
            return field;
        };
        r.mechanism = next("mechanism");
        r.setting = next("setting");
        r.bidders = std::stoi(next("n"));
        r.items = std::stoi(next("m"));
        r.revenue = std::stod(next("revenue"));
        r.regret = std::stod(next("regret"));
        r.samples = std::stoll(next("samples"));
        r.seed = std::stoull(next("seed"));
        rows.push_back(std::move(r));
    }
    return rows;
}

ReportTables render_report(const std::vector<ResultRow>& rows) {
    if (rows.empty()) throw std::runtime_error("render_report: no result rows");
    ReportTables out;
    using Key = std::pair<std::string, std::pair<std::string, std::pair<int, int>>>;
    std::map<Key, ResultRow> latest;
    for (const ResultRow& r : rows) {
        Key key{r.mechanism, {r.setting, {r.bidders, r.items}}};
        auto it = latest.find(key);
        if (it != latest.end())
            out.warnings.push_back("duplicate result for " + r.mechanism + " " + r.setting + " " +
                                   std::to_string(r.bidders) + "x" + std::to_string(r.items) +
                                   "; keeping the latest row");
        latest[key] = r;
    }

    std::vector<std::string> mechanisms;
    std::vector<std::pair<std::string, std::pair<int, int>>> columns;
    for (const auto& [key, r] : latest) {
        if (std::find(mechanisms.begin(), mechanisms.end(), r.mechanism) == mechanisms.end())
            mechanisms.push_back(r.mechanism);
        auto col = key.second;
        if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    }
    std::sort(columns.begin(), columns.end());
    std::sort(mechanisms.begin(), mechanisms.end());

    std::vector<double> best(columns.size(), -1.0);
    for (size_t c = 0; c < columns.size(); ++c)
        for (const auto& m : mechanisms) {
            auto it = latest.find({m, columns[c]});
            if (it != latest.end()) best[c] = std::max(best[c], it->second.revenue);
        }

    auto col_name = [](const std::pair<std::string, std::pair<int, int>>& c) {
        return std::to_string(c.second.first) + "x" + std::to_string(c.second.second) + " (" + c.first + ")";
    };

    std::ostringstream md;
    md << "| mechanism |";
    for (const auto& c : columns) md << ' ' << col_name(c) << " Rev | Rgt |";
    md << "\n|---|";
    for (size_t c = 0; c < columns.size(); ++c) md << "---|---|";
    md << '\n';
    for (const auto& m : mechanisms) {
        md << "| " << m << " |";
        for (size_t c = 0; c < columns.size(); ++c) {
            auto it = latest.find({m, columns[c]});
            if (it == latest.end()) {
                md << " - | - |";
            } else {
                const bool bold = it->second.revenue >= best[c] - 1e-12;
                const std::string rev = fmt(it->second.revenue, 3);
                md << ' ' << (bold ? "**" + rev + "**" : rev) << " | " << fmt(it->second.regret, 4)
                   << " |";
            }
        }
        md << '\n';
    }
    out.markdown = md.str();

    std::ostringstream csv;
    csv << "mechanism";
    for (const auto& c : columns) csv << ',' << col_name(c) << " rev," << col_name(c) << " rgt";
    csv << '\n';
    for (const auto& m : mechanisms) {
        csv << m;
        for (size_t c = 0; c < columns.size(); ++c) {
            auto it = latest.find({m, columns[c]});
            if (it == latest.end())
                csv << ",-,-";
            else
                csv << ',' << fmt(it->second.revenue, 3) << ',' << fmt(it->second.regret, 4);
        }
        csv << '\n';
    }
    out.csv = csv.str();
    return out;
}

}  // namespace ca
