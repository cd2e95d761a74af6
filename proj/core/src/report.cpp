#include "obskit/report.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "obskit/errors.hpp"
#include "obskit/pruner.hpp"
#include "obskit/runner.hpp"

namespace obskit {

namespace fs = std::filesystem;

namespace {

bool read_text(const fs::path& p, std::string& out) {
    std::ifstream f(p);
    if (!f) return false;
    std::stringstream buf;
    buf << f.rdbuf();
    out = buf.str();
    return true;
}

void summarize(std::ostream& os, const std::string& run_dir, std::size_t& warnings) {
    std::string text;
    RunReport report;
    bool have_report = false;
    if (read_text(fs::path(run_dir) / "report.json", text)) {
        report = RunReport::from_json(text);
        have_report = true;
    } else {
        os << "warning: " << run_dir << "/report.json missing\n";
        ++warnings;
    }

    if (have_report) {
        os << "run " << report.recipe_name << " (seed " << report.seed << ")\n";
        os << "  status:              " << report.status << "\n";
        if (report.status.rfind("aborted", 0) == 0) ++warnings;
        os << "  prunable weights:    " << report.prunable_weights << "\n";
        os << "  sparsity:            " << report.final_sparsity << " (target "
           << report.target_sparsity << ")\n";
        os << "  train loss/acc:      " << report.final_train_loss << " / "
           << report.final_train_accuracy << "\n";
        os << "  holdout loss/acc:    " << report.final_holdout_loss << " / "
           << report.final_holdout_accuracy << "\n";
        if (report.has_baseline) {
            os << "  dense baseline:      " << report.baseline_holdout_loss << " / "
               << report.baseline_holdout_accuracy << "\n";
        }
        os << "  prune events:        " << report.prune_events << "\n";
        os << "  estimator bytes:     " << report.estimator_memory_bytes << "\n";
        if (report.data_recycles > 0) {
            os << "  data recycles:       " << report.data_recycles << "\n";
        }
    }

    std::ifstream log(fs::path(run_dir) / "prune_log.csv");
    if (!log) {
        os << "warning: " << run_dir << "/prune_log.csv missing\n";
        ++warnings;
        return;
    }
    const auto rows = read_prune_log_csv(log);
    if (rows.empty()) return;
    os << "  prune trace (step, scheduled, achieved, predicted dL, loss before, loss after):\n";
    for (const auto& r : rows) {
        os << "    " << std::setw(6) << r.step << "  " << std::setw(8) << r.scheduled_sparsity
           << "  " << std::setw(8) << r.achieved_sparsity << "  " << std::setw(12)
           << r.predicted_loss_increase << "  " << std::setw(10) << r.measured_loss_before << "  "
           << std::setw(10) << r.measured_loss_after << "\n";
    }
}

}  // namespace

RenderedReport render_report(const std::string& run_dir) {
    RenderedReport out;
    std::ostringstream os;
    os.precision(6);
    summarize(os, run_dir, out.warnings);
    if (out.warnings > 0) os << "warnings: " << out.warnings << "\n";
    out.text = os.str();
    return out;
}

RenderedReport render_compare(const std::string& dir_a, const std::string& dir_b) {
    RenderedReport out;
    std::ostringstream os;
    os.precision(6);

    std::string ta, tb;
    RunReport a, b;
    bool ok_a = read_text(fs::path(dir_a) / "report.json", ta);
    bool ok_b = read_text(fs::path(dir_b) / "report.json", tb);
    if (!ok_a) {
        os << "warning: " << dir_a << "/report.json missing\n";
        ++out.warnings;
    }
    if (!ok_b) {
        os << "warning: " << dir_b << "/report.json missing\n";
        ++out.warnings;
    }
    if (ok_a && ok_b) {
        a = RunReport::from_json(ta);
        b = RunReport::from_json(tb);
        os << std::left << std::setw(24) << "metric" << std::setw(18) << a.recipe_name
           << b.recipe_name << "\n";
        auto row = [&](const char* name, double va, double vb) {
            os << std::left << std::setw(24) << name << std::setw(18) << va << vb << "\n";
        };
        row("final_sparsity", a.final_sparsity, b.final_sparsity);
        row("holdout_loss", a.final_holdout_loss, b.final_holdout_loss);
        row("holdout_accuracy", a.final_holdout_accuracy, b.final_holdout_accuracy);
        row("train_loss", a.final_train_loss, b.final_train_loss);
        row("prune_events", static_cast<double>(a.prune_events),
            static_cast<double>(b.prune_events));
    }
    out.text = os.str();
    return out;
}

}  // namespace obskit
