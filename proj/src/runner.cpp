#include "kvt/runner.hpp"

#include <fstream>

#include "kvt/errors.hpp"
#include "kvt/reports.hpp"
#include "kvt/text_format.hpp"

namespace kvt {

namespace {

namespace fs = std::filesystem;

std::ofstream open_for_write(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_for_write(path);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void export_maps(const RunConfig& config, const RunReport& report, const fs::path& dir) {
  const std::size_t layers = report.attention.size();
  const std::size_t heads = config.model.heads;
  for (std::size_t l = config.all_maps ? 0 : layers - 1; l < layers; ++l) {
    for (std::size_t h = 0; h < (config.all_maps ? heads : 1); ++h) {
      export_attention_map(report.attention, l, h, dir / ("attn_l" + std::to_string(l) + "_h" + std::to_string(h)));
    }
  }
}

}  // namespace

std::string run_dir_name(const RunConfig& config, const AttentionKind& kind) {
  return task_name(config.task.kind) + "_" + kind.name() + "_s" + std::to_string(config.train.seed);
}

SweepResult run_sweep(const RunConfig& config, std::ostream& progress) {
  config.validate();
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + config.out_dir.string() + ": " + ec.message());
  write_text(config.out_dir / "config.txt", write_key_values(config.to_map()));

  const auto data = prepare_task(config.task);
  SweepResult result;
  auto summary = open_for_write(config.out_dir / "summary.csv");
  summary << kMetricsCsvHeader << '\n';

  for (const auto& kind : config.attention_kinds()) {
    const auto name = run_dir_name(config, kind);
    const fs::path dir = config.out_dir / name;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());

    RunConfig single = config;
    single.attention = {kind.name()};
    single.out_dir = dir;
    write_text(dir / "config.txt", write_key_values(single.to_map()));

    auto loss_csv = open_for_write(dir / "loss.csv");
    loss_csv << kLossCsvHeader << '\n' << std::flush;
    RunHooks hooks;
    hooks.on_record = [&](const LossRecord& rec) {
      loss_csv << loss_csv_row(rec) << '\n' << std::flush;
      if (!loss_csv) throw IoError("failed writing " + (dir / "loss.csv").string());
      progress << name << " step " << rec.step << " " << rec.split << " " << format_double(rec.loss) << "\n"
               << std::flush;
    };

    Model model(config.model_for(kind, data));
    RunReport report;
    try {
      report = train_run(model, data, config.train, hooks);
    } catch (const DivergenceError& e) {
      result.failures.push_back(name + ": " + e.what());
      result.status = kExitDivergence;
      continue;
    }
    progress << name << " token_acc " << format_double(report.accuracy.token) << " val_loss "
             << format_double(report.final_val_loss) << "\n";

    {
      auto metrics = open_for_write(dir / "metrics.csv");
      metrics << kMetricsCsvHeader << '\n' << metrics_csv_row(report) << '\n';
      if (!metrics) throw IoError("failed writing " + (dir / "metrics.csv").string());
    }
    {
      auto cost = open_for_write(dir / "cost.csv");
      write_cost_table(cost, {report.cost});
    }
    save_checkpoint(dir / "model.ckpt", model, data.vocab, task_name(config.task.kind));
    export_maps(config, report, dir);
    summary << metrics_csv_row(report) << '\n' << std::flush;
    result.reports.push_back(std::move(report));
  }
  return result;
}

int run(const RunConfig& config, std::ostream& progress, std::ostream& err) {
  try {
    const auto result = run_sweep(config, progress);
    for (const auto& f : result.failures) err << "diverged: " << f << "\n";
    return result.status;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitDivergence;
  }
}

}  // namespace kvt
