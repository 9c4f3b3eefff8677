#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "kvt/attention.hpp"
#include "kvt/model.hpp"
#include "kvt/training.hpp"

namespace kvt {

struct AttentionMapFiles {
  std::filesystem::path weights_csv;  // post-softmax, rows sum to 1
  std::filesystem::path scores_csv;   // pre-softmax, after positional bias, before the mask
  std::filesystem::path image;        // P2 graymap, darker = higher weight
};

/// Writes `<stem>.csv`, `<stem>_scores.csv` and `<stem>.pgm` for batch row 0
/// of one captured layer/head. Throws IndexError for a bad layer or head and
/// IoError when a file cannot be written.
AttentionMapFiles export_attention_map(const std::vector<AttentionTrace<float>>& traces, std::size_t layer,
                                       std::size_t head, const std::filesystem::path& stem);
/// Runs `tokens` (one row) through `model` in eval mode and exports as above.
AttentionMapFiles export_attention_map(Model& model, const TokenBatch& tokens, std::size_t layer, std::size_t head,
                                       const std::filesystem::path& stem);

/// T x T matrix as a plain P2 graymap: value v maps to 255 - round(255 * v / max).
void write_pgm(std::ostream& out, const std::vector<float>& matrix, std::size_t size);

/// CostReport::csv_header() followed by one row per report.
void write_cost_table(std::ostream& out, const std::vector<CostReport>& rows);

/// Table 1 as printed (symbolic formulas) next to their values at (n, d, m):
/// kind,flops_formula,params_formula,flops,params
void write_table1_reference(std::ostream& out, std::uint64_t n, std::uint64_t d, std::uint64_t m);

inline constexpr const char* kLossCsvHeader = "step,split,loss,lr";
inline constexpr const char* kMetricsCsvHeader = "task,variant,seed,token_acc,seq_acc,params,table1_flops";

std::string loss_csv_row(const LossRecord& record);
std::string metrics_csv_row(const RunReport& report);

}  // namespace kvt
