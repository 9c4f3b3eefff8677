#include "kvt/reports.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "kvt/errors.hpp"
#include "kvt/text_format.hpp"

namespace kvt {

namespace {

std::string format_float(float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Row 0 of the batch, one head: [T, T].
std::vector<float> head_slice(const Tensor& t, std::size_t head) {
  const std::size_t len = t.dim(-1);
  const auto data = t.data();
  const auto begin = data.begin() + static_cast<std::ptrdiff_t>(head * len * len);
  return {begin, begin + static_cast<std::ptrdiff_t>(len * len)};
}

void write_matrix_csv(const std::filesystem::path& path, const std::vector<float>& m, std::size_t size) {
  auto out = open_for_write(path);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) out << (j ? "," : "") << format_float(m[i * size + j]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_pgm(std::ostream& out, const std::vector<float>& matrix, std::size_t size) {
  float peak = 0.0f;
  for (float v : matrix) peak = std::max(peak, v);
  out << "P2\n" << size << ' ' << size << "\n255\n";
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double v = std::max(0.0f, matrix[i * size + j]);
      const long gray = peak > 0.0f ? 255 - std::lround(255.0 * v / peak) : 255;
      out << (j ? " " : "") << gray;
    }
    out << '\n';
  }
}

AttentionMapFiles export_attention_map(const std::vector<AttentionTrace<float>>& traces, std::size_t layer,
                                       std::size_t head, const std::filesystem::path& stem) {
  if (layer >= traces.size()) {
    throw IndexError("layer " + std::to_string(layer) + " out of range (model has " + std::to_string(traces.size()) +
                     ")");
  }
  const auto& trace = traces[layer];
  const std::size_t heads = trace.weights.dim(1);
  if (head >= heads) {
    throw IndexError("head " + std::to_string(head) + " out of range (layer has " + std::to_string(heads) + ")");
  }
  const std::size_t len = trace.weights.dim(-1);
  AttentionMapFiles files{stem, stem, stem};
  files.weights_csv += ".csv";
  files.scores_csv += "_scores.csv";
  files.image += ".pgm";

  const auto weights = head_slice(trace.weights, head);
  write_matrix_csv(files.weights_csv, weights, len);
  write_matrix_csv(files.scores_csv, head_slice(trace.scores, head), len);
  auto img = open_for_write(files.image);
  write_pgm(img, weights, len);
  if (!img) throw IoError("failed writing " + files.image.string());
  return files;
}

AttentionMapFiles export_attention_map(Model& model, const TokenBatch& tokens, std::size_t layer, std::size_t head,
                                       const std::filesystem::path& stem) {
  const bool was_training = model.training();
  model.set_training(false);
  std::vector<AttentionTrace<float>> traces;
  {
    NoGradScope<float> no_grad;
    model.forward(tokens, &traces);
  }
  model.set_training(was_training);
  return export_attention_map(traces, layer, head, stem);
}

void write_cost_table(std::ostream& out, const std::vector<CostReport>& rows) {
  out << CostReport::csv_header() << '\n';
  for (const auto& r : rows) out << r.csv_row() << '\n';
}

void write_table1_reference(std::ostream& out, std::uint64_t n, std::uint64_t d, std::uint64_t m) {
  out << "kind,flops_formula,params_formula,flops,params\n";
  out << "qkv,2nd^2,2d^2," << 2 * n * d * d << ',' << 2 * d * d << '\n';
  out << "kvpos,nd^2+n^2m,d^2+m," << n * d * d + n * n * m << ',' << d * d + m << '\n';
  out << "kv,nd^2,d^2," << n * d * d << ',' << d * d << '\n';
}

std::string loss_csv_row(const LossRecord& r) {
  return std::to_string(r.step) + "," + r.split + "," + format_double(r.loss) + "," + format_double(r.lr);
}

std::string metrics_csv_row(const RunReport& r) {
  return r.task + "," + r.variant + "," + std::to_string(r.seed) + "," + format_double(r.accuracy.token) + "," +
         format_double(r.accuracy.sequence) + "," + std::to_string(r.params) + "," +
         std::to_string(r.cost.table1_flops);
}

}  // namespace kvt
