#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <iostream>
#include <sstream>

#include "kvt/attention.hpp"
#include "kvt/errors.hpp"
#include "kvt/model.hpp"
#include "kvt/runner.hpp"
#include "kvt/tasks.hpp"

namespace py = pybind11;
using namespace kvt;

namespace {

py::dict cost_dict(const CostReport& c) {
  py::dict d;
  d["variant"] = variant_name(c.variant);
  d["n"] = c.n;
  d["d"] = c.d;
  d["heads"] = c.heads;
  d["pos_dim"] = c.pos_dim;
  d["table1_flops"] = c.table1_flops;
  d["table1_params"] = c.table1_params;
  d["full_layer_params"] = c.full_layer_params;
  d["full_forward_flops"] = c.full_forward_flops;
  return d;
}

py::dict report_dict(const RunReport& r) {
  py::dict d;
  d["task"] = r.task;
  d["variant"] = r.variant;
  d["seed"] = r.seed;
  d["steps"] = r.steps_completed;
  d["token_acc"] = r.accuracy.token;
  d["seq_acc"] = r.accuracy.sequence;
  d["initial_val_loss"] = r.initial_val_loss;
  d["final_val_loss"] = r.final_val_loss;
  d["params"] = r.params;
  d["cost"] = cost_dict(r.cost);
  py::list records;
  for (const auto& rec : r.records) records.append(py::make_tuple(rec.step, rec.split, rec.loss, rec.lr));
  d["records"] = records;
  return d;
}

py::array_t<double> to_numpy(const Tensor64& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict attention(py::array_t<double, py::array::c_style | py::array::forcecast> x, const std::string& variant,
                   std::size_t heads, std::size_t pos_dim, bool causal, std::uint64_t seed) {
  if (x.ndim() != 3) throw ShapeError("attention: x must be [batch, len, d_model]");
  const Shape shape{static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1)),
                    static_cast<std::size_t>(x.shape(2))};
  Tensor64 input(shape, std::vector<double>(x.data(), x.data() + x.size()));
  Rng rng(seed);
  const auto layer = AttentionLayer<double>::create(shape[2], heads, shape[1], AttentionKind::parse(variant, pos_dim),
                                                    causal, rng);
  AttentionTrace<double> trace;
  AttentionContext<double> ctx;
  ctx.trace = &trace;
  const auto out = multi_head_attention(input, layer, ctx);
  py::dict d;
  d["output"] = to_numpy(out);
  d["scores"] = to_numpy(trace.scores);
  d["weights"] = to_numpy(trace.weights);
  return d;
}

py::list train(const std::map<std::string, std::string>& config, bool verbose) {
  const auto parsed = parse_run_config(config);
  std::ostringstream quiet;
  SweepResult result;
  {
    py::gil_scoped_release release;
    result = run_sweep(parsed, verbose ? static_cast<std::ostream&>(std::cerr) : quiet);
  }
  if (!result.failures.empty() && result.reports.empty()) throw NumericError(result.failures.front());
  py::list out;
  for (const auto& r : result.reports) out.append(report_dict(r));
  return out;
}

struct PyModel {
  Checkpoint checkpoint;
  Model model;

  explicit PyModel(const std::string& path) : checkpoint(read_checkpoint(path)), model(load_model(checkpoint)) {}

  py::array_t<float> forward(py::array_t<std::int64_t, py::array::c_style | py::array::forcecast> tokens) {
    if (tokens.ndim() != 2) throw ShapeError("forward: tokens must be [batch, len]");
    TokenBatch batch;
    batch.batch = static_cast<std::size_t>(tokens.shape(0));
    batch.len = static_cast<std::size_t>(tokens.shape(1));
    for (py::ssize_t i = 0; i < tokens.size(); ++i) batch.ids.push_back(static_cast<std::int32_t>(tokens.data()[i]));
    model.set_training(false);
    NoGradScope<float> no_grad;
    const auto logits = model.forward(batch);
    std::vector<py::ssize_t> shape(logits.shape().begin(), logits.shape().end());
    py::array_t<float> out(shape);
    std::copy(logits.data().begin(), logits.data().end(), out.mutable_data());
    return out;
  }

  bool char_level() const { return checkpoint.task == "chars"; }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Transformers with QKV, KV and KV+Pos attention";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "cost",
      [](const std::string& variant, std::uint64_t n, std::uint64_t d, std::uint64_t heads, std::uint64_t pos_dim) {
        const auto kind = AttentionKind::parse(variant, std::max<std::uint64_t>(pos_dim, 1));
        return cost_dict(count_cost(kind.variant(), n, d, heads, pos_dim));
      },
      py::arg("variant"), py::arg("n"), py::arg("d"), py::arg("heads"), py::arg("pos_dim") = 0,
      "Multiply-accumulate and parameter counts for one attention layer.");

  m.def("attention", &attention, py::arg("x"), py::arg("variant"), py::arg("heads"), py::arg("pos_dim") = 10,
        py::arg("causal") = false, py::arg("seed") = 0,
        "Multi-head attention with freshly initialised weights; returns output, scores and weights.");

  m.def(
      "synthetic_example",
      [](const std::string& task, std::size_t seq_len, std::uint64_t seed) {
        Rng rng(seed);
        return gen_synthetic({parse_synthetic(task), seq_len}, rng);
      },
      py::arg("task"), py::arg("seq_len"), py::arg("seed") = 0);
  m.def(
      "apply_transform", [](const std::string& task, const Digits& x) { return apply_transform(parse_synthetic(task), x); },
      py::arg("task"), py::arg("digits"));
  m.def("number_corpus", [] {
    const auto c = build_number_corpus();
    return py::make_tuple(c.vocab, c.ids);
  });

  m.def(
      "config", [](const std::map<std::string, std::string>& values) { return parse_run_config(values).to_map(); },
      py::arg("values") = std::map<std::string, std::string>{}, "Validated, fully expanded run config.");
  m.def("config_keys", &run_config_keys);
  m.def("train", &train, py::arg("config"), py::arg("verbose") = false,
        "Train every listed attention variant and write artifacts under out_dir.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def_property_readonly("config", [](const PyModel& p) { return p.checkpoint.config.to_map(); })
      .def_property_readonly("vocab", [](const PyModel& p) { return p.checkpoint.vocab; })
      .def_property_readonly("task", [](const PyModel& p) { return p.checkpoint.task; })
      .def("forward", &PyModel::forward, py::arg("tokens"), "[batch, len] ids -> [batch, len, vocab] logits")
      .def(
          "encode", [](const PyModel& p, const std::string& text) {
            return encode_text(p.checkpoint.vocab, text, p.char_level());
          },
          py::arg("text"))
      .def(
          "decode",
          [](const PyModel& p, const std::vector<std::int32_t>& ids) {
            Corpus view;
            view.vocab = p.checkpoint.vocab;
            return detokenize(view, ids, p.char_level() ? "" : " ");
          },
          py::arg("ids"))
      .def(
          "generate",
          [](PyModel& p, std::vector<std::int32_t> prompt, std::size_t steps, double temperature, std::uint64_t seed) {
            Rng rng(seed);
            return generate(p.model, std::move(prompt), steps, temperature, rng);
          },
          py::arg("prompt"), py::arg("steps"), py::arg("temperature") = 0.0, py::arg("seed") = 0);
}
