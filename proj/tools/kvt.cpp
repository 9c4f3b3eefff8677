#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "kvt/errors.hpp"
#include "kvt/reports.hpp"
#include "kvt/run_config.hpp"
#include "kvt/runner.hpp"
#include "kvt/text_format.hpp"

namespace {

using namespace kvt;

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;
};

struct CostArgs {
  std::vector<std::uint64_t> n{16};
  std::vector<std::uint64_t> d{64};
  std::vector<std::uint64_t> heads{2};
  std::uint64_t m = 10;
  std::string attention = "qkv,kv,kvpos";
  bool reference = false;
  std::string out;
};

struct MapArgs {
  std::string checkpoint;
  std::string input;
  std::string tokens;
  int layer = -1;
  std::size_t head = 0;
  bool all = false;
  std::string out;
};

struct GenArgs {
  std::string checkpoint;
  std::string prompt;
  std::size_t steps = 200;
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

bool char_level(const Checkpoint& ckpt) { return ckpt.task == "chars"; }

int do_train(const TrainArgs& args) {
  std::map<std::string, std::string> overrides;
  for (const auto& [key, opt] : args.options) {
    if (opt->count() > 0) overrides[key] = args.flags.at(key);
  }
  for (const auto& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    overrides[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  std::optional<std::filesystem::path> path;
  if (!args.config_path.empty()) path = args.config_path;
  const auto config = load_run_config(path, overrides);
  return run(config, std::cerr, std::cerr);
}

int do_cost(const CostArgs& args) {
  std::vector<CostReport> rows;
  for (const auto& name : split(args.attention, ',')) {
    const auto kind = AttentionKind::parse(trim(name), args.m);
    for (auto n : args.n)
      for (auto d : args.d)
        for (auto h : args.heads) rows.push_back(count_cost(kind, n, d, h));
  }
  std::ofstream file;
  if (!args.out.empty()) {
    file.open(args.out, std::ios::trunc);
    if (!file) throw IoError("cannot write " + args.out);
  }
  std::ostream& out = args.out.empty() ? std::cout : file;
  write_cost_table(out, rows);
  if (args.reference) {
    out << '\n';
    write_table1_reference(out, args.n.front(), args.d.front(), args.m);
  }
  return kExitOk;
}

int do_attnmap(const MapArgs& args) {
  const auto ckpt = read_checkpoint(args.checkpoint);
  auto model = load_model(ckpt);
  std::vector<std::int32_t> ids;
  if (!args.tokens.empty()) {
    for (const auto& part : split(args.tokens, ',')) ids.push_back(static_cast<std::int32_t>(parse_uint(trim(part), "tokens")));
  } else {
    ids = encode_text(ckpt.vocab, args.input, char_level(ckpt));
  }
  if (ids.empty()) throw ConfigError("attnmap needs --input or --tokens");
  const auto tokens = TokenBatch::single(ids);
  const std::size_t layers = ckpt.config.layers;
  if (args.all) {
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t h = 0; h < ckpt.config.heads; ++h) {
        export_attention_map(model, tokens, l, h, args.out + "_l" + std::to_string(l) + "_h" + std::to_string(h));
      }
    return kExitOk;
  }
  const std::size_t layer = args.layer < 0 ? layers - 1 : static_cast<std::size_t>(args.layer);
  const auto files = export_attention_map(model, tokens, layer, args.head, args.out);
  std::cout << files.weights_csv.string() << "\n" << files.scores_csv.string() << "\n" << files.image.string() << "\n";
  return kExitOk;
}

int do_gen(const GenArgs& args) {
  const auto ckpt = read_checkpoint(args.checkpoint);
  auto model = load_model(ckpt);
  const bool chars = char_level(ckpt);
  auto prompt = encode_text(ckpt.vocab, args.prompt, chars);
  Rng rng(args.seed);
  const auto ids = generate(model, prompt, args.steps, args.temperature, rng);
  Corpus view;
  view.vocab = ckpt.vocab;
  std::cout << detokenize(view, ids, chars ? "" : " ") << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformers with QKV, KV and KV+Pos attention: train, cost, attnmap, gen"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train one run per listed attention variant");
  train->add_option("-c,--config", train_args.config_path, "key=value config file");
  train->add_option("--set", train_args.sets, "Extra key=value override (repeatable)");
  for (const auto& key : run_config_keys()) {
    train_args.flags[key];
    train_args.options[key] = train->add_option("--" + key, train_args.flags[key], "Config key '" + key + "'");
  }

  CostArgs cost_args;
  auto* cost = app.add_subcommand("cost", "Print the attention cost table as CSV");
  cost->add_option("--n", cost_args.n, "Sequence lengths")->delimiter(',');
  cost->add_option("--d", cost_args.d, "Embedding dimensions")->delimiter(',');
  cost->add_option("--heads", cost_args.heads, "Head counts")->delimiter(',');
  cost->add_option("--pos_dim", cost_args.m, "KV+Pos table depth m");
  cost->add_option("--attention", cost_args.attention, "Comma-separated variants");
  cost->add_flag("--reference", cost_args.reference, "Append the symbolic Table 1 rows");
  cost->add_option("-o,--out", cost_args.out, "Write to a file instead of stdout");

  MapArgs map_args;
  auto* attnmap = app.add_subcommand("attnmap", "Export attention maps from a checkpoint");
  attnmap->add_option("--checkpoint", map_args.checkpoint)->required();
  attnmap->add_option("--input", map_args.input, "Text in the checkpoint's vocabulary");
  attnmap->add_option("--tokens", map_args.tokens, "Comma-separated token ids");
  attnmap->add_option("--layer", map_args.layer, "Layer index (default: last)");
  attnmap->add_option("--head", map_args.head, "Head index");
  attnmap->add_flag("--all", map_args.all, "Every layer and head");
  attnmap->add_option("-o,--out", map_args.out, "Output path stem")->required();

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "Generate text from a causal LM checkpoint");
  gen->add_option("--checkpoint", gen_args.checkpoint)->required();
  gen->add_option("--prompt", gen_args.prompt)->required();
  gen->add_option("--steps", gen_args.steps);
  gen->add_option("--temperature", gen_args.temperature, "0 selects the argmax");
  gen->add_option("--seed", gen_args.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return do_train(train_args);
    if (*cost) return do_cost(cost_args);
    if (*attnmap) return do_attnmap(map_args);
    if (*gen) return do_gen(gen_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IndexError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CapacityError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitDivergence;
  }
  return kExitOk;
}
