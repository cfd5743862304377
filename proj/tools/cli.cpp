#include "cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "textldm/checkpoint.hpp"
#include "textldm/corpus.hpp"
#include "textldm/eval.hpp"
#include "textldm/flowdiff.hpp"
#include "textldm/metrics.hpp"
#include "textldm/train.hpp"

namespace tldm::cli {

namespace {

struct MakeCorpusArgs {
  std::string out;
  std::string vocab_out;
  std::int64_t docs = 2000;
  std::uint64_t seed = 1;
};

struct TrainVaeArgs {
  std::string corpus;
  std::string out;
  TrainConfig train;
  int latent_dim = 16;
  double beta = 1e-3;
  double lambda = 1.0;
  int repa_layer_offset = -3;
  int layers = 4;
  int dim = 128;
  int heads = 4;
  int ffn_mult = 4;
};

struct TrainDitArgs {
  std::string vae;
  std::string corpus;
  std::string out;
  TrainConfig train;
  int layers = 6;
  int dim = 192;
  int heads = 6;
  int ffn_mult = 4;
  std::string schedule = "logit_normal";
  double schedule_std = 1.5;
  double p_uncond = 0.1;
  bool timestep_conditioning = false;
  double split_lo = 0.4;
  double split_hi = 0.6;
  double p_full = 0.1;
};

struct SampleArgs {
  std::string vae;
  std::string dit;
  std::string prompt;
  bool unconditional = false;
  int len = -1;
  int steps = 50;      // 50-step Euler default
  double cfg = 7.0;    // guidance scale default
  std::uint64_t seed = 1;
  std::string dump_at;  // trace only
};

struct EvalArgs {
  std::string vae;
  std::string dit;
  std::string testset;
  int samples = 0;
  int steps = 50;
  double cfg = 7.0;
  double split_lo = 0.4;
  double split_hi = 0.6;
  int max_len = 64;
  std::uint64_t seed = 1;
};

TrainConfig* add_train_flags(CLI::App* cmd, TrainConfig& t) {
  cmd->add_option("--steps", t.steps, "Optimizer steps");
  cmd->add_option("--batch", t.batch, "Batch size");
  cmd->add_option("--lr", t.lr, "Learning rate");
  cmd->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay");
  cmd->add_option("--kl-warmup", t.kl_warmup_fraction, "KL warmup fraction of total steps");
  cmd->add_option("--seed", t.seed, "Master seed");
  cmd->add_option("--eval-every", t.eval_every, "Loss log interval");
  cmd->add_option("--clip", t.clip_norm, "Global gradient-norm clip");
  cmd->add_option("--max-len", t.max_len, "Maximum document length in tokens");
  cmd->add_option("--holdout", t.holdout_docs, "Documents reserved for held-out evaluation");
  cmd->add_flag("--save-optimizer", t.save_optimizer_state, "Store optimizer moments");
  return &t;
}

/// Applies config-file entries as synthesized flags ahead of the user's
/// flags; explicit flags win because every option takes the last value.
std::vector<std::string> merge_config_file(const std::vector<std::string>& args,
                                           const CLI::App& app, std::ostream& err, bool* ok) {
  *ok = true;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (config_path.empty() || args.empty()) return args;

  const CLI::App* sub = nullptr;
  for (const auto* s : const_cast<CLI::App&>(app).get_subcommands(nullptr)) {
    if (s->get_name() == args[0]) sub = s;
  }
  if (!sub) return args;

  std::set<std::string> known;
  for (const auto* opt : sub->get_options()) {
    for (const auto& lname : opt->get_lnames()) known.insert(lname);
  }

  std::ifstream in(config_path);
  if (!in) {
    err << "textldm: cannot open config file: " << config_path << "\n";
    *ok = false;
    return args;
  }
  std::vector<std::string> injected;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto sep = line.find('=');
    if (sep == std::string::npos) {
      err << "textldm: malformed config line " << line_no << ": '" << line << "'\n";
      *ok = false;
      return args;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, sep));
    const std::string value = trim(line.substr(sep + 1));
    if (!known.count(key)) {
      err << "textldm: unknown config key '" << key << "' for subcommand '" << args[0] << "'\n";
      *ok = false;
      return args;
    }
    injected.push_back("--" + key + "=" + value);
  }

  std::vector<std::string> merged;
  merged.push_back(args[0]);
  merged.insert(merged.end(), injected.begin(), injected.end());
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<int> parse_dump_at(const std::string& spec, int max_steps) {
  std::vector<int> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    int v = 0;
    try {
      v = std::stoi(item);
    } catch (const std::exception&) {
      throw UsageError("--dump-at entry '" + item + "' is not an integer");
    }
    if (v < 1 || v > max_steps) {
      throw UsageError("--dump-at step " + std::to_string(v) + " outside [1, " +
                       std::to_string(max_steps) + "]");
    }
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Command bodies
// ---------------------------------------------------------------------------

int cmd_make_corpus(const MakeCorpusArgs& a, std::ostream& out) {
  const auto docs = generate_synthetic_corpus(static_cast<std::size_t>(a.docs), a.seed);
  save_corpus_file(a.out, docs);
  if (!a.vocab_out.empty()) save_vocab_file(a.vocab_out, build_vocab(docs));
  out << "wrote " << docs.size() << " documents to " << a.out << "\n";
  return 0;
}

int cmd_train_vae(const TrainVaeArgs& a, std::ostream& out) {
  const auto corpus = load_corpus_file(a.corpus);
  VaeConfig cfg;
  cfg.latent_dim = a.latent_dim;
  cfg.beta = static_cast<float>(a.beta);
  cfg.lambda_repa = static_cast<float>(a.lambda);
  cfg.repa_layer_offset = a.repa_layer_offset;
  cfg.encoder = TransformerConfig{.layers = a.layers,
                                  .model_dim = a.dim,
                                  .heads = a.heads,
                                  .ffn_multiplier = a.ffn_mult,
                                  .max_positions = std::max(a.train.max_len, 64)};
  cfg.decoder = cfg.encoder;
  auto result = train_vae(corpus, cfg, a.train, [&](const std::string& line) { out << line << "\n"; });
  save_checkpoint(result.checkpoint, a.out);
  out << "checkpoint = " << a.out << "\n";
  return 0;
}

int cmd_train_dit(const TrainDitArgs& a, std::ostream& out) {
  const auto corpus = load_corpus_file(a.corpus);
  const Checkpoint vae_ckpt = load_checkpoint(a.vae);
  DitConfig cfg;
  cfg.backbone = TransformerConfig{.layers = a.layers,
                                   .model_dim = a.dim,
                                   .heads = a.heads,
                                   .ffn_multiplier = a.ffn_mult,
                                   .max_positions = std::max(a.train.max_len, 64)};
  cfg.schedule = parse_schedule(a.schedule, a.schedule_std);
  cfg.p_uncond = a.p_uncond;
  cfg.timestep_conditioning = a.timestep_conditioning;
  DitBatchConfig split;
  split.split_lo = a.split_lo;
  split.split_hi = a.split_hi;
  split.p_full = a.p_full;
  auto result = train_dit(vae_ckpt, corpus, cfg, split, a.train,
                          [&](const std::string& line) { out << line << "\n"; });
  save_checkpoint(result.checkpoint, a.out);
  out << "checkpoint = " << a.out << "\n";
  return 0;
}

struct LoadedPipeline {
  LoadedVae vae;
  DitModel dit;
};

LoadedPipeline load_pipeline(const std::string& vae_path, const std::string& dit_path) {
  LoadedPipeline p{vae_from_checkpoint(load_checkpoint(vae_path)),
                   dit_from_checkpoint(load_checkpoint(dit_path))};
  if (p.vae.model.config.latent_dim != p.dit.config.latent_dim) {
    throw std::runtime_error("latent dimension mismatch: VAE d=" +
                             std::to_string(p.vae.model.config.latent_dim) + ", DiT d=" +
                             std::to_string(p.dit.config.latent_dim));
  }
  return p;
}

int cmd_sample(const SampleArgs& a, std::ostream& out, bool trace_mode) {
  LoadedPipeline p = load_pipeline(a.vae, a.dit);
  const TokenSeq context =
      a.unconditional ? TokenSeq{} : encode(a.prompt, p.vae.vocab);

  Rng rng = Rng::stream(a.seed, "sample");
  std::vector<int> dump_steps;
  std::vector<int> trace_at;
  if (trace_mode) {
    std::string spec = a.dump_at;
    if (spec.empty()) {
      // default: five evenly spaced dumps
      std::ostringstream ss;
      for (int i = 1; i <= 5; ++i) ss << (i > 1 ? "," : "") << std::max(1, a.steps * i / 5);
      spec = ss.str();
    }
    dump_steps = parse_dump_at(spec, a.steps);
    for (int n : dump_steps) trace_at.push_back(a.steps - n);  // grid index
  }

  std::vector<std::pair<int, TokenSeq>> trace_tokens;
  TokenSeq ids = sample_continuation(p.vae.model, p.dit, context, a.len, a.steps, a.cfg, rng,
                                     nullptr, trace_mode ? &trace_tokens : nullptr, trace_at);

  if (trace_mode) {
    const auto grid = inference_grid(p.dit.config.schedule, a.steps);
    for (int n : dump_steps) {
      const int k = a.steps - n;
      const TokenSeq* toks = nullptr;
      for (const auto& [idx, t] : trace_tokens) {
        if (idx == k) toks = &t;
      }
      char tbuf[32];
      std::snprintf(tbuf, sizeof(tbuf), "%.6f", grid[static_cast<std::size_t>(n)]);
      out << "step " << n << " t=" << tbuf << " | "
          << (toks ? decode(truncate_at_eos(*toks), p.vae.vocab) : "") << "\n";
    }
  } else {
    out << decode(truncate_at_eos(ids), p.vae.vocab) << "\n";
  }
  return 0;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  LoadedPipeline p = load_pipeline(a.vae, a.dit);
  const auto docs = load_corpus_file(a.testset);
  const auto testset = encode_corpus(docs, p.vae.vocab, a.max_len);
  EvalConfig cfg;
  cfg.steps = a.steps;
  cfg.cfg_scale = a.cfg;
  cfg.split_lo = a.split_lo;
  cfg.split_hi = a.split_hi;
  cfg.seed = a.seed;
  cfg.max_samples = a.samples;
  EvalReport report = continuation_eval(p.vae.model, p.vae.vocab, p.dit, testset, cfg);
  out << report.render_deterministic();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "wall_ms = %.1f", report.wall_ms);
  err << buf << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TextLDM: latent flow-matching text generation at desk scale", "textldm"};
  app.require_subcommand(1);

  MakeCorpusArgs mc;
  auto* make_corpus = app.add_subcommand("make-corpus", "Write a synthetic grammar corpus");
  make_corpus->add_option("--out", mc.out, "Corpus file (one document per line)")->required();
  make_corpus->add_option("--docs", mc.docs, "Number of documents");
  make_corpus->add_option("--seed", mc.seed, "Generator seed");
  make_corpus->add_option("--vocab-out", mc.vocab_out, "Also write the vocabulary file");

  TrainVaeArgs tv;
  auto* train_vae_cmd = app.add_subcommand("train-vae", "Train the token VAE (stage one)");
  train_vae_cmd->add_option("--corpus", tv.corpus, "Training corpus file")->required();
  train_vae_cmd->add_option("--out", tv.out, "Output checkpoint path")->required();
  add_train_flags(train_vae_cmd, tv.train);
  train_vae_cmd->add_option("--latent-dim", tv.latent_dim, "Latent channels per token");
  train_vae_cmd->add_option("--beta", tv.beta, "KL weight");
  train_vae_cmd->add_option("--lambda", tv.lambda, "Alignment loss weight");
  train_vae_cmd->add_option("--repa-layer-offset", tv.repa_layer_offset,
                            "Teacher layer (-1 = last)");
  train_vae_cmd->add_option("--layers", tv.layers, "Encoder/decoder layers");
  train_vae_cmd->add_option("--dim", tv.dim, "Model width");
  train_vae_cmd->add_option("--heads", tv.heads, "Attention heads");
  train_vae_cmd->add_option("--ffn-mult", tv.ffn_mult, "FFN width multiplier");

  TrainDitArgs td;
  auto* train_dit_cmd = app.add_subcommand("train-dit", "Train the velocity model (stage two)");
  train_dit_cmd->add_option("--vae", td.vae, "VAE checkpoint")->required();
  train_dit_cmd->add_option("--corpus", td.corpus, "Training corpus file")->required();
  train_dit_cmd->add_option("--out", td.out, "Output checkpoint path")->required();
  add_train_flags(train_dit_cmd, td.train);
  train_dit_cmd->add_option("--layers", td.layers, "Backbone layers");
  train_dit_cmd->add_option("--dim", td.dim, "Model width");
  train_dit_cmd->add_option("--heads", td.heads, "Attention heads");
  train_dit_cmd->add_option("--ffn-mult", td.ffn_mult, "FFN width multiplier");
  train_dit_cmd->add_option("--schedule", td.schedule, "Timestep schedule")
      ->check(CLI::IsMember({"logit_normal", "uniform"}));
  train_dit_cmd->add_option("--schedule-std", td.schedule_std, "Logit-normal std");
  train_dit_cmd->add_option("--p-uncond", td.p_uncond, "Condition dropout probability");
  train_dit_cmd->add_flag("--timestep-conditioning", td.timestep_conditioning,
                          "Inject t via adaptive norm");
  train_dit_cmd->add_option("--split-lo", td.split_lo, "Context split lower bound");
  train_dit_cmd->add_option("--split-hi", td.split_hi, "Context split upper bound");
  train_dit_cmd->add_option("--p-full", td.p_full, "Probability of a full-target sample");

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "Generate a continuation for a prompt");
  sample_cmd->add_option("--vae", sa.vae, "VAE checkpoint")->required();
  sample_cmd->add_option("--dit", sa.dit, "DiT checkpoint")->required();
  sample_cmd->add_option("--prompt", sa.prompt, "Prompt text");
  sample_cmd->add_flag("--unconditional", sa.unconditional, "Skip prompt encoding");
  sample_cmd->add_option("--len", sa.len, "Target length in tokens")
      ->required()
      ->check(CLI::NonNegativeNumber);
  sample_cmd->add_option("--steps", sa.steps, "Euler steps");
  sample_cmd->add_option("--cfg", sa.cfg, "Guidance scale");
  sample_cmd->add_option("--seed", sa.seed, "Sampling seed");

  SampleArgs tr;
  auto* trace_cmd = app.add_subcommand("trace", "Dump the stepwise denoising progression");
  trace_cmd->add_option("--vae", tr.vae, "VAE checkpoint")->required();
  trace_cmd->add_option("--dit", tr.dit, "DiT checkpoint")->required();
  trace_cmd->add_option("--prompt", tr.prompt, "Prompt text");
  trace_cmd->add_flag("--unconditional", tr.unconditional, "Skip prompt encoding");
  trace_cmd->add_option("--len", tr.len, "Target length in tokens")
      ->required()
      ->check(CLI::NonNegativeNumber);
  trace_cmd->add_option("--steps", tr.steps, "Euler steps");
  trace_cmd->add_option("--cfg", tr.cfg, "Guidance scale");
  trace_cmd->add_option("--seed", tr.seed, "Sampling seed");
  trace_cmd->add_option("--dump-at", tr.dump_at, "Comma-separated step indices to record");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Continuation evaluation on a test set");
  eval_cmd->add_option("--vae", ev.vae, "VAE checkpoint")->required();
  eval_cmd->add_option("--dit", ev.dit, "DiT checkpoint")->required();
  eval_cmd->add_option("--testset", ev.testset, "Test corpus file")->required();
  eval_cmd->add_option("--samples", ev.samples, "Evaluate at most this many documents");
  eval_cmd->add_option("--steps", ev.steps, "Euler steps");
  eval_cmd->add_option("--cfg", ev.cfg, "Guidance scale");
  eval_cmd->add_option("--split-lo", ev.split_lo, "Split lower bound");
  eval_cmd->add_option("--split-hi", ev.split_hi, "Split upper bound");
  eval_cmd->add_option("--max-len", ev.max_len, "Maximum document length");
  eval_cmd->add_option("--seed", ev.seed, "Evaluation seed");

  std::string config_path;
  for (auto* sub : app.get_subcommands(nullptr)) {
    sub->add_option("--config", config_path, "Config file with key = value lines");
    for (auto* opt : sub->get_options()) opt->take_last();
  }

  bool config_ok = true;
  const std::vector<std::string> merged = merge_config_file(args, app, err, &config_ok);
  if (!config_ok) return 1;

  try {
    // CLI11 consumes reversed argv without the program name.
    std::vector<std::string> reversed(merged.rbegin(), merged.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto parsed = app.get_subcommands();
    out << (parsed.empty() ? app.help() : parsed[0]->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "textldm: " << e.what() << "\n";
    err << "run 'textldm --help' for usage\n";
    return 1;
  }

  try {
    if (make_corpus->parsed()) return cmd_make_corpus(mc, out);
    if (train_vae_cmd->parsed()) return cmd_train_vae(tv, out);
    if (train_dit_cmd->parsed()) return cmd_train_dit(td, out);
    if (sample_cmd->parsed()) return cmd_sample(sa, out, false);
    if (trace_cmd->parsed()) return cmd_sample(tr, out, true);
    if (eval_cmd->parsed()) return cmd_eval(ev, out, err);
  } catch (const UsageError& e) {
    err << "textldm: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "textldm: " << e.what() << "\n";
    return 2;
  }
  err << "textldm: no command\n";
  return 1;
}

}  // namespace tldm::cli
