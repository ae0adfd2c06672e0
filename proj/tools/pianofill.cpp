#include <CLI11.hpp>
#include <csignal>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <pthread.h>
#include <thread>

#include "pianofill/encoding.hpp"
#include "pianofill/inference/bench.hpp"
#include "pianofill/inference/engine.hpp"
#include "pianofill/midi_file.hpp"
#include "pianofill/model/checkpoint.hpp"
#include "pianofill/service/api.hpp"
#include "pianofill/service/server.hpp"
#include "pianofill/training/trainer.hpp"

namespace {

using namespace pianofill;
using nlohmann::json;

model::ModelConfig named_config(const std::string& name) {
  if (name == "reference") return model::ModelConfig::reference();
  if (name == "desk") return model::ModelConfig::desk();
  if (name == "toy") return model::ModelConfig::toy();
  std::ifstream in(name);
  if (!in) throw std::runtime_error("unknown model '" + name + "' (expected reference, desk, toy or a JSON file)");
  return json::parse(in).get<model::ModelConfig>();
}

struct ServeArgs {
  std::string ckpt, host = "127.0.0.1", cors = "*";
  int port = 8080, max_sessions = 4;
};

int serve(const ServeArgs& a) {
  std::shared_ptr<const service::LoadedModel> model;
  if (!a.ckpt.empty()) model = service::load_model(a.ckpt);
  service::ServerOptions opt{a.host, a.port, a.max_sessions, a.cors};
  service::Server server(opt, model);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  const int port = server.bind();
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  std::cerr << "listening on http://" << a.host << ':' << port
            << (model ? " with " + model->name : std::string(" without a model")) << std::endl;
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

struct TrainArgs {
  std::string data, out, model = "desk", init, log, mask_mode = "slice", short_policy = "pad";
  training::TrainConfig cfg;
  bool no_pedal = false, no_augment = false;
};

int train(TrainArgs a) {
  a.cfg.mask_mode = a.mask_mode == "channel" ? training::MaskMode::kChannel : training::MaskMode::kSlice;
  a.cfg.short_policy = a.short_policy == "skip" ? training::ShortChunkPolicy::kSkip : training::ShortChunkPolicy::kPad;
  a.cfg.augment = !a.no_augment;

  model::ModelConfig config;
  model::ModelParams<float> params;
  if (!a.init.empty()) {
    auto ck = model::load_checkpoint(a.init);
    config = ck.config;
    params = std::move(ck.params);
  } else {
    config = named_config(a.model);
    Rng rng(a.cfg.seed, 0x1417);
    params = model::ModelParams<float>::initialize(config, rng);
  }

  std::vector<std::string> warnings;
  const training::Corpus corpus = training::load_corpus(a.data, !a.no_pedal, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  std::cerr << "corpus: " << corpus.train.size() << " train, " << corpus.valid.size() << " validation performances; "
            << params.parameter_count() << " parameters\n";

  std::ofstream log_file;
  if (!a.log.empty()) log_file.open(a.log);
  training::TrainRunOptions run;
  run.checkpoint_path = a.out;
  run.log = a.log.empty() ? &std::cout : &log_file;
  training::run_training(config, std::move(params), corpus, a.cfg, run);
  return 0;
}

struct InpaintArgs {
  std::string ckpt, in, out, mode = "contiguous", overflow = "rescale";
  double start = 0, end = 0, top_p = 0.95;
  std::optional<double> density;
  std::optional<int> note_count;
  std::uint64_t seed = 0;
  bool velocity_only = false, stream = false, no_pedal = false;
};

int inpaint(const InpaintArgs& a) {
  inference::InpaintRequest req;
  if (!a.in.empty()) {
    MidiReadOptions mo;
    mo.sustain_pedal = !a.no_pedal;
    auto read = read_midi(read_file_bytes(a.in), mo);
    for (const auto& w : read.warnings) std::cerr << "warning: " << w << '\n';
    req.context = std::move(read.performance);
  }
  req.mode = *inference::parse_mode(a.mode);
  req.overflow = *inference::parse_overflow(a.overflow);
  req.start_s = a.start;
  req.end_s = a.end;
  req.density = a.density;
  req.note_count = a.note_count;
  req.top_p = a.top_p;
  req.seed = a.seed;
  req.velocity_only = a.velocity_only;

  const auto ck = model::load_checkpoint(a.ckpt);
  const inference::InpaintEngine engine(ck.config, ck.params);
  inference::NoteCallback cb;
  if (a.stream) cb = [](const NoteEvent& n) { std::cout << service::note_to_json(n).dump() << std::endl; };
  const auto result = engine.inpaint(req, cb);
  write_file_bytes(a.out, write_midi(result.performance));
  const auto& t = result.timings;
  std::cerr << json{{"notes_in", req.context.size()},
                    {"notes_out", result.performance.size()},
                    {"generated", result.emitted.size()},
                    {"rescaled", result.rescaled},
                    {"encode_s", t.encode_s},
                    {"prefix_s", t.prefix_s},
                    {"sampling_s", t.sampling_s},
                    {"first_note_s", t.first_note_s},
                    {"total_s", t.total_s}}
                   .dump()
            << '\n';
  return 0;
}

int encode_cmd(const std::string& in, const std::string& out, bool no_pedal) {
  MidiReadOptions mo;
  mo.sustain_pedal = !no_pedal;
  auto read = read_midi(read_file_bytes(in), mo);
  for (const auto& w : read.warnings) std::cerr << "warning: " << w << '\n';
  const TokenSequence tokens = encode(read.performance);
  if (out.empty() || out == "-") {
    write_token_text(std::cout, tokens);
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    write_token_text(f, tokens);
  }
  return 0;
}

int decode_cmd(const std::string& in, const std::string& out) {
  TokenSequence tokens;
  if (in.empty() || in == "-") {
    tokens = read_token_text(std::cin);
  } else {
    std::ifstream f(in);
    if (!f) throw std::runtime_error("cannot read " + in);
    tokens = read_token_text(f);
  }
  write_file_bytes(out, write_midi(decode(tokens)));
  return 0;
}

struct BenchArgs {
  std::string ckpt, model = "desk", csv;
  inference::BenchOptions opt;
};

int bench(const BenchArgs& a) {
  std::unique_ptr<inference::InpaintEngine> engine;
  if (!a.ckpt.empty()) {
    auto ck = model::load_checkpoint(a.ckpt);
    engine = std::make_unique<inference::InpaintEngine>(ck.config, std::move(ck.params));
  } else {
    const auto cfg = named_config(a.model);
    Rng rng(a.opt.seed, 0xBE4C);
    engine = std::make_unique<inference::InpaintEngine>(cfg, model::ModelParams<float>::initialize(cfg, rng));
  }
  const auto report = inference::run_bench(*engine, a.opt);
  if (a.csv.empty() || a.csv == "-") {
    inference::write_bench_csv(std::cout, report);
  } else {
    std::ofstream f(a.csv);
    inference::write_bench_csv(f, report);
  }
  const auto& s = report.summary;
  std::cerr << json{{"position_spread", s.position_spread},
                    {"suffix_difference", s.suffix_difference},
                    {"slope_s_per_note", s.slope_s_per_note},
                    {"r2", s.r2},
                    {"position_ok", s.position_ok},
                    {"suffix_ok", s.suffix_ok},
                    {"linear_ok", s.linear_ok}}
                   .dump()
            << '\n';
  return s.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pianofill: note-level piano inpainting"};
  app.require_subcommand(1);

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP inpainting service");
  serve_cmd->add_option("--ckpt", sa.ckpt, "Checkpoint to serve (omit to start without a model)");
  serve_cmd->add_option("--host", sa.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", sa.port, "Port (0 picks a free one)")->capture_default_str();
  serve_cmd->add_option("--max-sessions", sa.max_sessions, "Concurrent generations before 429")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  serve_cmd->add_option("--cors-origin", sa.cors, "Access-Control-Allow-Origin value")->capture_default_str();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a directory of MIDI files");
  train_cmd->add_option("--data", ta.data, "Directory of .mid/.midi files")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--steps", ta.cfg.total_steps, "Optimizer steps")->capture_default_str();
  train_cmd->add_option("--seed", ta.cfg.seed, "Root seed")->capture_default_str();
  train_cmd->add_option("--chunk-notes", ta.cfg.chunk_notes, "Notes per training chunk")->capture_default_str();
  train_cmd->add_option("--mask-mode", ta.mask_mode, "Constraint sampling")
      ->check(CLI::IsMember({"slice", "channel"}))
      ->capture_default_str();
  train_cmd->add_option("--model", ta.model, "reference, desk, toy or a JSON config file")->capture_default_str();
  train_cmd->add_option("--init", ta.init, "Start from this checkpoint instead of a fresh model");
  train_cmd->add_option("--batch-size", ta.cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", ta.cfg.learning_rate)->capture_default_str();
  train_cmd->add_option("--warmup", ta.cfg.warmup_steps)->capture_default_str();
  train_cmd->add_option("--grad-clip", ta.cfg.grad_clip)->capture_default_str();
  train_cmd->add_option("--short", ta.short_policy, "Short performances")
      ->check(CLI::IsMember({"pad", "skip"}))
      ->capture_default_str();
  train_cmd->add_option("--log-every", ta.cfg.log_every)->capture_default_str();
  train_cmd->add_option("--checkpoint-every", ta.cfg.checkpoint_every)->capture_default_str();
  train_cmd->add_option("--log", ta.log, "JSONL progress file (default stdout)");
  train_cmd->add_flag("--no-augment", ta.no_augment);
  train_cmd->add_flag("--no-pedal", ta.no_pedal, "Ignore the sustain pedal when reading MIDI");

  InpaintArgs ia;
  auto* inpaint_cmd = app.add_subcommand("inpaint", "Fill or rewrite a region of a MIDI file");
  inpaint_cmd->add_option("--ckpt", ia.ckpt)->required();
  inpaint_cmd->add_option("--in", ia.in, "Context MIDI file (optional for unconditional)");
  inpaint_cmd->add_option("--out", ia.out)->required();
  inpaint_cmd->add_option("--start", ia.start, "Region start (s)")->required();
  inpaint_cmd->add_option("--end", ia.end, "Region end (s)")->required();
  auto* density = inpaint_cmd->add_option("--density", ia.density, "Notes per second");
  inpaint_cmd->add_option("--note-count", ia.note_count)->excludes(density);
  inpaint_cmd->add_option("--mode", ia.mode)
      ->check(CLI::IsMember({"contiguous", "velocify", "pitchify", "variation", "unconditional"}))
      ->capture_default_str();
  inpaint_cmd->add_option("--top-p", ia.top_p)->capture_default_str();
  inpaint_cmd->add_option("--seed", ia.seed)->capture_default_str();
  inpaint_cmd->add_option("--overflow", ia.overflow)
      ->check(CLI::IsMember({"rescale", "truncate", "free"}))
      ->capture_default_str();
  inpaint_cmd->add_flag("--velocity-only", ia.velocity_only, "velocify: keep durations");
  inpaint_cmd->add_flag("--stream", ia.stream, "Print notes as JSON lines while they are generated");
  inpaint_cmd->add_flag("--no-pedal", ia.no_pedal);

  std::string enc_in, enc_out;
  bool enc_no_pedal = false;
  auto* encode_sub = app.add_subcommand("encode", "MIDI to token text");
  encode_sub->add_option("--in", enc_in)->required();
  encode_sub->add_option("--out", enc_out, "Token text (default stdout)");
  encode_sub->add_flag("--no-pedal", enc_no_pedal);

  std::string dec_in, dec_out;
  auto* decode_sub = app.add_subcommand("decode", "Token text to MIDI");
  decode_sub->add_option("--in", dec_in, "Token text (default stdin)");
  decode_sub->add_option("--out", dec_out)->required();

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Time the sampling phase over gap sizes and positions");
  bench_cmd->add_option("--ckpt", ba.ckpt, "Checkpoint (default: random weights)");
  bench_cmd->add_option("--model", ba.model, "Config for random weights")->capture_default_str();
  bench_cmd->add_option("--total-notes", ba.opt.total_notes)->capture_default_str();
  bench_cmd->add_option("--gap-notes", ba.opt.gap_notes)->capture_default_str();
  bench_cmd->add_option("--repeats", ba.opt.repeats)->capture_default_str();
  bench_cmd->add_option("--seed", ba.opt.seed)->capture_default_str();
  bench_cmd->add_option("--csv", ba.csv, "CSV output (default stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*serve_cmd) return serve(sa);
    if (*train_cmd) return train(ta);
    if (*inpaint_cmd) return inpaint(ia);
    if (*encode_sub) return encode_cmd(enc_in, enc_out, enc_no_pedal);
    if (*decode_sub) return decode_cmd(dec_in, dec_out);
    if (*bench_cmd) {
      const auto& t = ba.opt.total_notes;
      ba.opt.position_total = ba.opt.linear_total = *std::max_element(t.begin(), t.end());
      return bench(ba);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
