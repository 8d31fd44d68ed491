// nfhmm: train source models, separate mixtures, synthesize ground truth,
// time the inference engines and score separations.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nfhmm/bss_eval.hpp"
#include "nfhmm/error.hpp"
#include "nfhmm/nhmm.hpp"
#include "nfhmm/pipeline.hpp"
#include "nfhmm/signal_io.hpp"

namespace fs = std::filesystem;
using namespace nfhmm;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kIo = 2, kValidation = 3, kNumerical = 4 };

struct AnalysisOptions {
  std::size_t window = 0;  // 0 = 64 ms at the input sample rate
  std::size_t hop = 0;     // 0 = window / 4 (Hann) or window (rectangular)
  std::size_t fft = 0;     // 0 = window
  std::string window_kind = "hann";
  double gain = 1.0;
  std::string encoding = "float32";

  StftConfig config_for(double sample_rate) const {
    StftConfig c;
    if (window_kind == "hann") c.window = WindowKind::hann;
    else if (window_kind == "rect" || window_kind == "rectangular") c.window = WindowKind::rectangular;
    else throw ValidationError("unknown window kind '" + window_kind + "' (expected hann or rect)");
    if (window == 0) {
      c = StftConfig::for_rate(sample_rate);
      if (window_kind != "hann") c.window = WindowKind::rectangular;
    } else {
      c.window_length = window;
      c.hop_length = window / 4;
    }
    if (c.window == WindowKind::rectangular) c.hop_length = c.window_length;
    if (hop != 0) c.hop_length = hop;
    c.fft_length = fft != 0 ? fft : c.window_length;
    c.validate();
    return c;
  }

  WavEncoding wav_encoding() const {
    if (encoding == "float32") return WavEncoding::float32;
    if (encoding == "pcm16") return WavEncoding::pcm16;
    throw ValidationError("unknown encoding '" + encoding + "' (expected float32 or pcm16)");
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(12);
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::vector<std::string> inputs;
  std::string output;
  std::size_t states = 4;
  std::size_t elements = 5;
  std::size_t max_iters = 100;
  double rel_tol = 1e-5;
  std::uint64_t seed = 0;
};

int run_train(const TrainOptions& o, const AnalysisOptions& a) {
  std::vector<TimeSignal> signals;
  for (const auto& p : o.inputs) signals.push_back(load_wav(p));
  for (const auto& s : signals)
    if (s.sample_rate != signals.front().sample_rate)
      throw ValidationError("training files have different sample rates");
  const StftConfig stft_config = a.config_for(signals.front().sample_rate);
  TrainConfig tc;
  tc.max_iters = o.max_iters;
  tc.rel_tol = o.rel_tol;
  tc.seed = o.seed;
  const auto result = train_from_signals(signals, stft_config, o.states, o.elements, tc, a.gain);
  const fs::path out(o.output);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  save_model(o.output, result.model);
  std::cout << "iterations=" << result.iterations << "\n"
            << "log_likelihood=" << fmt(result.log_likelihood.back()) << "\n"
            << "model=" << o.output << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct SeparateOptions {
  std::string mixture;
  std::vector<std::string> models;
  std::string algo = "vi";
  double gamma = 1.0;
  std::size_t max_iters = 50;
  double rel_tol = 1e-4;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string stem;
  std::size_t max_joint_states = 4096;
};

int run_separate(const SeparateOptions& o, const AnalysisOptions& a) {
  const auto mixture = load_wav(o.mixture);
  std::vector<SourceModel> models;
  for (const auto& p : o.models) models.push_back(load_model(p));
  SeparateConfig cfg;
  cfg.algorithm = parse_algorithm(o.algo);
  cfg.gamma = o.gamma;
  cfg.max_iters = o.max_iters;
  cfg.rel_tol = o.rel_tol;
  cfg.seed = o.seed;
  cfg.gain = a.gain;
  cfg.max_joint_states = o.max_joint_states;
  detail::require(o.gamma >= 0.0, "gamma must be non-negative");
  const StftConfig stft_config = a.config_for(mixture.sample_rate);
  const auto report = separate(models, mixture, stft_config, cfg);

  const fs::path dir(o.out_dir);
  ensure_dir(dir);
  const std::string stem = o.stem.empty() ? fs::path(o.mixture).stem().string() : o.stem;
  const auto encoding = a.wav_encoding();
  for (std::size_t s = 0; s < report.separation.signals.size(); ++s)
    save_wav((dir / (stem + ".source" + std::to_string(s + 1) + ".wav")).string(),
             report.separation.signals[s], encoding);

  {
    auto out = open_out(dir / (stem + ".trace.tsv"));
    out << "iteration\t" << report.monitor_name << "\tseconds\n";
    for (std::size_t i = 0; i < report.monitor.size(); ++i)
      out << i + 1 << '\t' << report.monitor[i] << '\t'
          << (i < report.iteration_seconds.size() ? report.iteration_seconds[i]
                                                  : report.wall_seconds)
          << '\n';
  }
  if (!report.state_paths.empty()) {
    auto out = open_out(dir / (stem + ".states.tsv"));
    out << "frame";
    for (std::size_t s = 0; s < report.state_paths.size(); ++s) out << "\tsource" << s + 1;
    out << '\n';
    for (std::size_t t = 0; t < report.state_paths.front().size(); ++t) {
      out << t;
      for (const auto& path : report.state_paths) out << '\t' << path[t];
      out << '\n';
    }
  }
  double mean_seconds = 0.0;
  for (double v : report.iteration_seconds) mean_seconds += v;
  if (!report.iteration_seconds.empty()) mean_seconds /= report.iteration_seconds.size();
  {
    auto out = open_out(dir / (stem + ".report.txt"));
    out << "algorithm=" << to_string(report.algorithm) << "\n"
        << "sources=" << report.separation.signals.size() << "\n"
        << "frames=" << report.weights.rows() << "\n"
        << "elements=" << report.weights.cols() << "\n"
        << "gamma=" << o.gamma << "\n"
        << "seed=" << o.seed << "\n"
        << "iterations=" << report.iterations << "\n"
        << "converged=" << (report.converged ? "true" : "false") << "\n"
        << "monitor=" << report.monitor_name << "\n"
        << "monitor_final=" << (report.monitor.empty() ? 0.0 : report.monitor.back()) << "\n"
        << "mean_iteration_seconds=" << mean_seconds << "\n"
        << "wall_seconds=" << report.wall_seconds << "\n"
        << "masking_residual=" << report.masking_residual << "\n"
        << "trace=" << stem << ".trace.tsv\n";
  }
  std::cout << "algorithm=" << to_string(report.algorithm) << " iterations=" << report.iterations
            << " converged=" << (report.converged ? "true" : "false") << " "
            << report.monitor_name << "=" << fmt(report.monitor.back())
            << " wall_seconds=" << fmt(report.wall_seconds) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchOptions {
  std::vector<std::size_t> states{2, 5, 10, 20};
  std::size_t elements = 30;
  std::size_t bins = 513;
  std::size_t frames = 100;
  std::size_t iterations = 3;
  std::size_t max_joint_states = 4096;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

int run_bench(const BenchOptions& o) {
  BenchConfig cfg;
  cfg.states = o.states;
  cfg.elements = o.elements;
  cfg.bins = o.bins;
  cfg.frames = o.frames;
  cfg.iterations = o.iterations;
  cfg.seed = o.seed;
  cfg.max_joint_states = o.max_joint_states;
  const auto rows = bench(cfg);
  const fs::path dir(o.out_dir);
  ensure_dir(dir);
  auto out = open_out(dir / "bench.tsv");
  out << "states\telements\tvi_seconds\texact_seconds\tratio\n";
  std::cout << "states\tvi_seconds\texact_seconds\tratio\n";
  for (const auto& r : rows) {
    out << r.states << '\t' << o.elements << '\t' << r.vi_seconds << '\t' << r.exact_seconds
        << '\t' << r.ratio << '\n';
    std::cout << r.states << '\t' << fmt(r.vi_seconds) << '\t' << fmt(r.exact_seconds) << '\t'
              << fmt(r.ratio) << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::size_t states = 3;
  std::size_t elements = 4;
  std::size_t bins = 33;
  std::size_t frames = 200;
  std::size_t quanta = 500;
  std::size_t train_frames = 0;
  bool disjoint = false;
  double mix_db = 0.0;
  double persistence = 0.8;
  double concentration = 1.0;
  double sample_rate = 16000.0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

int run_synth(const SynthOptions& o, const AnalysisOptions& a) {
  SynthConfig cfg;
  cfg.dims = {o.states, o.elements, o.bins};
  cfg.frames = o.frames;
  cfg.quanta = o.quanta;
  cfg.train_frames = o.train_frames;
  cfg.seed = o.seed;
  cfg.disjoint = o.disjoint;
  cfg.mix_db = o.mix_db;
  cfg.persistence = o.persistence;
  cfg.element_concentration = o.concentration;
  cfg.sample_rate = o.sample_rate;
  const auto result = synthesize(cfg);

  const fs::path dir(o.out_dir);
  ensure_dir(dir);
  const auto encoding = a.wav_encoding();
  for (std::size_t s = 0; s < 2; ++s) {
    const std::string k = std::to_string(s + 1);
    save_wav((dir / ("source" + k + ".wav")).string(), result.references[s], encoding);
    save_model((dir / ("model" + k + ".nfm")).string(), result.models[s]);
    auto states = open_out(dir / ("states" + k + ".txt"));
    for (auto d : result.sampled[s].states) states << d << '\n';
    if (!result.training.empty())
      save_wav((dir / ("train" + k + ".wav")).string(), result.training[s], encoding);
  }
  save_wav((dir / "mixture.wav").string(), result.mixture, encoding);
  // Analysis settings under which the mixture spectrogram equals the
  // sampled counts; usable as --config for train and separate.
  {
    const auto& c = result.stft_config;
    auto out = open_out(dir / "analysis.ini");
    out << "window=" << c.window_length << "\n"
        << "hop=" << c.hop_length << "\n"
        << "fft=" << c.fft_length << "\n"
        << "window-kind=rect\n"
        << "gain=" << o.quanta << "\n";
  }
  std::cout << "frames=" << o.frames << " bins=" << o.bins
            << " source2_gain=" << fmt(result.source_gain) << " out_dir=" << o.out_dir << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::vector<std::string> estimates;
  std::vector<std::string> references;
};

int run_eval(const EvalOptions& o) {
  detail::require(o.estimates.size() == o.references.size(),
                  "need as many estimates as references");
  std::vector<TimeSignal> est, ref;
  for (const auto& p : o.estimates) est.push_back(load_wav(p));
  for (const auto& p : o.references) ref.push_back(load_wav(p));
  const auto scored = bss_eval_best_permutation(est, ref);
  SepScores mean;
  std::cout << "estimate\treference\tsdr\tsir\tsar\n";
  for (std::size_t i = 0; i < est.size(); ++i) {
    const auto& s = scored.scores[i];
    std::cout << o.estimates[i] << '\t' << o.references[scored.assignment[i]] << '\t'
              << fmt(s.sdr) << '\t' << fmt(s.sir) << '\t' << fmt(s.sar) << '\n';
    mean.sdr += s.sdr / est.size();
    mean.sir += s.sir / est.size();
    mean.sar += s.sar / est.size();
  }
  std::cout << "mean\t-\t" << fmt(mean.sdr) << '\t' << fmt(mean.sir) << '\t' << fmt(mean.sar)
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source separation with non-negative factorial hidden Markov models"};
  app.set_config("--config", "", "Read key=value options from a file");
  app.fallthrough();
  app.require_subcommand(1);

  AnalysisOptions analysis;
  app.add_option("--window", analysis.window, "STFT window length in samples (0 = 64 ms)");
  app.add_option("--hop", analysis.hop, "STFT hop in samples (0 = window/4, rect: window)");
  app.add_option("--fft", analysis.fft, "FFT length (0 = window length)");
  app.add_option("--window-kind", analysis.window_kind, "hann or rect");
  app.add_option("--gain", analysis.gain, "Scale from STFT magnitude to counts")
      ->check(CLI::PositiveNumber);
  app.add_option("--encoding", analysis.encoding, "WAV output encoding: float32 or pcm16");

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Learn a source model from isolated audio");
  train_cmd->add_option("-i,--input", train_opts.inputs, "Training WAV files")
      ->required();
  train_cmd->add_option("-o,--output", train_opts.output, "Model file to write")->required();
  train_cmd->add_option("--n-dicts", train_opts.states, "Dictionaries (Markov states)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--n-elems", train_opts.elements, "Elements per dictionary")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--max-iters", train_opts.max_iters, "EM iteration cap")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--rel-tol", train_opts.rel_tol, "Relative log-likelihood tolerance")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--seed", train_opts.seed, "Random seed")->required();

  SeparateOptions sep_opts;
  auto* sep_cmd = app.add_subcommand("separate", "Separate a mixture with trained models");
  sep_cmd->add_option("-m,--mixture", sep_opts.mixture, "Mixture WAV")
      ->required();
  sep_cmd->add_option("--model", sep_opts.models, "Source model files (one per source)")
      ->required();
  sep_cmd->add_option("--algo", sep_opts.algo, "vi, exact or plca");
  sep_cmd->add_option("--gamma", sep_opts.gamma, "Dirichlet concentration on active elements");
  sep_cmd->add_option("--max-iters", sep_opts.max_iters, "Iteration cap")
      ->check(CLI::PositiveNumber);
  sep_cmd->add_option("--rel-tol", sep_opts.rel_tol, "Relative convergence tolerance")
      ->check(CLI::NonNegativeNumber);
  sep_cmd->add_option("--seed", sep_opts.seed, "Random seed");
  sep_cmd->add_option("--out-dir", sep_opts.out_dir, "Output directory");
  sep_cmd->add_option("--stem", sep_opts.stem, "Output file prefix (default: mixture name)");
  sep_cmd->add_option("--max-joint-states", sep_opts.max_joint_states,
                      "Largest joint lattice for exact inference");

  BenchOptions bench_opts;
  auto* bench_cmd = app.add_subcommand("bench", "Time exact against variational inference");
  bench_cmd->add_option("--n-dicts", bench_opts.states, "State counts to sweep")
      ->delimiter(',');
  bench_cmd->add_option("--n-elems", bench_opts.elements, "Elements per dictionary")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--bins", bench_opts.bins, "Frequency bins")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--frames", bench_opts.frames, "Frames")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--max-iters", bench_opts.iterations, "Timed iterations per engine")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--max-joint-states", bench_opts.max_joint_states,
                        "Largest joint lattice for exact inference");
  bench_cmd->add_option("--seed", bench_opts.seed, "Random seed")->required();
  bench_cmd->add_option("--out-dir", bench_opts.out_dir, "Output directory");

  SynthOptions synth_opts;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic two-source mixture");
  synth_cmd->add_option("--n-dicts", synth_opts.states, "Dictionaries per source")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--n-elems", synth_opts.elements, "Elements per dictionary")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--bins", synth_opts.bins, "Frequency bins");
  synth_cmd->add_option("--frames", synth_opts.frames, "Frames")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--quanta", synth_opts.quanta, "Sound quanta per frame")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--train-frames", synth_opts.train_frames,
                        "Frames of separate training audio per source (0 = none)");
  synth_cmd->add_flag("--disjoint", synth_opts.disjoint, "Give the sources disjoint bands");
  synth_cmd->add_option("--mix-db", synth_opts.mix_db, "Level of source 1 over source 2 (dB)");
  synth_cmd->add_option("--persistence", synth_opts.persistence, "Self-transition probability")
      ->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--concentration", synth_opts.concentration,
                        "Dirichlet concentration of dictionary elements")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--sample-rate", synth_opts.sample_rate, "Sample rate in Hz")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_opts.seed, "Random seed")->required();
  synth_cmd->add_option("--out-dir", synth_opts.out_dir, "Output directory");

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "Score estimates against references");
  eval_cmd->add_option("-e,--estimate", eval_opts.estimates, "Estimated source WAVs")
      ->required();
  eval_cmd->add_option("-r,--reference", eval_opts.references, "Reference source WAVs")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*train_cmd) return run_train(train_opts, analysis);
    if (*sep_cmd) return run_separate(sep_opts, analysis);
    if (*bench_cmd) return run_bench(bench_opts);
    if (*synth_cmd) return run_synth(synth_opts, analysis);
    if (*eval_cmd) return run_eval(eval_opts);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
