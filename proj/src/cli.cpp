// Copyright 2026 The edpc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "edpc/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "edpc/container.hpp"
#include "edpc/ifr.hpp"

namespace edpc::cli {
namespace {

namespace fs = std::filesystem;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return data;
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << line << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Model flags; anything set explicitly overrides the selected profile.
struct ModelFlags {
  std::string profile = "full";
  std::optional<std::uint32_t> context, embed_dim, hidden_local, hidden_global, lte_ratio, branches, lanes;
  std::optional<std::size_t> segments;
  std::optional<double> lr;
  std::uint64_t seed = 0;

  void attach(CLI::App* app, bool with_segments = true) {
    app->add_option("--profile", profile, "Hyperparameter profile: full, desk or tiny")
        ->check(CLI::IsMember({"full", "desk", "tiny"}));
    app->add_option("--context", context, "History length t");
    app->add_option("--embed-dim", embed_dim, "Byte embedding width");
    app->add_option("--hidden-local", hidden_local, "Local block hidden width");
    app->add_option("--hidden-global", hidden_global, "Global block hidden width");
    app->add_option("--lte-ratio", lte_ratio, "Latent compression ratio r");
    app->add_option("--branches", branches, "Parallel branches per block");
    app->add_option("--lanes", lanes, "Parallel lanes (batch rows)");
    if (with_segments) app->add_option("--segments", segments, "Independent coder segments");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--seed", seed, "Initialization seed");
  }

  Profile resolve() const {
    Profile p = profile_by_name(profile);
    ModelConfig& m = p.model;
    if (context) m.context_len = *context;
    if (embed_dim) m.embed_dim = *embed_dim;
    if (hidden_local) m.hidden_local = *hidden_local;
    if (hidden_global) m.hidden_global = *hidden_global;
    if (lte_ratio) m.lte_ratio = *lte_ratio;
    if (branches) m.branches = *branches;
    if (lanes) m.lanes = *lanes;
    if (segments) p.segments = *segments;
    if (lr) m.lr = *lr;
    m.seed = seed;
    return p;
  }
};

struct RunFlags {
  std::optional<std::size_t> threads;
  bool serial = false;
  std::size_t queue_capacity = 4;
  std::string metrics_out;
  int verbosity = 0;

  void attach(CLI::App* app) {
    app->add_option("--threads", threads, "Coding worker threads (default: $EDPC_THREADS, else all cores)");
    app->add_flag("--serial", serial, "Disable pipelining; run everything on one thread");
    app->add_option("--queue-capacity", queue_capacity, "Pipeline queue capacity")->check(CLI::PositiveNumber);
    app->add_option("--metrics-out", metrics_out, "Append JSON metrics lines to this file");
    app->add_flag("-v,--verbose", verbosity, "More output");
  }

  PipelineOptions options(std::size_t segments) const {
    PipelineOptions o;
    o.segments = segments;
    o.serial = serial;
    o.queue_capacity = queue_capacity;
    if (threads) {
      o.threads = *threads;
    } else if (const char* env = std::getenv("EDPC_THREADS")) {
      o.threads = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
    }
    return o;
  }
};

std::string human_metrics(const Metrics& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << m.file << ": " << m.original_bytes << " -> " << m.compressed_bytes
     << " bytes, ratio " << m.ratio << ", " << std::setprecision(2) << m.wall_seconds << " s ("
     << std::setprecision(1) << m.throughput_kb_per_min << " KB/min), params " << m.param_count
     << ", peak queue " << m.peak_queue_depth;
  return os.str();
}

int cmd_compress(const std::string& input, const std::string& output, const ModelFlags& mf, const RunFlags& rf,
                 std::ostream& out) {
  const Profile p = mf.resolve();
  p.model.validate();
  SegmentPlan::make(p.model.lanes, p.segments);
  const auto data = read_file(input);
  PipelineStats stats;
  const Container c = compress(data, p.model, rf.options(p.segments), &stats);
  const auto bytes = serialize(c);
  write_file(output, bytes);
  const Metrics m = make_metrics(input, data.size(), bytes.size(), stats, param_counts(p.model).total);
  out << human_metrics(m) << '\n';
  if (!rf.metrics_out.empty()) append_line(rf.metrics_out, to_json_line(m));
  return kExitOk;
}

int cmd_decompress(const std::string& input, const std::string& output, const RunFlags& rf, std::ostream& out) {
  const auto bytes = read_file(input);
  const Container c = parse_container(bytes);
  PipelineStats stats;
  const auto data = decompress(c, rf.options(c.header.segment_count), &stats);
  write_file(output, data);
  if (rf.verbosity > 0) {
    out << input << ": " << bytes.size() << " -> " << data.size() << " bytes in " << stats.wall_seconds << " s\n";
  }
  if (!rf.metrics_out.empty()) {
    Metrics m = make_metrics(input, data.size(), bytes.size(), stats, param_counts(c.header.config).total);
    append_line(rf.metrics_out, to_json_line(m));
  }
  return kExitOk;
}

int cmd_verify(const std::string& input, const std::string& container, const RunFlags& rf, std::ostream& out,
               std::ostream& err) {
  const auto original = read_file(input);
  const auto bytes = read_file(container);
  const Container c = parse_container(bytes);
  const auto decoded = decompress(c, rf.options(c.header.segment_count));
  const auto [a, b] = std::mismatch(original.begin(), original.end(), decoded.begin(), decoded.end());
  if (a == original.end() && b == decoded.end()) {
    out << "verify: OK (" << original.size() << " bytes)\n";
    return kExitOk;
  }
  err << "verify: MISMATCH at offset " << (a - original.begin()) << " (original " << original.size()
      << " bytes, decoded " << decoded.size() << " bytes)\n";
  return kExitMismatch;
}

struct IfrFlags {
  std::string probe;
  std::string output;
  std::size_t seeds = 5;
  ifr::BranchProbe probe_cfg;
  bool self_test_only = false;
};

int cmd_ifr(const IfrFlags& f, const ModelFlags& mf, std::ostream& out, std::ostream& err) {
  const ifr::GaussianCheck check = ifr::gaussian_self_test(mf.seed);
  out << std::fixed << std::setprecision(4) << "estimator self-test: rho=0.9 estimate " << check.estimate_correlated
      << " (analytic " << check.analytic << "), independent estimate " << check.estimate_independent << " -> "
      << (check.passed ? "PASS" : "FAIL") << '\n';
  out.unsetf(std::ios::floatfield);
  if (!check.passed) {
    err << "ifr: estimator self-test failed; refusing to run the branch study\n";
    return kExitMismatch;
  }
  if (f.self_test_only) return kExitOk;
  if (f.probe.empty()) throw std::invalid_argument("ifr: --input probe file is required");

  const Profile p = mf.resolve();
  const auto data = read_file(f.probe);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < f.seeds; ++i) seeds.push_back(mf.seed + i);
  const ifr::StudyReport report = ifr::run_study(p.model, data, seeds, f.probe_cfg);

  std::ostringstream csv;
  ifr::write_csv(report, csv);
  if (f.output.empty()) {
    out << csv.str();
  } else {
    const std::string s = csv.str();
    write_file(f.output, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  out << std::fixed << std::setprecision(4) << "median MI (nats): k=1 " << report.median_mi[0] << ", k=2 "
      << report.median_mi[1] << ", k=3 " << report.median_mi[2] << '\n';
  out.unsetf(std::ios::floatfield);
  out << "trend 'MI decreases as branches increase': " << (report.trend_holds ? "holds" : "does not hold")
      << " (k=1 -> k=2: " << (report.trend_1_2_holds ? "holds" : "does not hold") << ")\n";
  return kExitOk;
}

struct BenchFlags {
  std::string corpus;
  bool compare_serial = false;
  bool verify = false;
};

int cmd_bench(const BenchFlags& bf, const ModelFlags& mf, const RunFlags& rf, std::ostream& out) {
  const Profile p = mf.resolve();
  p.model.validate();
  SegmentPlan::make(p.model.lanes, p.segments);
  if (!fs::is_directory(bf.corpus)) throw IoError("corpus directory '" + bf.corpus + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(bf.corpus)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  const ParamCounts with = param_counts(p.model, true);
  const ParamCounts without = param_counts(p.model, false);
  const std::size_t fdm = LteBlock::fdm_param_count(p.model.feature_dim(), p.model.lte_ratio, p.model.lanes);
  const std::size_t fdm_full = LteBlock::full_fdm_param_count(p.model.feature_dim(), p.model.lanes);
  const double fdm_reduction = 1.0 - static_cast<double>(fdm) / static_cast<double>(fdm_full);

  out << std::left << std::setw(28) << "file" << std::right << std::setw(12) << "bytes" << std::setw(12)
      << "compressed" << std::setw(9) << "ratio" << std::setw(10) << "order0" << std::setw(10) << "seconds"
      << std::setw(12) << "KB/min" << std::setw(10) << "serial/s" << '\n';
  for (const auto& path : files) {
    const auto data = read_file(path.string());
    PipelineStats stats;
    const Container c = compress(data, p.model, rf.options(p.segments), &stats);
    const auto bytes = serialize(c);
    Metrics m = make_metrics(path.filename().string(), data.size(), bytes.size(), stats, with.total);
    const std::size_t order0 = order0_bound_bytes(data);
    const double order0_ratio = order0 ? static_cast<double>(data.size()) / static_cast<double>(order0) : 0.0;

    nlohmann::json j = nlohmann::json::parse(to_json_line(m));
    j["order0_bytes"] = order0;
    j["order0_ratio"] = order0_ratio;
    double serial_seconds = 0.0;
    if (bf.compare_serial) {
      PipelineOptions so = rf.options(p.segments);
      so.serial = true;
      PipelineStats sstats;
      const auto serial_bytes = serialize(compress(data, p.model, so, &sstats));
      serial_seconds = sstats.wall_seconds;
      j["serial_seconds"] = serial_seconds;
      j["pipeline_speedup"] = stats.wall_seconds > 0 ? serial_seconds / stats.wall_seconds : 0.0;
      j["serial_identical"] = serial_bytes == bytes;
    }
    if (bf.verify) j["verified"] = decompress(c, rf.options(p.segments)) == data;

    out << std::left << std::setw(28) << m.file << std::right << std::setw(12) << m.original_bytes
        << std::setw(12) << m.compressed_bytes << std::fixed << std::setprecision(3) << std::setw(9) << m.ratio
        << std::setw(10) << order0_ratio << std::setprecision(2) << std::setw(10) << m.wall_seconds
        << std::setprecision(1) << std::setw(12) << m.throughput_kb_per_min << std::setprecision(2)
        << std::setw(10) << serial_seconds << '\n';
    out.unsetf(std::ios::floatfield);
    if (!rf.metrics_out.empty()) append_line(rf.metrics_out, j.dump());
  }

  auto counts_json = [](const ParamCounts& c) {
    return nlohmann::json{{"embedding", c.embedding}, {"local", c.local}, {"lte", c.lte},
                          {"global", c.global},       {"head", c.head},   {"total", c.total}};
  };
  nlohmann::json params{{"param_counts_with_lte", counts_json(with)},
                        {"param_counts_without_lte", counts_json(without)},
                        {"fdm_params", fdm},
                        {"fdm_full_params", fdm_full},
                        {"fdm_reduction", fdm_reduction}};
  out << "params with LTE: " << with.total << ", without LTE (dense FxF): " << without.total << '\n';
  out << "FDM params: " << fdm << " vs dense " << fdm_full << " (" << std::fixed << std::setprecision(2)
      << 100.0 * fdm_reduction << "% fewer)\n";
  out.unsetf(std::ios::floatfield);
  if (!rf.metrics_out.empty()) append_line(rf.metrics_out, params.dump());
  return kExitOk;
}

}  // namespace

Profile profile_by_name(const std::string& name) {
  Profile p;
  if (name == "full") return p;
  if (name == "desk") {
    p.model.embed_dim = 8;
    p.model.hidden_local = 256;
    p.model.hidden_global = 512;
    p.model.lanes = 16;
    p.segments = 4;
    return p;
  }
  if (name == "tiny") {
    p.model.context_len = 8;
    p.model.embed_dim = 4;
    p.model.hidden_local = 32;
    p.model.hidden_global = 64;
    p.model.lanes = 8;
    p.segments = 2;
    return p;
  }
  throw std::invalid_argument("unknown profile '" + name + "'");
}

double order0_entropy_bits(std::span<const std::uint8_t> data) {
  std::array<std::size_t, 256> counts{};
  for (std::uint8_t b : data) ++counts[b];
  const double n = static_cast<double>(data.size());
  double bits = 0.0;
  for (std::size_t c : counts) {
    if (c) bits -= static_cast<double>(c) * std::log2(static_cast<double>(c) / n);
  }
  return bits;
}

std::size_t order0_bound_bytes(std::span<const std::uint8_t> data) {
  return static_cast<std::size_t>(std::ceil(order0_entropy_bits(data) / 8.0));
}

Metrics make_metrics(const std::string& file, std::size_t original, std::size_t compressed,
                     const PipelineStats& stats, std::size_t params) {
  Metrics m;
  m.file = file;
  m.original_bytes = original;
  m.compressed_bytes = compressed;
  m.ratio = compressed ? static_cast<double>(original) / static_cast<double>(compressed) : 0.0;
  m.wall_seconds = stats.wall_seconds;
  m.model_seconds = stats.model_seconds;
  m.coding_seconds = stats.coding_seconds;
  m.throughput_kb_per_min =
      stats.wall_seconds > 0 ? (static_cast<double>(original) / 1024.0) / (stats.wall_seconds / 60.0) : 0.0;
  m.param_count = params;
  m.peak_queue_depth = stats.peak_queue_depth;
  m.mean_loss_bits = stats.mean_loss / std::log(2.0);
  return m;
}

std::string to_json_line(const Metrics& m) {
  nlohmann::json j{{"file", m.file},
                   {"original_bytes", m.original_bytes},
                   {"compressed_bytes", m.compressed_bytes},
                   {"ratio", m.ratio},
                   {"wall_seconds", m.wall_seconds},
                   {"model_seconds", m.model_seconds},
                   {"coding_seconds", m.coding_seconds},
                   {"throughput_kb_per_min", m.throughput_kb_per_min},
                   {"param_count", m.param_count},
                   {"peak_queue_depth", m.peak_queue_depth},
                   {"mean_loss_bits", m.mean_loss_bits}};
  return j.dump();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"edpc: lossless compressor with an online-trained neural byte model"};
  app.require_subcommand(1);

  std::string input, output, container;
  ModelFlags mf;
  RunFlags rf;

  auto* compress_cmd = app.add_subcommand("compress", "Compress a file");
  compress_cmd->add_option("-i,--input", input, "Input file")->required();
  compress_cmd->add_option("-o,--output", output, "Output container")->required();
  mf.attach(compress_cmd);
  rf.attach(compress_cmd);

  auto* decompress_cmd = app.add_subcommand("decompress", "Decompress a container");
  decompress_cmd->add_option("-i,--input", input, "Input container")->required();
  decompress_cmd->add_option("-o,--output", output, "Output file")->required();
  rf.attach(decompress_cmd);

  auto* verify_cmd = app.add_subcommand("verify", "Check that a container decodes to a file");
  verify_cmd->add_option("-i,--input", input, "Original file")->required();
  verify_cmd->add_option("-c,--container", container, "Container to check")->required();
  rf.attach(verify_cmd);

  IfrFlags ifr_flags;
  auto* ifr_cmd = app.add_subcommand("ifr", "Branch-count mutual-information study");
  ifr_cmd->alias("ifr-study");
  ifr_cmd->add_option("-i,--input", ifr_flags.probe, "Probe data file");
  ifr_cmd->add_option("-o,--output", ifr_flags.output, "CSV report path (default: stdout)");
  ifr_cmd->add_option("--seeds", ifr_flags.seeds, "Number of seeds, starting at --seed");
  ifr_cmd->add_option("--samples", ifr_flags.probe_cfg.samples, "Activation rows per estimate");
  ifr_cmd->add_option("--train-steps", ifr_flags.probe_cfg.train_steps, "Online steps before capture");
  ifr_cmd->add_option("--neighbors", ifr_flags.probe_cfg.neighbors, "KSG neighbour count");
  ifr_cmd->add_option("--dims", ifr_flags.probe_cfg.dims, "Leading activation coordinates used");
  ifr_cmd->add_flag("--self-test-only", ifr_flags.self_test_only, "Only run the Gaussian estimator check");
  mf.attach(ifr_cmd, false);

  BenchFlags bf;
  auto* bench_cmd = app.add_subcommand("bench", "Compress every file of a corpus and report metrics");
  bench_cmd->add_option("-i,--corpus", bf.corpus, "Corpus directory")->required();
  bench_cmd->add_flag("--compare-serial", bf.compare_serial, "Also time a --serial run per file");
  bench_cmd->add_flag("--verify", bf.verify, "Also decompress and compare");
  mf.attach(bench_cmd);
  rf.attach(bench_cmd);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*compress_cmd) return cmd_compress(input, output, mf, rf, out);
    if (*decompress_cmd) return cmd_decompress(input, output, rf, out);
    if (*verify_cmd) return cmd_verify(input, container, rf, out, err);
    if (*ifr_cmd) return cmd_ifr(ifr_flags, mf, out, err);
    if (*bench_cmd) return cmd_bench(bf, mf, rf, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ContainerError& e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == ContainerError::Kind::kIo ? kExitIo : kExitCorrupt;
  } catch (const DecodeError& e) {
    err << "error: corrupt container: " << e.what() << '\n';
    return kExitCorrupt;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace edpc::cli
