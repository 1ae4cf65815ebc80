// asn: command-line driver for the toy codec, datasets, single-model and
// adaptive-switching training, evaluation and BD-rate.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "asn/codec.hpp"
#include "asn/dataset.hpp"
#include "asn/ensemble.hpp"
#include "asn/error.hpp"
#include "asn/flags.hpp"
#include "asn/mask.hpp"
#include "asn/metrics.hpp"
#include "asn/models.hpp"
#include "asn/parallel.hpp"
#include "asn/toy_corpus.hpp"

namespace fs = std::filesystem;
using namespace asn;

namespace {

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  fs::path out;
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  if (with_out) app->add_option("--out,-o", c.out, "Output directory")->required();
}

// Output directory plus the fully resolved options of the command that made it,
// in a form `asn --config <file> <command>` reads back.
void prepare_out(const CLI::App* app, const Common& c) {
  set_num_threads(c.threads);
  fs::create_directories(c.out);
  std::ofstream cfg(c.out / "config.ini");
  cfg << "[" << app->get_name() << "]\n" << app->config_to_str(true, false);
  if (!cfg) throw FormatError("cannot write " + (c.out / "config.ini").string());
}

struct SequenceFiles {
  std::string name;
  std::vector<fs::path> frames;
};

// A corpus directory holds one subdirectory of PGM frames per sequence; a
// directory of PGM files is a single sequence.
std::vector<SequenceFiles> scan_corpus(const fs::path& dir) {
  std::vector<SequenceFiles> out;
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& s : subdirs) {
    auto frames = list_pgm(s);
    if (!frames.empty()) out.push_back({s.filename().string(), std::move(frames)});
  }
  if (out.empty()) {
    auto frames = list_pgm(dir);
    if (!frames.empty()) out.push_back({dir.filename().string(), std::move(frames)});
  }
  if (out.empty()) throw PreconditionError(dir.string() + ": no PGM frames found");
  return out;
}

std::string stem(const fs::path& p) { return p.stem().string(); }

struct RateRow {
  std::string sequence, frame;
  int qp = 0;
  double total_bits = 0.0;
  double psnr = 0.0;
};

void write_rate_log(const fs::path& path, const std::vector<RateRow>& rows) {
  std::ofstream out(path);
  out << "sequence\tframe\tqp\ttotal_bits\tpsnr\n" << std::fixed << std::setprecision(6);
  for (const auto& r : rows)
    out << r.sequence << '\t' << r.frame << '\t' << r.qp << '\t' << r.total_bits << '\t' << r.psnr << '\n';
  if (!out) throw FormatError("cannot write " + path.string());
}

std::vector<RateRow> read_rate_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("sequence\tframe\tqp\ttotal_bits\tpsnr", 0) != 0) throw FormatError(path.string() + ": not a rate log");
  std::vector<RateRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    RateRow r;
    std::string qp, bits, psnr;
    if (!std::getline(ss, r.sequence, '\t') || !std::getline(ss, r.frame, '\t') || !std::getline(ss, qp, '\t') ||
        !std::getline(ss, bits, '\t') || !std::getline(ss, psnr))
      throw FormatError(path.string() + ": bad row '" + line + "'");
    try {
      r.qp = std::stoi(qp);
      r.total_bits = std::stod(bits);
      r.psnr = std::stod(psnr);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad number in '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

// One RD point per QP: summed bits, mean frame PSNR.
metrics::RdCurve rd_curve(const std::vector<fs::path>& logs) {
  std::map<int, std::pair<double, std::vector<double>>> by_qp;
  for (const auto& p : logs)
    for (const auto& r : read_rate_log(p)) {
      by_qp[r.qp].first += r.total_bits;
      by_qp[r.qp].second.push_back(r.psnr);
    }
  metrics::RdCurve c;
  // Higher QP, lower rate: walk QPs downwards so rates increase.
  for (auto it = by_qp.rbegin(); it != by_qp.rend(); ++it) {
    double sum = 0.0;
    for (double v : it->second.second) sum += v;
    c.points.push_back({it->second.first, sum / static_cast<double>(it->second.second.size())});
  }
  return c;
}

nn::OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return nn::OptimizerKind::adam;
  if (s == "sgd") return nn::OptimizerKind::sgd;
  throw PreconditionError("unknown optimizer '" + s + "' (adam, sgd)");
}

struct TrainOpts {
  int epochs = 40;
  int decay_epoch = 20;
  double lr = 1e-4;
  int batch = 32;
  std::string optimizer = "adam";

  nn::TrainConfig config(std::uint64_t seed) const {
    nn::TrainConfig t;
    t.end_epoch = epochs;
    t.lr_decay_epoch = decay_epoch;
    t.lr = lr;
    t.batch_size = batch;
    t.seed = seed;
    t.optimizer = parse_optimizer(optimizer);
    t.validate();
    return t;
  }
};

void add_train_opts(CLI::App* app, TrainOpts& t, const std::string& prefix = "") {
  app->add_option("--" + prefix + "epochs", t.epochs, "Training epochs")->capture_default_str();
  app->add_option("--" + prefix + "decay-epoch", t.decay_epoch, "Epoch from which lr is divided by 10")
      ->capture_default_str();
  app->add_option("--" + prefix + "lr", t.lr, "Learning rate")->capture_default_str();
  app->add_option("--" + prefix + "batch", t.batch, "Mini-batch size")->capture_default_str();
  app->add_option("--" + prefix + "optimizer", t.optimizer, "adam or sgd")->capture_default_str();
}

models::ModelConfig model_config(const std::string& name, int blocks) {
  models::ModelConfig c = models::ModelConfig::from_name(name);
  c.residual_blocks = blocks;
  c.validate();
  return c;
}

double mean_delta(const std::vector<FramePlane>& outs, const std::vector<dataset::PatchPair>& pairs) {
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    sum += metrics::psnr(outs[i], pairs[i].original) - metrics::psnr(pairs[i].decoded, pairs[i].original);
  return pairs.empty() ? 0.0 : sum / static_cast<double>(pairs.size());
}

void write_curve(const fs::path& path, const std::vector<double>& values, const std::string& header) {
  std::ofstream out(path);
  out << "# " << header << '\n' << std::fixed << std::setprecision(8);
  for (std::size_t i = 0; i < values.size(); ++i) out << i << ' ' << values[i] << '\n';
  if (!out) throw FormatError("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partition-aware CNN post-processing with adaptive switching, on a toy block codec"};
  app.set_config("--config", "", "INI file with a [command] section; command-line flags take precedence");
  app.require_subcommand(1);

  // toy
  Common toy_c;
  int toy_sequences = 8, toy_frames = 1, toy_width = 256, toy_height = 256;
  auto* toy = app.add_subcommand("toy", "Write a procedural PGM corpus (one directory per sequence)");
  add_common(toy, toy_c);
  toy->add_option("--sequences", toy_sequences)->check(CLI::PositiveNumber)->capture_default_str();
  toy->add_option("--frames", toy_frames)->check(CLI::PositiveNumber)->capture_default_str();
  toy->add_option("--width", toy_width)->check(CLI::PositiveNumber)->capture_default_str();
  toy->add_option("--height", toy_height)->check(CLI::PositiveNumber)->capture_default_str();

  // codec
  Common codec_c;
  fs::path codec_in;
  int codec_qp = 37;
  double codec_threshold = codec::kDefaultSplitThreshold;
  auto* codec_cmd = app.add_subcommand("codec", "Code a corpus: decoded PGMs, partitions and a rate log");
  add_common(codec_cmd, codec_c);
  codec_cmd->add_option("--input,-i", codec_in, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  codec_cmd->add_option("--qp", codec_qp)->check(CLI::Range(0, 51))->capture_default_str();
  codec_cmd->add_option("--threshold", codec_threshold, "Quadtree split variance threshold")->capture_default_str();

  // dataset
  Common ds_c;
  fs::path ds_in;
  dataset::BuildOptions ds_opt;
  auto* ds_cmd = app.add_subcommand("dataset", "Code a corpus and cut it into 64x64 training patches");
  add_common(ds_cmd, ds_c);
  ds_cmd->add_option("--input,-i", ds_in, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  ds_cmd->add_option("--qp", ds_opt.qp)->check(CLI::Range(0, 51))->capture_default_str();
  ds_cmd->add_option("--threshold", ds_opt.split_threshold)->capture_default_str();
  ds_cmd->add_option("--frames-per-sequence", ds_opt.frames_per_sequence, "0 = all")->capture_default_str();
  ds_cmd->add_option("--val-fraction", ds_opt.val_fraction)->capture_default_str();

  // train-single
  Common ts_c;
  fs::path ts_data, ts_init;
  std::string ts_model = "2-in+MM+AF";
  int ts_blocks = 4;
  TrainOpts ts_train;
  auto* ts_cmd = app.add_subcommand("train-single", "Train one post-processing CNN");
  add_common(ts_cmd, ts_c);
  ts_cmd->add_option("--data,-d", ts_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ts_cmd->add_option("--model,-m", ts_model, "[shallow-]1-in or [shallow-]2-in+{MM,BM}+{CLF,AF,CEF}")
      ->capture_default_str();
  ts_cmd->add_option("--residual-blocks", ts_blocks)->check(CLI::PositiveNumber)->capture_default_str();
  ts_cmd->add_option("--init-from", ts_init, "Fine-tune from this model file")->check(CLI::ExistingFile);
  add_train_opts(ts_cmd, ts_train);

  // train-asn
  Common ta_c;
  fs::path ta_data, ta_global;
  std::string ta_model = "2-in+MM+AF", ta_init = "cluster";
  int ta_blocks = 4;
  ensemble::IterateOptions ta_iter;
  TrainOpts ta_pre, ta_ft;
  ta_ft.epochs = 5;
  ta_ft.decay_epoch = 4;
  auto* ta_cmd = app.add_subcommand("train-asn", "Pre-train and iteratively refine an adaptive-switching bank");
  add_common(ta_cmd, ta_c);
  ta_cmd->add_option("--data,-d", ta_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ta_cmd->add_option("--model,-m", ta_model)->capture_default_str();
  ta_cmd->add_option("--residual-blocks", ta_blocks)->check(CLI::PositiveNumber)->capture_default_str();
  ta_cmd->add_option("--init", ta_init, "random, psnr or cluster")->capture_default_str();
  ta_cmd->add_option("--max-iters", ta_iter.max_iters)->check(CLI::NonNegativeNumber)->capture_default_str();
  ta_cmd->add_option("--stall-eps", ta_iter.stall_eps, "Stop when the gain moves less (dB)")->capture_default_str();
  ta_cmd->add_option("--global", ta_global, "Use this trained model as the global CNN")->check(CLI::ExistingFile);
  add_train_opts(ta_cmd, ta_pre);
  add_train_opts(ta_cmd, ta_ft, "ft-");

  // eval
  Common ev_c;
  fs::path ev_orig, ev_codec, ev_bank, ev_model;
  int ev_qp = 37;
  auto* ev_cmd = app.add_subcommand("eval", "Post-process coded frames with a bank (flags) or a single model");
  add_common(ev_cmd, ev_c);
  ev_cmd->add_option("--original", ev_orig, "Corpus of original frames")->required()->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--coded", ev_codec, "Output directory of 'codec'")->required()->check(CLI::ExistingDirectory);
  auto* bank_opt = ev_cmd->add_option("--bank", ev_bank, "Bank directory")->check(CLI::ExistingDirectory);
  auto* model_opt = ev_cmd->add_option("--model-file", ev_model, "Single model file")->check(CLI::ExistingFile);
  bank_opt->excludes(model_opt);
  ev_cmd->add_option("--qp", ev_qp, "QP recorded in the logs")->capture_default_str();

  // bdrate
  Common bd_c;
  std::vector<fs::path> bd_anchor, bd_test;
  fs::path bd_out;
  auto* bd_cmd = app.add_subcommand("bdrate", "BD-rate between two sets of rate logs (4 QPs each)");
  add_common(bd_cmd, bd_c, false);
  bd_cmd->add_option("--anchor", bd_anchor, "Rate logs of the anchor")->required()->check(CLI::ExistingFile);
  bd_cmd->add_option("--test", bd_test, "Rate logs of the tested method")->required()->check(CLI::ExistingFile);
  bd_cmd->add_option("--out,-o", bd_out, "Also write the result into this directory");

  // mask-dump
  Common md_c;
  fs::path md_decoded, md_partition;
  std::string md_kind = "mean";
  auto* md_cmd = app.add_subcommand("mask-dump", "Write the MM or BM mask of a coded frame as PGM");
  add_common(md_cmd, md_c);
  md_cmd->add_option("--decoded", md_decoded)->required()->check(CLI::ExistingFile);
  md_cmd->add_option("--partition", md_partition)->required()->check(CLI::ExistingFile);
  md_cmd->add_option("--kind", md_kind, "mean or boundary")->check(CLI::IsMember({"mean", "boundary"}))
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) {
      prepare_out(toy, toy_c);
      for (int s = 0; s < toy_sequences; ++s) {
        std::ostringstream name;
        name << "toy" << std::setw(3) << std::setfill('0') << s;
        const fs::path dir = toy_c.out / name.str();
        fs::create_directories(dir);
        const auto frames =
            dataset::toy_sequence(toy_width, toy_height, toy_frames, toy_c.seed * 1000003ull + static_cast<std::uint64_t>(s));
        for (std::size_t f = 0; f < frames.size(); ++f) {
          std::ostringstream fname;
          fname << "frame" << std::setw(3) << std::setfill('0') << f << ".pgm";
          write_pgm(dir / fname.str(), frames[f]);
        }
      }
    } else if (*codec_cmd) {
      const auto corpus = scan_corpus(codec_in);
      prepare_out(codec_cmd, codec_c);
      const auto qp = codec::QpConfig::from_qp(codec_qp);
      std::vector<RateRow> rows;
      for (const auto& seq : corpus) {
        fs::create_directories(codec_c.out / "decoded" / seq.name);
        fs::create_directories(codec_c.out / "partition" / seq.name);
        for (const auto& path : seq.frames) {
          const FramePlane original = dataset::crop_to_multiple(read_pgm(path));
          const auto coded = codec::encode_decode(original, qp, codec_threshold);
          write_pgm(codec_c.out / "decoded" / seq.name / (stem(path) + ".pgm"), coded.decoded);
          codec::write_partition(codec_c.out / "partition" / seq.name / (stem(path) + ".part"), coded.partition);
          rows.push_back({seq.name, stem(path), codec_qp, coded.rate.total_bits(), metrics::psnr(coded.decoded, original)});
        }
      }
      write_rate_log(codec_c.out / "rate.tsv", rows);
      std::cout << "coded " << rows.size() << " frames at qp " << codec_qp << " into " << codec_c.out << '\n';
    } else if (*ds_cmd) {
      const auto corpus = scan_corpus(ds_in);
      prepare_out(ds_cmd, ds_c);
      std::vector<dataset::Sequence> seqs;
      for (const auto& s : corpus) {
        dataset::Sequence seq{s.name, {}};
        for (const auto& p : s.frames) seq.frames.push_back(read_pgm(p));
        seqs.push_back(std::move(seq));
      }
      ds_opt.seed = ds_c.seed;
      const auto ds = dataset::build_dataset(seqs, ds_opt);
      dataset::save_dataset(ds_c.out, ds);
      std::cout << ds.patches.size() << " patches (" << ds.subset(dataset::Split::validation).size()
                << " validation) from " << seqs.size() << " sequences\n";
    } else if (*ts_cmd) {
      const auto config = model_config(ts_model, ts_blocks);
      const auto tc = ts_train.config(ts_c.seed);
      const auto ds = dataset::load_dataset(ts_data);
      prepare_out(ts_cmd, ts_c);
      const auto train = ds.subset(dataset::Split::train);
      const auto val = ds.subset(dataset::Split::validation);
      std::vector<double> curve;
      models::Model model;
      if (!ts_init.empty()) {
        model = models::fine_tune_from(models::load_model(ts_init).weights(), config, train, tc, &curve);
      } else {
        model = models::build_model(config, ts_c.seed);
        curve = models::train(model, train, tc);
      }
      models::save_model(ts_c.out / "model.asnm", model);
      write_curve(ts_c.out / "loss.dat", curve, "epoch mean_mse");
      const double gain = mean_delta(models::postprocess_pairs(model, val), val);
      std::ofstream(ts_c.out / "validation.txt") << std::fixed << std::setprecision(6) << "model " << config.name()
                                                 << "\nvalidation_patches " << val.size()
                                                 << "\nmean_delta_psnr " << gain << '\n';
      std::cout << config.name() << ": validation mean dPSNR " << gain << " dB over " << val.size() << " patches\n";
    } else if (*ta_cmd) {
      const auto config = model_config(ta_model, ta_blocks);
      const auto init = ensemble::parse_init_method(ta_init);
      const auto pre = ta_pre.config(ta_c.seed);
      ta_iter.fine_tune = ta_ft.config(ta_c.seed + 1);
      const auto ds = dataset::load_dataset(ta_data);
      prepare_out(ta_cmd, ta_c);
      const auto train = ds.subset(dataset::Split::train);
      const auto val = ds.subset(dataset::Split::validation);
      models::Model global;
      if (!ta_global.empty()) global = models::load_model(ta_global);
      auto bank = ensemble::pretrain_bank(train, config, pre, ta_c.seed, ta_global.empty() ? nullptr : &global);
      auto labels = ensemble::init_labels(init, train, ta_c.seed);
      const auto result = ensemble::iterate_train(bank, train, val, std::move(labels), ta_iter);
      ensemble::save_bank(ta_c.out / "bank", bank);
      metrics::write_gain_curve(ta_c.out / "gain_curve.dat", result.gain_curve, ensemble::init_method_name(init));
      std::ofstream lab(ta_c.out / "labels.txt");
      for (int l : result.labels) lab << l << '\n';
      std::cout << "iterations " << bank.iteration << ", final validation gain " << result.gain_curve.back()
                << " dB (global alone " << result.global_gain << " dB)\n";
    } else if (*ev_cmd) {
      if (ev_bank.empty() == ev_model.empty()) throw PreconditionError("eval: give exactly one of --bank, --model-file");
      const auto corpus = scan_corpus(ev_orig);
      ensemble::AsnBank bank;
      models::Model single;
      if (!ev_bank.empty())
        bank = ensemble::load_bank(ev_bank);
      else
        single = models::load_model(ev_model);
      for (const auto& seq : corpus)
        for (const auto& p : seq.frames) {
          if (!fs::exists(ev_codec / "decoded" / seq.name / (stem(p) + ".pgm")) ||
              !fs::exists(ev_codec / "partition" / seq.name / (stem(p) + ".part")))
            throw PreconditionError("eval: " + (ev_codec / "decoded" / seq.name / stem(p)).string() +
                                    " has no coded frame or partition");
        }
      prepare_out(ev_cmd, ev_c);
      std::vector<metrics::ReportRow> report;
      std::vector<RateRow> rates;
      const auto baseline_rates = read_rate_log(ev_codec / "rate.tsv");
      for (const auto& seq : corpus) {
        fs::create_directories(ev_c.out / "post" / seq.name);
        if (!ev_bank.empty()) fs::create_directories(ev_c.out / "flags" / seq.name);
        double base_sum = 0.0, method_sum = 0.0;
        for (const auto& p : seq.frames) {
          const FramePlane original = dataset::crop_to_multiple(read_pgm(p));
          const FramePlane decoded = read_pgm(ev_codec / "decoded" / seq.name / (stem(p) + ".pgm"));
          const auto partition = codec::read_partition(ev_codec / "partition" / seq.name / (stem(p) + ".part"));
          FramePlane post;
          double extra_bits = 0.0;
          if (!ev_bank.empty()) {
            const auto enc = ensemble::encode_select_flags(bank, decoded, original, partition);
            const fs::path flag_path = ev_c.out / "flags" / seq.name / (stem(p) + ".asnf");
            ensemble::write_flags(flag_path, enc.flags);
            post = ensemble::decode_dispatch(bank, decoded, partition, ensemble::read_flags(flag_path));
            if (!(post == enc.output))
              throw NumericError("eval: decoder output differs from the encoder's choice for " + p.string());
            extra_bits = ensemble::kFlagBits * static_cast<double>(enc.flags.patch_count());
          } else {
            const auto pairs = dataset::extract_patches(decoded, decoded, partition, ev_qp);
            post = dataset::assemble_patches(models::postprocess_pairs(single, pairs), decoded.width(), decoded.height());
          }
          write_pgm(ev_c.out / "post" / seq.name / (stem(p) + ".pgm"), post);
          const double base = metrics::psnr(decoded, original);
          const double method = metrics::psnr(post, original);
          base_sum += base;
          method_sum += method;
          const auto it = std::find_if(baseline_rates.begin(), baseline_rates.end(), [&](const RateRow& r) {
            return r.sequence == seq.name && r.frame == stem(p);
          });
          if (it == baseline_rates.end()) throw FormatError("eval: no rate entry for " + seq.name + "/" + stem(p));
          rates.push_back({seq.name, stem(p), it->qp, it->total_bits + extra_bits, method});
        }
        const double n = static_cast<double>(seq.frames.size());
        report.push_back({seq.name, ev_qp, base_sum / n, method_sum / n});
      }
      metrics::write_report(ev_c.out / "report.tsv", report);
      write_rate_log(ev_c.out / "rate.tsv", rates);
      double mean = 0.0;
      for (const auto& r : report) mean += r.delta_psnr() / static_cast<double>(report.size());
      std::cout << "mean dPSNR " << std::fixed << std::setprecision(4) << mean << " dB over " << report.size()
                << " sequences\n";
    } else if (*bd_cmd) {
      set_num_threads(bd_c.threads);
      const double bd = metrics::bd_rate(rd_curve(bd_anchor), rd_curve(bd_test));
      std::ostringstream line;
      line << std::fixed << std::setprecision(4) << "BD-rate " << bd << " %\n";
      std::cout << line.str();
      if (!bd_out.empty()) {
        bd_c.out = bd_out;
        prepare_out(bd_cmd, bd_c);
        std::ofstream(bd_out / "bdrate.txt") << line.str();
      }
    } else if (*md_cmd) {
      const FramePlane decoded = read_pgm(md_decoded);
      const auto partition = codec::read_partition(md_partition);
      prepare_out(md_cmd, md_c);
      const auto kind = md_kind == "mean" ? mask::MaskKind::mean : mask::MaskKind::boundary;
      write_pgm(md_c.out / (stem(md_decoded) + "_" + md_kind + ".pgm"),
                mask::mask_to_frame(mask::gen_mask(kind, decoded, partition)));
    }
  } catch (const std::exception& e) {
    std::cerr << "asn: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
