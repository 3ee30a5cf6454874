#include <CLI11.hpp>

#include <future>
#include <iostream>

#include "unetmer/checkpoint.hpp"
#include "unetmer/pipeline.hpp"
#include "unetmer/training.hpp"

using namespace unetmer;
namespace fs = std::filesystem;

namespace {

std::vector<int> parse_int_list(const std::string& csv, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ValidationError(what + ": '" + tok + "' is not an integer");
    }
  }
  check(!out.empty(), what + ": empty list");
  return out;
}

void write_resolved_config(CLI::App& app, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "resolved_config");
  check_io(bool(os), "cannot write resolved_config under " + out_dir.string());
  os << app.config_to_str(true, true);
}

struct TrainFlags {
  std::string data;
  std::string out;
  std::string backbone = "unet";
  std::string scales = "1,2";
  bool no_transformer = false;
  int epochs = 100;
  int batch_size = 16;
  double lr0 = 1e-4;
  int lr_period = 20;
  int base_channels = 16;
  int n_pool = 4;
  int layers = 4;
  int heads = 8;
  double mlp_ratio = 4.0;
  std::uint64_t seed = 0;
  std::string mixing = "roundrobin";
  int checkpoint_every = 0;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "dataset manifest file")->required();
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_option("--backbone", f.backbone, "unet|attunet|unetpp");
  cmd->add_option("--scales", f.scales, "comma-separated training scales, e.g. 1,2");
  cmd->add_flag("--no-transformer", f.no_transformer, "ablation: bypass the transformer");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--lr0", f.lr0, "initial learning rate");
  cmd->add_option("--lr-halving-period", f.lr_period, "epochs between halvings");
  cmd->add_option("--base-channels", f.base_channels);
  cmd->add_option("--n-pool", f.n_pool, "number of pooling stages");
  cmd->add_option("--layers", f.layers, "transformer blocks");
  cmd->add_option("--heads", f.heads, "attention heads");
  cmd->add_option("--mlp-ratio", f.mlp_ratio);
  cmd->add_option("--seed", f.seed)->envname("UNETMER_SEED");
  cmd->add_option("--mixing", f.mixing, "roundrobin|random scale mixing");
  cmd->add_option("--checkpoint-every", f.checkpoint_every, "epochs between extra checkpoints");
}

struct LoadedData {
  DatasetManifest manifest;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

LoadedData load_data(const std::string& manifest_path) {
  LoadedData d;
  d.manifest = load_manifest(manifest_path);
  const auto spec = default_preprocess(d.manifest.modality);
  d.train = load_split(d.manifest, "train", spec);
  d.test = load_split(d.manifest, "test", spec);
  return d;
}

UNetmerConfig model_config_from_flags(const TrainFlags& f, const LoadedData& d) {
  check(!d.train.empty(), "manifest has no train samples");
  UNetmerConfig cfg;
  cfg.backbone.variant = variant_from_string(f.backbone);
  cfg.backbone.in_channels = static_cast<int>(d.train.front().image.dim(0));
  cfg.backbone.base_channels = f.base_channels;
  cfg.backbone.n_pool = f.n_pool;
  cfg.backbone.num_classes = d.manifest.num_classes;
  cfg.transformer.num_layers = f.layers;
  cfg.transformer.num_heads = f.heads;
  cfg.transformer.mlp_ratio = f.mlp_ratio;
  cfg.scales = parse_int_list(f.scales, "--scales");
  cfg.input_h = d.train.front().image.dim(1);
  cfg.input_w = d.train.front().image.dim(2);
  cfg.use_transformer = !f.no_transformer;
  return cfg;
}

TrainConfig train_config_from_flags(const TrainFlags& f, const fs::path& out_dir) {
  TrainConfig cfg;
  cfg.epochs = f.epochs;
  cfg.batch_size = f.batch_size;
  cfg.lr0 = f.lr0;
  cfg.lr_halving_period = f.lr_period;
  cfg.scales = parse_int_list(f.scales, "--scales");
  cfg.seed = f.seed;
  if (f.mixing == "roundrobin")
    cfg.mixing = ScaleMixing::RoundRobin;
  else if (f.mixing == "random")
    cfg.mixing = ScaleMixing::UniformRandom;
  else
    throw ValidationError("--mixing must be roundrobin or random");
  cfg.checkpoint_every = f.checkpoint_every;
  cfg.out_dir = out_dir;
  return cfg;
}

void run_train(const TrainFlags& flags, const fs::path& out_dir, std::ostream* log) {
  auto data = load_data(flags.data);
  auto model_cfg = model_config_from_flags(flags, data);
  auto train_cfg = train_config_from_flags(flags, out_dir);
  UNetmer<float> model(model_cfg, flags.seed);
  if (log)
    (*log) << "training " << to_string(model_cfg.backbone.variant) << " scales=" << flags.scales
           << " params=" << model.parameter_count() << " train=" << data.train.size()
           << " test=" << data.test.size() << "\n";
  train(model, data.train, data.test, train_cfg, log);
}

int cmd_synth(const std::string& out, std::uint64_t seed, int count, int size,
              double contrast_lo, double contrast_hi, double noise_std, double train_frac) {
  check(count >= 1, "--count must be >= 1");
  check(0.0 < train_frac && train_frac < 1.0, "--train-frac must lie in (0, 1)");
  SyntheticSpec spec;
  spec.seed = seed;
  spec.count = count;
  spec.height = spec.width = static_cast<std::size_t>(size);
  spec.contrast_range = {contrast_lo, contrast_hi};
  spec.noise_std = noise_std;
  auto samples = make_synthetic_dataset(spec);
  const auto train_count = static_cast<std::size_t>(std::lround(train_frac * count));
  save_dataset(samples, out, Modality::SYNTH, 2, train_count);
  std::cout << "wrote " << samples.size() << " samples (" << train_count << " train, "
            << samples.size() - train_count << " test) under " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const fs::path& out_dir,
             bool per_scale, const std::string& split) {
  auto model = load_checkpoint<float>(checkpoint);
  auto manifest = load_manifest(data);
  auto samples = load_split(manifest, split, default_preprocess(manifest.modality));
  check(!samples.empty(), "split '" + split + "' is empty");
  check(manifest.num_classes == model.config().backbone.num_classes,
        "checkpoint and manifest disagree on num_classes");

  fs::create_directories(out_dir);
  auto report = evaluate_split(model, samples, 1, manifest.num_classes);
  write_metrics_csv(report, out_dir / "metrics.csv");
  std::cout << "B_s=1: dice " << report.mean.dice << " +/- " << report.stddev.dice << " over "
            << report.ids.size() << " items\n";
  if (per_scale) {
    for (int s : model.config().scales) {
      auto r = evaluate_split(model, samples, s, manifest.num_classes);
      write_metrics_csv(r, out_dir / ("metrics_s" + std::to_string(s) + ".csv"));
      std::cout << "B_s=" << s << ": dice " << r.mean.dice << " +/- " << r.stddev.dice << "\n";
    }
  }
  return 0;
}

int cmd_rank(const std::string& checkpoint, const std::string& data, const fs::path& out_dir,
             const std::string& pair_csv, const std::string& deciles_csv,
             const std::string& split, bool protoseg_baseline) {
  auto model = load_checkpoint<float>(checkpoint);
  check(model.config().scales.size() >= 2, "confidence requires >= 2 scales");
  auto pair_list = parse_int_list(pair_csv, "--pair");
  check(pair_list.size() == 2, "--pair expects two scales, e.g. 1,2");
  ScalePair pair{pair_list[0], pair_list[1]};
  check_scale(pair.first);
  check_scale(pair.second);
  check(pair.first != pair.second, "--pair scales must differ (i != j)");
  if (pair.first > pair.second) std::swap(pair.first, pair.second);

  std::vector<double> deciles;
  for (int d : parse_int_list(deciles_csv, "--deciles")) deciles.push_back(d);

  auto manifest = load_manifest(data);
  auto samples = load_split(manifest, split, default_preprocess(manifest.modality));
  check(!samples.empty(), "split '" + split + "' is empty");

  auto report = confidence_split(model, samples, pair, /*with_gt=*/true, deciles);
  fs::create_directories(out_dir);
  write_ranking_csv(report, out_dir / "ranking.csv");
  write_records_jsonl(report, out_dir / "records.jsonl");
  if (!report.coverage.empty()) write_coverage_csv(report, out_dir / "coverage.csv");

  std::cout << "ranked " << report.entries.size() << " images by C_" << pair.first
            << pair.second << " (most difficult first)\n";
  std::ofstream pcsv(out_dir / "pearson.csv");
  check_io(bool(pcsv), "cannot write pearson.csv");
  pcsv << "score,pearson_r\n";
  for (const auto& [p, r] : report.pearson_r) {
    std::cout << "pearson(C_" << p.first << p.second << ", dice_s1) = " << r << "\n";
    pcsv << "c_" << p.first << p.second << ',' << r << '\n';
  }
  if (protoseg_baseline) {
    // Prototype segmentation-ability baseline, scored against the model's
    // own prediction so it needs no ground truth, correlated with Dice.
    std::vector<double> sa_scores, dices;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto sa = protoseg_baseline_score(model, samples[i], /*use_gt=*/false);
      if (sa && report.entries[i].dice_s1) {
        sa_scores.push_back(*sa);
        dices.push_back(*report.entries[i].dice_s1);
      }
    }
    if (sa_scores.size() >= 2) {
      try {
        const double r = pearson(sa_scores, dices);
        std::cout << "pearson(protoseg_sa, dice_s1) = " << r << " over " << sa_scores.size()
                  << " images\n";
        pcsv << "protoseg," << r << '\n';
      } catch (const ValidationError&) {
        std::cout << "protoseg baseline correlation undefined (constant scores)\n";
      }
    }
  }
  return 0;
}

int cmd_sweep(const TrainFlags& base, const std::string& backbones_csv,
              const std::string& scale_sets, const fs::path& out_dir, int jobs) {
  std::vector<std::string> backbones;
  {
    std::stringstream ss(backbones_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) backbones.push_back(tok);
  }
  std::vector<std::string> sets;
  {
    std::stringstream ss(scale_sets);
    std::string tok;
    while (std::getline(ss, tok, ';')) sets.push_back(tok);
  }
  check(!backbones.empty() && !sets.empty(), "sweep needs backbones and scale sets");
  check(jobs >= 1, "--jobs must be >= 1");

  struct Run {
    std::string backbone, scales;
    fs::path dir;
    double test_dice = 0, test_std = 0;
    std::size_t params = 0;
  };
  std::vector<Run> runs;
  for (const auto& b : backbones)
    for (const auto& s : sets) {
      Run r;
      r.backbone = b;
      r.scales = s;
      std::string tag = s;
      std::replace(tag.begin(), tag.end(), ',', '-');
      r.dir = out_dir / (b + "_s" + tag);
      runs.push_back(std::move(r));
    }

  auto run_one = [&](Run& r) {
    TrainFlags f = base;
    f.backbone = r.backbone;
    f.scales = r.scales;
    run_train(f, r.dir, jobs == 1 ? &std::cout : nullptr);
    auto model = load_checkpoint<float>(r.dir / "checkpoint_final");
    auto data = load_data(f.data);
    auto report = evaluate_split(model, data.test, 1, data.manifest.num_classes);
    r.test_dice = report.mean.dice;
    r.test_std = report.stddev.dice;
    r.params = model.parameter_count();
  };

  for (std::size_t lo = 0; lo < runs.size(); lo += static_cast<std::size_t>(jobs)) {
    const std::size_t hi = std::min(runs.size(), lo + static_cast<std::size_t>(jobs));
    std::vector<std::future<void>> futures;
    for (std::size_t i = lo; i < hi; ++i)
      futures.push_back(std::async(std::launch::async, [&runs, &run_one, i]() { run_one(runs[i]); }));
    for (auto& fut : futures) fut.get();
  }

  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "sweep.csv");
  check_io(bool(os), "cannot write sweep.csv");
  os << "backbone,scales,params,test_dice,test_dice_std\n";
  std::cout << "backbone  scales     test dice (B_s=1)\n";
  for (const auto& r : runs) {
    os << r.backbone << ",\"" << r.scales << "\"," << r.params << ',' << r.test_dice << ','
       << r.test_std << '\n';
    char line[160];
    std::snprintf(line, sizeof(line), "%-9s %-10s %.4f +/- %.4f\n", r.backbone.c_str(),
                  r.scales.c_str(), r.test_dice, r.test_std);
    std::cout << line;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"U-Netmer: patch-scale segmentation with a transformer bottleneck"};
  app.option_defaults()->always_capture_default();  // so resolved_config echoes real values
  app.set_config("--config", "", "read options from a key=value file");
  app.require_subcommand(1);
  app.fallthrough();  // `unetmer <sub> --config FILE` reaches the top-level option

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  int synth_count = 200, synth_size = 64;
  double contrast_lo = 0.15, contrast_hi = 0.6, noise_std = 0.1, train_frac = 0.8;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed)->envname("UNETMER_SEED");
  synth->add_option("--count", synth_count, "number of samples");
  synth->add_option("--size", synth_size, "square image side (multiple of 64)");
  synth->add_option("--contrast-low", contrast_lo);
  synth->add_option("--contrast-high", contrast_hi);
  synth->add_option("--noise-std", noise_std);
  synth->add_option("--train-frac", train_frac);

  auto* train_cmd = app.add_subcommand("train", "train a model from a manifest");
  TrainFlags tf;
  add_train_flags(train_cmd, tf);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string eval_ckpt, eval_data, eval_out, eval_split = "test";
  bool per_scale = false;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--out", eval_out)->required();
  eval_cmd->add_flag("--per-scale", per_scale, "emit one metric block per configured scale");
  eval_cmd->add_option("--split", eval_split, "train|test");

  auto* rank_cmd = app.add_subcommand("rank", "rank test images by difficulty");
  std::string rank_ckpt, rank_data, rank_out, rank_pair = "1,2", rank_split = "test";
  std::string rank_deciles = "10,20,30,40,50,60,70,80,90,100";
  rank_cmd->add_option("--checkpoint", rank_ckpt)->required();
  rank_cmd->add_option("--data", rank_data)->required();
  rank_cmd->add_option("--out", rank_out)->required();
  rank_cmd->add_option("--pair", rank_pair, "confidence scale pair i,j");
  rank_cmd->add_option("--deciles", rank_deciles, "coverage curve percentiles");
  rank_cmd->add_option("--split", rank_split);
  bool rank_protoseg = false;
  rank_cmd->add_flag("--protoseg-baseline", rank_protoseg,
                     "also correlate the prototype segmentation-ability baseline");

  auto* sweep_cmd = app.add_subcommand("sweep", "train a grid of backbones x scale sets");
  TrainFlags sf;
  add_train_flags(sweep_cmd, sf);
  std::string sweep_backbones = "unet,attunet,unetpp";
  std::string sweep_sets = "1;1,2;1,2,4;1,2,4,8";
  int sweep_jobs = 1;
  sweep_cmd->add_option("--backbones", sweep_backbones, "comma-separated variants");
  sweep_cmd->add_option("--scale-sets", sweep_sets, "semicolon-separated scale lists");
  sweep_cmd->add_option("--jobs", sweep_jobs, "parallel training workers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      write_resolved_config(app, synth_out);
      return cmd_synth(synth_out, synth_seed, synth_count, synth_size, contrast_lo, contrast_hi,
                       noise_std, train_frac);
    }
    if (*train_cmd) {
      write_resolved_config(app, tf.out);
      run_train(tf, tf.out, &std::cout);
      return 0;
    }
    if (*eval_cmd) {
      write_resolved_config(app, eval_out);
      return cmd_eval(eval_ckpt, eval_data, eval_out, per_scale, eval_split);
    }
    if (*rank_cmd) {
      write_resolved_config(app, rank_out);
      return cmd_rank(rank_ckpt, rank_data, rank_out, rank_pair, rank_deciles, rank_split,
                      rank_protoseg);
    }
    if (*sweep_cmd) {
      write_resolved_config(app, sf.out);
      return cmd_sweep(sf, sweep_backbones, sweep_sets, sf.out, sweep_jobs);
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
