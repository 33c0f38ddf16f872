#pragma once

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "modir/bundle.hpp"

namespace modir::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kIntegrity = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<double> parse_point(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("cannot parse reference point '" + text + "'");
    }
  }
  if (v.empty()) throw UsageError("empty reference point");
  return v;
}

inline bool parse_switch(const std::string& s) { return s == "on"; }

struct Options {
  std::uint64_t seed = 1;
  std::size_t p = 27;
  std::size_t iters = 2000;
  double lr = 1e-3;
  std::vector<std::string> refs;
  std::string guidance = "on";
  std::string share_encoder = "on";
  std::string out;
  std::string data;
  std::string bundle;
  std::size_t count = 264;
  std::size_t train = 256;
  std::size_t eval_every = 500;
  std::size_t decoder_channels = 16;
  double magnitude = 4.0;
  bool conflict = true;
};

inline synth::Dataset dataset_for(const Options& o) {
  if (!o.data.empty()) return bundle::load_dataset(o.data);
  if (o.train > o.count) throw UsageError("--train must not exceed --count");
  synth::SynthConfig sc;
  sc.seed = o.seed;
  sc.magnitude = o.magnitude;
  sc.conflict = o.conflict;
  sc.validate();
  return synth::Dataset(sc, o.count, o.train);
}

inline TrainConfig train_config_for(const Options& o) {
  TrainConfig c;
  c.p = o.p;
  c.iterations = o.iters;
  c.lr = o.lr;
  c.guidance = parse_switch(o.guidance);
  c.share_encoder = parse_switch(o.share_encoder);
  c.seed = o.seed;
  c.eval_every = o.eval_every;
  c.model.decoder_channels = o.decoder_channels;
  c.reference = o.refs.empty() ? std::vector<double>(c.objectives(), 1.0) : parse_point(o.refs.front());
  if (o.refs.size() > 1) throw UsageError("training takes a single --ref");
  c.validate();
  return c;
}

inline void print_summary(std::ostream& out, const bundle::RunBundle& b) {
  const auto rep = bundle::bundle_report(b);
  const auto& a = rep.aggregate;
  out << "mode " << b.mode << ", p = " << b.solutions.size() << ", evaluation pairs = " << b.pairs.size() << "\n"
      << "mean pre-registration TRE " << rep.mean_pre_tre << "\n"
      << "HV " << a.hv << ", front-0 size " << a.front0.size() << ", spread " << a.spread << "\n"
      << "min TRE " << a.min_tre << " (solution " << a.min_tre_solution << ", folding " << a.min_tre_folding
      << "%)\n"
      << "max Dice " << a.max_dice << "% (solution " << a.max_dice_solution << ", folding " << a.max_dice_folding
      << "%)\n";
}

/// Runs the command line; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-objective deformable registration by hypervolume maximisation", "modir"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "random seed");
    sub->add_option("--out", o.out, "output directory")->required();
  };
  const auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "dataset directory written by 'synth' (default: generate)");
    sub->add_option("--count", o.count, "pairs to generate when --data is not given");
    sub->add_option("--train", o.train, "training pairs among them; the rest are evaluation pairs");
    sub->add_option("--magnitude", o.magnitude, "max ground-truth displacement in voxels");
  };
  const auto add_train = [&](CLI::App* sub) {
    add_common(sub);
    add_data(sub);
    sub->add_option("--p", o.p, "number of solutions (heads)");
    sub->add_option("--iters", o.iters, "training iterations");
    sub->add_option("--lr", o.lr, "Adam learning rate");
    sub->add_option("--ref", o.refs, "reference point x,y[,z]");
    sub->add_option("--guidance", o.guidance, "segmentation objective")->check(CLI::IsMember({"on", "off"}));
    sub->add_option("--share-encoder", o.share_encoder, "share one encoder between heads")
        ->check(CLI::IsMember({"on", "off"}));
    sub->add_option("--eval-every", o.eval_every, "iterations between evaluation-set records");
    sub->add_option("--decoder-channels", o.decoder_channels, "decoder width");
  };

  auto* synth_cmd = app.add_subcommand("synth", "generate and save a synthetic dataset");
  add_common(synth_cmd);
  synth_cmd->add_option("--count", o.count, "number of pairs");
  synth_cmd->add_option("--train", o.train, "training pairs among them");
  synth_cmd->add_option("--magnitude", o.magnitude, "max ground-truth displacement in voxels");
  synth_cmd->add_flag("!--no-conflict", o.conflict, "disable the mask-inconsistent intensity ramp");

  auto* mo_cmd = app.add_subcommand("train-mo", "train with hypervolume-derived dynamic weights");
  add_train(mo_cmd);
  auto* grid_cmd = app.add_subcommand("train-grid", "train one head per fixed grid weight triple");
  add_train(grid_cmd);

  auto* genmed_cmd = app.add_subcommand("genmed", "hypervolume maximisation on the analytic benchmark");
  add_common(genmed_cmd);
  o.p = 27;
  std::size_t genmed_p = 25, genmed_iters = 4000;
  genmed_cmd->add_option("--p", genmed_p, "number of points");
  genmed_cmd->add_option("--iters", genmed_iters, "iterations");
  genmed_cmd->add_option("--lr", o.lr, "Adam learning rate");
  genmed_cmd->add_option("--ref", o.refs, "reference point x,y,z (repeatable)");

  auto* eval_cmd = app.add_subcommand("evaluate", "recompute metrics of a bundle");
  eval_cmd->add_option("bundle", o.bundle, "bundle directory")->required();
  eval_cmd->add_option("--data", o.data, "run the bundle's model on this dataset's evaluation split instead");
  eval_cmd->add_option("--out", o.out, "write a new bundle here (with --data)");

  auto* export_cmd = app.add_subcommand("export", "re-render overlays and scatter data of a bundle");
  export_cmd->add_option("bundle", o.bundle, "bundle directory")->required();
  export_cmd->add_option("--out", o.out, "write to another directory instead of in place");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kUsage;
  }

  try {
    if (synth_cmd->parsed()) {
      if (o.train > o.count) throw UsageError("--train must not exceed --count");
      synth::SynthConfig sc;
      sc.seed = o.seed;
      sc.magnitude = o.magnitude;
      sc.conflict = o.conflict;
      sc.validate();
      bundle::save_dataset(o.out, synth::Dataset(sc, o.count, o.train));
      out << "wrote " << o.count << " pairs to " << o.out << "\n";
    } else if (mo_cmd->parsed() || grid_cmd->parsed()) {
      const TrainConfig config = train_config_for(o);
      const synth::Dataset data = dataset_for(o);
      if (data.eval_indices().empty()) throw UsageError("the dataset has no evaluation pairs");
      const TrainResult result = mo_cmd->parsed() ? train_mo(config, data) : train_grid(config, data);
      const auto b = bundle::make_run_bundle(config, result, data, data.eval_indices());
      bundle::write_bundle(b, o.out);
      print_summary(out, b);
    } else if (genmed_cmd->parsed()) {
      GenmedConfig gc;
      gc.p = genmed_p;
      gc.iterations = genmed_iters;
      gc.lr = o.lr;
      gc.seed = o.seed;
      if (!o.refs.empty()) {
        gc.references.clear();
        for (const auto& r : o.refs) gc.references.push_back(parse_point(r));
        gc.objectives = gc.references.front().size();
      }
      bundle::RunBundle b;
      b.mode = "genmed";
      b.config = {{"p", gc.p}, {"iterations", gc.iterations}, {"lr", gc.lr}, {"seed", gc.seed}};
      b.reference = gc.references.front();
      for (std::size_t k = 0; k < gc.objectives; ++k) b.objectives.push_back("f" + std::to_string(k + 1));
      for (std::size_t i = 0; i < gc.p; ++i) b.solutions.push_back({i, std::nullopt});
      b.genmed = train_genmed(gc);
      bundle::write_bundle(b, o.out);
      for (const auto& t : b.genmed) {
        double dist = 0.0;
        for (const auto& x : t.decisions) dist = std::max(dist, genmed::front_distance(x));
        out << "reference " << nlohmann::json(t.reference).dump() << ": HV " << t.records.back().hv
            << ", max front distance " << dist;
        if (gc.objectives == 3) out << ", edge clustering " << genmed::edge_clustering(t.objectives);
        out << "\n";
      }
    } else if (eval_cmd->parsed()) {
      bundle::RunBundle b = bundle::read_bundle(o.bundle);
      if (!o.data.empty()) {
        if (!b.model) throw UsageError("bundle has no stored model");
        if (o.out.empty()) throw UsageError("--data needs --out");
        const synth::Dataset data = bundle::load_dataset(o.data);
        TrainConfig config;
        config.p = b.model->config.heads;
        config.guidance = b.objectives.size() == 3;
        config.reference = b.reference;
        const TrainResult result{b.trace.value_or(TrainTrace{}), *b.model};
        auto fresh = bundle::make_run_bundle(config, result, data, data.eval_indices());
        fresh.mode = b.mode;
        fresh.config = b.config;
        fresh.solutions = b.solutions;
        bundle::write_bundle(fresh, o.out);
        print_summary(out, fresh);
      } else {
        const std::size_t mismatches = bundle::reevaluate(b);
        print_summary(out, b);
        if (mismatches) {
          err << mismatches << " stored metric values differ from the recomputed ones\n";
          return kIntegrity;
        }
        out << "stored metrics reproduced exactly\n";
      }
    } else if (export_cmd->parsed()) {
      const auto b = bundle::read_bundle(o.bundle);
      bundle::write_bundle(b, o.out.empty() ? o.bundle : o.out);
      out << "rendered assets for " << b.pairs.size() << " pairs\n";
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const io::IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const io::VersionError& e) {
    err << "version error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace modir::cli
