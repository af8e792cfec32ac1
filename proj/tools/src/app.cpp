#include <CLI11.hpp>

#include "crynet/cli/commands.hpp"
#include "crynet/errors.hpp"
#include "crynet/hash.hpp"

namespace crynet::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Infant cry feature extraction, training and fusion", "crynet"};
  app.set_version_flag("--version", std::string(library_version()));
  app.require_subcommand(1);

  Streams io{out, err};
  std::function<int()> action;
  std::string command;
  auto bind = [&](CLI::App* sub, auto fn) {
    sub->callback([&, sub, fn] {
      command = sub->get_name();
      action = fn;
    });
  };

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cry corpus");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--config", synth.config, "Run config JSON");
  s->add_option("--snr", synth.snr_db, "Noise SNR in dB");
  s->add_option("--clips-per-class", synth.clips_per_class);
  s->add_option("--seed", synth.seed);
  bind(s, [&] { return cmd_synth(synth, io); });

  ExtractOptions extract;
  auto* x = app.add_subcommand("extract", "Extract aligned feature tensors");
  x->add_option("--in", extract.in, "Audio root for relative manifest paths");
  x->add_option("--manifest", extract.manifest)->required();
  x->add_option("--out", extract.out, "Feature directory")->required();
  x->add_option("--features", extract.features, "Modality subset, e.g. mfcc,stft");
  x->add_option("--jobs", extract.jobs);
  x->add_option("--config", extract.config);
  bind(x, [&] { return cmd_extract(extract, io); });

  SplitOptions split;
  auto* sp = app.add_subcommand("split", "Assign group-aware train/val/test splits");
  sp->add_option("--manifest", split.manifest, "Manifest, rewritten in place")->required();
  sp->add_option("--in", split.in, "Build the manifest from this directory first");
  sp->add_option("--dataset", split.dataset, "baby2020 or generic");
  sp->add_option("--fractions", split.fractions, "train,val,test");
  sp->add_option("--seed", split.seed);
  sp->add_flag("--no-stratify", split.no_stratify);
  sp->add_option("--config", split.config);
  bind(sp, [&] { return cmd_split(split, io); });

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train one model");
  t->add_option("--manifest", train.manifest)->required();
  t->add_option("--config", train.config);
  t->add_option("--cell", train.cell, "lmu, lstm or none");
  t->add_option("--out", train.out, "Checkpoint directory")->required();
  t->add_option("--seed", train.seed);
  t->add_option("--epochs", train.epochs);
  t->add_option("--patience", train.patience);
  t->add_option("--lr", train.lr);
  t->add_option("--filters", train.filters, "Encoder widths, e.g. 128,64,32");
  bind(t, [&] { return cmd_train(train, io); });

  PredictOptions predict;
  auto* p = app.add_subcommand("predict", "Write per-sample logits for a checkpoint");
  p->add_option("--ckpt", predict.ckpt)->required();
  p->add_option("--manifest", predict.manifest)->required();
  p->add_option("--out", predict.out)->required();
  p->add_option("--split", predict.split, "train, val, test or all");
  bind(p, [&] { return cmd_predict(predict, io); });

  CalibrateOptions calibrate;
  auto* c = app.add_subcommand("calibrate", "Fit per-model temperatures and write an ensemble");
  c->add_option("--ckpt", calibrate.ckpts);
  c->add_option("--manifest", calibrate.manifests, "One per --ckpt");
  c->add_option("--logits", calibrate.logits, "Validation logit tables");
  c->add_option("--domain", calibrate.domains, "Domain name per model");
  c->add_option("--out", calibrate.out)->required();
  c->add_flag("--append", calibrate.append, "Add members to an existing ensemble");
  c->add_option("--config", calibrate.config);
  bind(c, [&] { return cmd_calibrate(calibrate, io); });

  FuseOptions fuse;
  auto* f = app.add_subcommand("fuse", "Fuse calibrated experts over the union label space");
  f->add_option("--ensemble", fuse.ensemble)->required();
  f->add_option("--manifest", fuse.manifest);
  f->add_option("--out", fuse.out)->required();
  f->add_option("--tau", fuse.tau);
  f->add_option("--mode", fuse.mode, "lse or poe");
  f->add_option("--config", fuse.config);
  bind(f, [&] { return cmd_fuse(fuse, io); });

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "Score predictions");
  e->add_option("--preds", eval.preds)->required();
  e->add_option("--manifest", eval.manifest);
  e->add_option("--out", eval.out)->required();
  e->add_option("--seeds", eval.seeds, "Seed of each --preds file");
  bind(e, [&] { return cmd_eval(eval, io); });

  CaseStudyOptions cases;
  auto* cs = app.add_subcommand("case-studies", "Replay the fusion case studies");
  cs->add_option("--tau", cases.tau);
  cs->add_option("--mode", cases.mode);
  cs->add_option("--fixture", cases.fixture);
  cs->add_option("--out", cases.out);
  cs->add_option("--config", cases.config);
  bind(cs, [&] { return cmd_casestudies(cases, io); });

  ReportOptions report;
  auto* r = app.add_subcommand("report", "Summarize eval JSON files as a markdown table");
  r->add_option("--in", report.inputs)->required();
  r->add_option("--out", report.out);
  bind(r, [&] { return cmd_report(report, io); });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    return app.exit(pe, out, err) == 0 ? kOk : kFailure;
  }
  try {
    return action ? action() : kFailure;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_code_for(ex, command);
  }
}

}  // namespace crynet::cli
