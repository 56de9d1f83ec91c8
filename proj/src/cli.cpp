#include "hfusion/cli.h"

#include <CLI11.hpp>
#include <torch/torch.h>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hfusion/checkpoint.h"
#include "hfusion/config.h"
#include "hfusion/errors.h"
#include "hfusion/fusion_policy.h"
#include "hfusion/grpo.h"
#include "hfusion/metrics.h"
#include "hfusion/overlay.h"
#include "hfusion/regions.h"
#include "hfusion/reward_model.h"
#include "hfusion/service.h"

namespace hfusion {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;

  [[nodiscard]] RunConfig load() const {
    RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::load(config);
    for (const auto& o : overrides) cfg.set(o);
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", common.overrides, "override a config value, e.g. grpo.beta=0.5");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << text;
    if (!out) throw RuntimeFailure("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

fs::path history_path(const std::string& explicit_path, const fs::path& out) {
  return explicit_path.empty() ? fs::path(out.string() + ".history.csv") : fs::path(explicit_path);
}

data::Manifest select_split(const data::Manifest& manifest, const std::string& split) {
  if (split == "all") return manifest;
  const data::Split wanted = data::split_from_string(split);
  data::Manifest out;
  for (const auto& t : manifest.triplets) {
    if (t.split == wanted) out.triplets.push_back(t);
  }
  if (out.triplets.empty()) throw ValidationError("manifest has no " + split + " triplets");
  return out;
}

// ---------------------------------------------------------------------------

struct DedupArgs {
  Common common;
  std::string input, out;
  std::optional<double> threshold;
};

int cmd_dedup(const DedupArgs& a) {
  const RunConfig cfg = a.common.load();
  const double threshold = a.threshold.value_or(cfg.dedup_threshold());
  if (!(threshold > 0.0 && threshold <= 1.0)) throw RangeError("threshold must lie in (0,1]");
  const auto pairs = data::ingest_directory(a.input);
  const data::DownsampleEmbedder embedder(cfg.embed_size());
  std::vector<data::EmbeddingVector> embeddings;
  for (const auto& p : pairs) embeddings.push_back(data::embed_visible(p, embedder));
  auto clusters = data::dedup_cluster(embeddings, threshold);

  std::map<std::string, const data::ImagePair*> by_id;
  for (const auto& p : pairs) by_id[p.pair_id] = &p;
  json doc;
  doc["input"] = fs::absolute(a.input).string();
  doc["threshold"] = threshold;
  doc["clusters"] = json::array();
  json sources = json::object();
  for (auto& c : clusters) {
    std::vector<data::ImagePair> members;
    for (const auto& id : c.member_ids) members.push_back(*by_id.at(id));
    const auto scores = data::quality_scores(members);
    c.representative_id = data::select_representative(c, scores);
    json totals = json::object();
    for (const auto& [id, s] : scores) totals[id] = s.total;
    doc["clusters"].push_back({{"cluster_id", c.cluster_id},
                               {"member_ids", c.member_ids},
                               {"representative_id", c.representative_id},
                               {"quality", totals}});
    for (const auto& id : c.member_ids) {
      const auto* p = by_id.at(id);
      sources[id] = {{"visible", fs::absolute(p->visible_path).string()},
                     {"infrared", fs::absolute(p->infrared_path).string()}};
    }
  }
  doc["pairs"] = sources;
  write_text(a.out, doc.dump(2) + "\n");
  std::cout << pairs.size() << " pairs -> " << clusters.size() << " clusters\n";
  return 0;
}

struct BuildManifestArgs {
  Common common;
  std::string clusters, out, splits, exclude;
  std::vector<std::string> fused_dirs;
  std::optional<std::uint64_t> seed;
};

int cmd_build_manifest(const BuildManifestArgs& a) {
  const RunConfig cfg = a.common.load();
  data::ManifestOptions options = cfg.manifest_options();
  if (a.seed) options.seed = *a.seed;
  if (!a.splits.empty()) {
    std::vector<double> f;
    std::stringstream ss(a.splits);
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        f.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw ValidationError("--splits must be three comma-separated numbers");
      }
    }
    if (f.size() != 3) throw ValidationError("--splits must be three comma-separated numbers");
    options.fractions = {f[0], f[1], f[2]};
  }
  if (!a.exclude.empty()) {
    std::ifstream in(a.exclude);
    if (!in) throw IngestError("cannot read " + a.exclude);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) options.excluded_pairs.insert(line);
    }
  }
  std::map<std::string, fs::path> dirs;
  for (const auto& spec : a.fused_dirs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("--fused-dirs entries must look like method=DIR: " + spec);
    }
    dirs[spec.substr(0, eq)] = spec.substr(eq + 1);
  }
  std::ifstream in(a.clusters);
  if (!in) throw IngestError("cannot read " + a.clusters);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("clusters file is not valid JSON: " + std::string(e.what()));
  }
  std::vector<data::SourcePair> sources;
  for (const auto& c : doc.at("clusters")) {
    const std::string id = c.at("representative_id").get<std::string>();
    const auto& p = doc.at("pairs").at(id);
    sources.push_back({id, p.at("visible").get<std::string>(), p.at("infrared").get<std::string>()});
  }
  const auto manifest = data::assemble_manifest(sources, dirs, options);
  data::write_manifest(manifest, a.out);
  std::cout << manifest.triplets.size() << " triplets, " << manifest.skipped.size()
            << " skipped\n";
  return 0;
}

struct PretrainArgs {
  Common common;
  std::string manifest, out, history, split = "train";
};

int cmd_pretrain(const PretrainArgs& a) {
  const RunConfig cfg = a.common.load();
  const auto manifest = select_split(data::read_manifest(a.manifest), a.split);
  const auto pairs = policy::load_source_pairs(manifest);
  auto pol = policy::make_policy(cfg.policy_arch(), cfg.seed());
  const auto pre = cfg.pretrain();
  const auto history = policy::pretrain_supervised(pol, pairs, pre);
  policy::save_policy(pol, a.out,
                      json{{"pretrain",
                            {{"epochs", pre.epochs},
                             {"lr", pre.lr},
                             {"weight_decay", pre.weight_decay},
                             {"batch_size", pre.batch_size},
                             {"seed", pre.seed}}}});
  write_text(history_path(a.history, a.out), policy::pretrain_history_csv(history));
  std::cout << "pretrain loss " << history.front().loss << " -> " << history.back().loss << "\n";
  return 0;
}

struct TrainRewardArgs {
  Common common;
  std::string manifest, annotations, out, history, backbone, split = "train";
};

int cmd_train_reward(const TrainRewardArgs& a) {
  const RunConfig cfg = a.common.load();
  const auto enc = cfg.encoder();
  const auto train = cfg.reward_train();
  const auto manifest = data::read_manifest(a.manifest);
  std::optional<data::Split> split;
  if (a.split != "all") split = data::split_from_string(a.split);
  const auto samples = reward::load_reward_samples(manifest, a.annotations, enc.image_size,
                                                   train.heatmap_style, split);
  if (samples.empty()) throw ValidationError("no annotated triplets to train on");
  auto model = reward::make_reward_model(enc, cfg.seed());
  const std::string backbone = a.backbone.empty() ? cfg.backbone_weights() : a.backbone;
  if (!backbone.empty()) reward::load_backbone_weights(model, backbone);
  const auto history = reward::train_reward(model, samples, train);
  reward::save_reward_model(model, train, a.out);
  write_text(history_path(a.history, a.out), reward::reward_history_csv(history));
  std::cout << "reward loss " << history.front().total << " -> " << history.back().total << "\n";
  return 0;
}

// Heatmap PNG, overlay PNG and circles for one triplet.
json render_prediction(reward::RewardModel& model, const data::ImageTriplet& t,
                       const fs::path& heatmap_dir, const fs::path& overlay_dir) {
  const Image vis = load_image(t.visible_path);
  const Image ir = load_image(t.infrared_path);
  const Image fused = load_image(t.fused_path);
  const auto pred = reward::predict(model, vis, ir, fused);
  const auto circles = overlay::artifact_circles(pred.heatmap, fused.height, fused.width);
  json row;
  row["triplet_id"] = t.triplet_id;
  json scores = json::object();
  json rescaled = json::object();
  for (std::size_t i = 0; i < annotation::kNumScores; ++i) {
    scores[std::string(annotation::kScoreKeys[i])] = pred.scores[i];
    rescaled[std::string(annotation::kScoreKeys[i])] = 1.0 + 4.0 * pred.scores[i];
  }
  row["scores"] = scores;
  row["scores_1_to_5"] = rescaled;
  if (!heatmap_dir.empty()) {
    const fs::path hp = heatmap_dir / (t.triplet_id + ".png");
    save_image(overlay::heatmap_image(pred.heatmap), hp);
    row["heatmap"] = hp.string();
  }
  const fs::path op = overlay_dir / (t.triplet_id + ".png");
  save_image(overlay::draw_overlay(fused, circles), op);
  row["overlay"] = op.string();
  row["circles"] = json::array();
  for (const auto& c : circles) row["circles"].push_back({c.cx, c.cy, c.radius});
  return row;
}

struct EvalRewardArgs {
  Common common;
  std::string ckpt, manifest, report, out_dir, split = "all";
};

int cmd_eval_reward(const EvalRewardArgs& a) {
  (void)a.common.load();
  auto model = reward::load_reward_model(a.ckpt);
  const auto manifest = select_split(data::read_manifest(a.manifest), a.split);
  const fs::path base = a.out_dir.empty() ? fs::path(a.report).parent_path() / "eval_reward"
                                          : fs::path(a.out_dir);
  fs::create_directories(base / "heatmaps");
  fs::create_directories(base / "overlays");
  json report;
  report["checkpoint"] = a.ckpt;
  report["checkpoint_digest"] = file_digest(a.ckpt);
  report["triplets"] = json::array();
  for (const auto& t : manifest.triplets) {
    report["triplets"].push_back(render_prediction(model, t, base / "heatmaps", base / "overlays"));
  }
  write_text(a.report, report.dump(2) + "\n");
  std::cout << manifest.triplets.size() << " triplets scored\n";
  return 0;
}

struct ExportOverlaysArgs {
  Common common;
  std::string reward, manifest, out_dir, split = "all";
};

int cmd_export_overlays(const ExportOverlaysArgs& a) {
  (void)a.common.load();
  auto model = reward::load_reward_model(a.reward);
  const auto manifest = select_split(data::read_manifest(a.manifest), a.split);
  fs::create_directories(a.out_dir);
  std::size_t circles = 0;
  for (const auto& t : manifest.triplets) {
    circles += render_prediction(model, t, {}, a.out_dir)["circles"].size();
  }
  std::cout << manifest.triplets.size() << " overlays, " << circles << " circles\n";
  return 0;
}

struct FinetuneArgs {
  Common common;
  std::string policy, reward, manifest, out, history, dump_dir, split = "train";
  std::optional<std::string> segmenter;
  std::optional<int> regions;
};

int cmd_finetune(const FinetuneArgs& a) {
  const RunConfig cfg = a.common.load();
  auto g = cfg.grpo();
  if (a.segmenter) g.segmenter = *a.segmenter;
  if (a.regions) g.regions = *a.regions;
  g.validate();
  const auto segmenter = grpo::make_segmenter(g.segmenter);
  auto pol = policy::load_policy(a.policy);
  auto model = reward::load_reward_model(a.reward);
  const auto manifest = select_split(data::read_manifest(a.manifest), a.split);
  const auto pairs = policy::load_source_pairs(manifest);
  std::function<void(int, const policy::FusionPolicy&)> dump;
  if (!a.dump_dir.empty()) {
    fs::create_directories(a.dump_dir);
    dump = [&](int epoch, const policy::FusionPolicy& p) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch%03d.png", epoch);
      save_image(policy::fuse(p, pairs.front().visible, pairs.front().infrared),
                 fs::path(a.dump_dir) / name);
    };
  }
  const auto result = grpo::finetune_grpo(pol, model, pairs, g, *segmenter, dump);
  policy::save_policy(pol, a.out, json{{"grpo", grpo::to_json(g)}});
  write_text(history_path(a.history, a.out), grpo::grpo_history_csv(result.history));
  std::cout << "mean reward " << result.history.front().mean_reward << " -> "
            << result.history.back().mean_reward << "\n";
  return 0;
}

struct FuseArgs {
  Common common;
  std::string ckpt, visible, infrared, out;
};

int cmd_fuse(const FuseArgs& a) {
  (void)a.common.load();
  const auto pol = policy::load_policy(a.ckpt);
  const Image vis = load_image(a.visible);
  const Image ir = load_image(a.infrared);
  if (!vis.same_size(ir)) throw ShapeError("visible and infrared sizes differ");
  save_image(policy::fuse(pol, vis, ir), a.out);
  return 0;
}

struct EvaluateArgs {
  Common common;
  std::string manifest, report, split = "all";
};

int cmd_evaluate(const EvaluateArgs& a) {
  const RunConfig cfg = a.common.load();
  const auto manifest = select_split(data::read_manifest(a.manifest), a.split);
  const auto report = metrics::evaluate_manifest(manifest, cfg.metric_options());
  write_text(a.report, metrics::report_csv(report));
  for (const auto& name : metrics::kColumnOrder) {
    std::cout << name << " " << report.means.at(std::string(name)) << "\n";
  }
  return 0;
}

struct ServeArgs {
  Common common;
  std::string manifest, store, host;
  std::optional<int> port;
};

int cmd_serve(const ServeArgs& a) {
  const RunConfig cfg = a.common.load();
  const auto svc = cfg.service();
  service::AnnotationStore store(a.store.empty() ? svc.store : a.store,
                                 data::read_manifest(a.manifest));
  service::AnnotationServer server(store);
  const std::string host = a.host.empty() ? svc.host : a.host;
  const int port = server.bind(host, a.port.value_or(svc.port));
  std::cout << "listening on " << host << ":" << port << std::endl;
  server.listen();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  torch::set_num_threads(1);
  CLI::App app{"Human-feedback fusion pipeline", "hfusion"};
  app.require_subcommand(1);

  DedupArgs dedup;
  auto* c = app.add_subcommand("dedup", "cluster near-duplicate scenes and pick representatives");
  add_common(c, dedup.common);
  c->add_option("--input", dedup.input, "directory with visible/ and infrared/")->required();
  c->add_option("--threshold", dedup.threshold, "cosine similarity threshold");
  c->add_option("--out", dedup.out, "clusters JSON")->required();

  BuildManifestArgs bm;
  c = app.add_subcommand("build-manifest", "pair representatives with fused images");
  add_common(c, bm.common);
  c->add_option("--clusters", bm.clusters, "output of dedup")->required();
  c->add_option("--fused-dirs", bm.fused_dirs, "method=DIR, repeatable")->required();
  c->add_option("--seed", bm.seed, "split seed (defaults to config seed)");
  c->add_option("--splits", bm.splits, "train,val,test fractions");
  c->add_option("--exclude", bm.exclude, "file with one excluded pair_id per line");
  c->add_option("--out", bm.out, "manifest JSONL")->required();

  PretrainArgs pre;
  c = app.add_subcommand("pretrain-fusion", "supervised proxy pretraining of the fusion policy");
  add_common(c, pre.common);
  c->add_option("--manifest", pre.manifest)->required();
  c->add_option("--out", pre.out, "policy checkpoint")->required();
  c->add_option("--history", pre.history, "history CSV (default OUT.history.csv)");
  c->add_option("--split", pre.split, "train|val|test|all");

  TrainRewardArgs tr;
  c = app.add_subcommand("train-reward", "train the reward model on annotated triplets");
  add_common(c, tr.common);
  c->add_option("--manifest", tr.manifest)->required();
  c->add_option("--annotations", tr.annotations, "directory of <triplet_id>.json")->required();
  c->add_option("--out", tr.out, "reward checkpoint")->required();
  c->add_option("--history", tr.history, "history CSV (default OUT.history.csv)");
  c->add_option("--backbone", tr.backbone, "checkpoint with backbone.* tensors");
  c->add_option("--split", tr.split, "train|val|test|all");

  EvalRewardArgs er;
  c = app.add_subcommand("eval-reward", "score triplets and render heatmaps and overlays");
  add_common(c, er.common);
  c->add_option("--ckpt", er.ckpt)->required();
  c->add_option("--manifest", er.manifest)->required();
  c->add_option("--report", er.report, "report JSON")->required();
  c->add_option("--out-dir", er.out_dir, "image output directory");
  c->add_option("--split", er.split, "train|val|test|all");

  FinetuneArgs ft;
  c = app.add_subcommand("finetune-grpo", "region-level GRPO fine-tuning of the fusion policy");
  add_common(c, ft.common);
  c->add_option("--policy", ft.policy)->required();
  c->add_option("--reward", ft.reward)->required();
  c->add_option("--manifest", ft.manifest)->required();
  c->add_option("--segmenter", ft.segmenter)->check(CLI::IsMember({"grid", "superpixel"}));
  c->add_option("--regions", ft.regions, "target region count K");
  c->add_option("--out", ft.out, "policy checkpoint")->required();
  c->add_option("--history", ft.history, "history CSV (default OUT.history.csv)");
  c->add_option("--dump-dir", ft.dump_dir, "per-epoch fused sample PNGs");
  c->add_option("--split", ft.split, "train|val|test|all");

  FuseArgs fu;
  c = app.add_subcommand("fuse", "fuse one visible/infrared pair");
  add_common(c, fu.common);
  c->add_option("--ckpt", fu.ckpt)->required();
  c->add_option("--visible", fu.visible)->required();
  c->add_option("--infrared", fu.infrared)->required();
  c->add_option("--out", fu.out)->required();

  EvaluateArgs ev;
  c = app.add_subcommand("evaluate", "reference metrics over a manifest");
  add_common(c, ev.common);
  c->add_option("--manifest", ev.manifest)->required();
  c->add_option("--report", ev.report, "report CSV")->required();
  c->add_option("--split", ev.split, "train|val|test|all");

  ServeArgs sv;
  c = app.add_subcommand("serve", "annotation HTTP service");
  add_common(c, sv.common);
  c->add_option("--manifest", sv.manifest)->required();
  c->add_option("--store", sv.store, "annotation store directory");
  c->add_option("--host", sv.host);
  c->add_option("--port", sv.port);

  ExportOverlaysArgs eo;
  c = app.add_subcommand("export-overlays", "draw predicted artifact circles over fused images");
  add_common(c, eo.common);
  c->add_option("--reward", eo.reward)->required();
  c->add_option("--manifest", eo.manifest)->required();
  c->add_option("--out-dir", eo.out_dir)->required();
  c->add_option("--split", eo.split, "train|val|test|all");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    const auto selected = app.get_subcommands();
    std::cerr << (selected.empty() ? app.help() : selected.front()->help());
    return 1;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "dedup") return cmd_dedup(dedup);
    if (name == "build-manifest") return cmd_build_manifest(bm);
    if (name == "pretrain-fusion") return cmd_pretrain(pre);
    if (name == "train-reward") return cmd_train_reward(tr);
    if (name == "eval-reward") return cmd_eval_reward(er);
    if (name == "finetune-grpo") return cmd_finetune(ft);
    if (name == "fuse") return cmd_fuse(fu);
    if (name == "evaluate") return cmd_evaluate(ev);
    if (name == "serve") return cmd_serve(sv);
    if (name == "export-overlays") return cmd_export_overlays(eo);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace hfusion
