// One PASS/FAIL line per acceptance criterion; exits 1 if any fails.
#include <httplib.h>
#include <torch/torch.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "cli_runs.h"
#include "fixtures.h"
#include "hfusion/annotation.h"
#include "hfusion/checkpoint.h"
#include "hfusion/config.h"
#include "hfusion/data_pipeline.h"
#include "hfusion/errors.h"
#include "hfusion/grpo.h"
#include "hfusion/metrics.h"
#include "hfusion/service.h"
#include "nn_checks.h"
#include "oracles.h"

using namespace hfusion;
using json = nlohmann::ordered_json;

namespace {

// Tolerances and budgets.
constexpr double kAdvSumTol = 1e-9;
constexpr double kAdvStdTol = 1e-6;
constexpr double kAdvHandTol = 1e-5;
constexpr double kAdvSeconds = 1.0;
constexpr double kRatioTol = 1e-9;
constexpr double kGradRelErr = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kMetricTol = 1e-9;
constexpr double kQabfOracleTol = 1e-9;
constexpr double kDedupThreshold = 0.85;
constexpr double kDeskSeconds = 600.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Outcome group_advantages() {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> size(1, 16);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  const double eps = 1e-8;
  double worst_sum = 0.0, worst_std = 0.0;
  const auto start = Clock::now();
  for (int g = 0; g < 1000; ++g) {
    std::vector<double> s(size(rng));
    for (double& x : s) x = score(rng);
    const auto a = grpo::group_advantage(s, eps);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(a.advantages.begin(), a.advantages.end(), 0.0)));
    if (a.std > 0.0) {
      double m = 0.0;
      for (double v : a.advantages) m += v;
      m /= a.advantages.size();
      double var = 0.0;
      for (double v : a.advantages) var += (v - m) * (v - m);
      const double sd = std::sqrt(var / a.advantages.size());
      worst_std = std::max(worst_std, std::abs(sd - a.std / (a.std + eps)));
    }
  }
  const double elapsed = seconds_since(start);
  const auto hand = grpo::group_advantage(std::vector<double>{1, 2, 3}, eps).advantages;
  const bool hand_ok = std::abs(hand[0] + 1.22474) < kAdvHandTol && std::abs(hand[1]) < kAdvHandTol &&
                       std::abs(hand[2] - 1.22474) < kAdvHandTol;
  return {worst_sum <= kAdvSumTol && worst_std <= kAdvStdTol && hand_ok && elapsed < kAdvSeconds,
          "max|sum A|=" + fmt(worst_sum) + " max std dev=" + fmt(worst_std) + " (1,2,3)->(" +
              fmt(hand[0]) + "," + fmt(hand[1]) + "," + fmt(hand[2]) + ") " + fmt(elapsed, 3) + "s"};
}

Outcome clipped_surrogate() {
  grpo::GrpoConfig cfg;
  cfg.eps_clip = 0.2;
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto f = torch::zeros({3, 2, 2}, opts);
  // Hand-computed min(r A, clip(r, 0.8, 1.2) A).
  struct Row {
    double a, r, expected;
  };
  const Row table[] = {
      {1, 0.7, 0.7},   {1, 0.9, 0.9},   {1, 1.0, 1.0},   {1, 1.1, 1.1},   {1, 1.3, 1.2},
      {-1, 0.7, -0.8}, {-1, 0.9, -0.9}, {-1, 1.0, -1.0}, {-1, 1.1, -1.1}, {-1, 1.3, -1.3},
  };
  int mismatches = 0;
  for (const auto& row : table) {
    const auto o = grpo::grpo_objective(torch::tensor({row.r}, opts), torch::tensor({row.a}, opts),
                                        torch::tensor({1.0}, opts), f, f, cfg);
    if (o.surrogate.item<double>() != row.expected) ++mismatches;
    if (grpo::clipped_surrogate_term(row.r, row.a, 0.2) != row.expected) ++mismatches;
  }
  // Region pushed past 1 + eps with a positive advantage: no gradient reaches F.
  auto f_theta = torch::full({3, 4, 4}, 0.8, opts).requires_grad_();
  const auto f_old = torch::full({3, 4, 4}, 0.5, opts);
  const auto masks = torch::ones({1, 4, 4}, opts);
  const auto r = grpo::region_ratios(f_theta, f_old, masks, 1.0);
  grpo::grpo_objective(r, torch::tensor({1.0}, opts), torch::tensor({1.0}, opts), f_theta, f_old, cfg)
      .surrogate.backward();
  const double grad = f_theta.grad().abs().max().item<double>();
  return {mismatches == 0 && grad == 0.0,
          std::to_string(mismatches) + " table mismatches of 20; r=" + fmt(r.item<double>()) +
              " clipped-region max|grad|=" + fmt(grad)};
}

Outcome ratio_bound() {
  std::mt19937_64 rng(77);
  std::bernoulli_distribution coin(0.5);
  int violations = 0;
  for (int t = 0; t < 300; ++t) {
    const Image a = testing::random_image(rng, 12, 12, 3);
    const Image b = testing::random_image(rng, 12, 12, 3);
    Mask m(12, 12);
    for (auto& v : m.data) v = coin(rng);
    m.data[t % 144] = 1;
    if (grpo::region_ratio(a, b, m) < 1.0) ++violations;
    if (grpo::region_ratio(a, a, m) != 1.0) ++violations;
    const auto ta = image_to_tensor(a).to(torch::kFloat64);
    const auto tb = image_to_tensor(b).to(torch::kFloat64);
    grpo::RegionSet rs;
    rs.masks.push_back(m);
    const auto mt = grpo::mask_tensor(rs, torch::kFloat64);
    if (grpo::region_ratios(ta, tb, mt, 1.0)[0].item<double>() < 1.0) ++violations;
    if (grpo::region_ratios(ta, ta, mt, 1.0)[0].item<double>() != 1.0) ++violations;
  }
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const double r = grpo::region_ratios(torch::full({3, 8, 8}, 0.55, opts), torch::full({3, 8, 8}, 0.5, opts),
                                       torch::ones({1, 8, 8}, opts), 1.0)[0]
                       .item<double>();
  return {violations == 0 && std::abs(r - 1.1) <= kRatioTol,
          std::to_string(violations) + " violations over 300 random cases; 0.5->0.55 r=" + fmt(r, 17)};
}

Outcome reward_gradcheck() {
  const auto g = testing::gradcheck_reward_loss(7);
  return {g.max_rel_err < kGradRelErr && g.seconds < kGradSeconds && g.checked > 0,
          std::to_string(g.checked) + " parameters, max rel err " + fmt(g.max_rel_err) + " at " + g.worst +
              ", " + fmt(g.seconds, 3) + "s"};
}

Outcome frozen_backbone() {
  testing::TempDir tmp;
  const auto corpus = testing::make_corpus(tmp / "c", 8, 32, 12);
  const auto manifest = testing::alternate_methods(corpus.manifest);
  const reward::EncoderConfig enc;
  const auto samples = reward::load_reward_samples(manifest, corpus.files.annotations_dir, enc.image_size,
                                                   annotation::HeatmapStyle::kBinary);
  auto model = reward::make_reward_model(enc, 0);
  std::vector<torch::Tensor> before;
  for (const auto& p : model->backbone()->parameters()) before.push_back(p.clone());
  reward::RewardTrainConfig cfg;
  cfg.epochs = 2;
  const auto history = reward::train_reward(model, samples, cfg);
  double max_delta = 0.0;
  const auto after = model->backbone()->parameters();
  for (std::size_t k = 0; k < after.size(); ++k) {
    max_delta = std::max(max_delta, (after[k] - before[k]).abs().max().item<double>());
  }
  return {max_delta == 0.0 && samples.size() == 8 && history.size() == 3,
          std::to_string(samples.size()) + " triplets x 2 epochs, max|delta backbone|=" + fmt(max_delta) +
              ", loss " + fmt(history.front().total) + " -> " + fmt(history.back().total)};
}

Outcome heatmap_raster() {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> pos(0.0, 32.0);
  std::uniform_real_distribution<double> off(-10.0, 10.0);
  std::uniform_int_distribution<int> count(0, 6);
  int mismatched = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<annotation::CircleAnnotation> shapes;
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
      const annotation::Point c{std::floor(pos(rng) * 4) / 4, std::floor(pos(rng) * 4) / 4};
      shapes.push_back({c, {c.x + std::round(off(rng) * 2) / 2 + 0.25, c.y + std::round(off(rng))}, "Artifacts"});
    }
    const auto h = annotation::rasterize_heatmap(shapes, {32, 32});
    if (h.data != testing::disk_oracle(shapes, 32, 32).data) ++mismatched;
  }
  const char* listing = R"({"scores": {"Thermal Retention": 4, "Texture Preservation": 3, "Artifacts": 2,
    "Sharpness": 3, "Overall Score": 3}, "shapes": [
    {"label": "Artifacts", "points": [[390, 420], [430, 420]], "shape_type": "circle"},
    {"label": "Artifacts", "points": [[250, 170], [290, 170]], "shape_type": "circle"}]})";
  const auto rec = annotation::parse_annotation(listing, {480, 640});
  const bool radii = rec.shapes.size() == 2 && rec.shapes[0].radius() == 40.0 && rec.shapes[1].radius() == 40.0;
  return {mismatched == 0 && radii,
          std::to_string(mismatched) + "/200 grids differ from the distance oracle; listing radii " +
              (rec.shapes.size() == 2 ? fmt(rec.shapes[0].radius()) + "," + fmt(rec.shapes[1].radius()) : "?")};
}

Outcome metric_identities() {
  std::mt19937_64 rng(4242);
  double worst_identity = 0.0;
  bool cap_ok = true;
  for (int t = 0; t < 20; ++t) {
    const Plane p = testing::random_plane(rng, 16 + t, 20);
    worst_identity = std::max(worst_identity, std::abs(metrics::ssim(p, p, p) - 1.0));
    worst_identity = std::max(worst_identity, std::abs(metrics::cc(p, p, p) - 1.0));
    cap_ok = cap_ok && metrics::psnr(p, p, p) == 100.0;
  }
  int out_of_range = 0;
  for (int t = 0; t < 500; ++t) {
    const Plane f = testing::random_plane(rng, 16, 16), v = testing::random_plane(rng, 16, 16),
                i = testing::random_plane(rng, 16, 16);
    const double q = metrics::qabf(f, v, i);
    if (!(q >= 0.0 && q <= 1.0)) ++out_of_range;
  }
  double worst_oracle = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Plane f = testing::random_plane(rng, 8, 8), v = testing::random_plane(rng, 8, 8),
                i = testing::random_plane(rng, 8, 8);
    worst_oracle = std::max(worst_oracle, std::abs(metrics::qabf(f, v, i) - testing::qabf_oracle(f, v, i)));
  }
  return {worst_identity <= kMetricTol && cap_ok && out_of_range == 0 && worst_oracle <= kQabfOracleTol,
          "max|SSIM/CC-1|=" + fmt(worst_identity) + " cap " + (cap_ok ? "ok" : "wrong") + ", qabf out of [0,1]: " +
              std::to_string(out_of_range) + "/500, max|qabf-oracle| on 8x8=" + fmt(worst_oracle)};
}

data::EmbeddingVector normalized(const std::string& id, std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return {id, v, true};
}

Outcome dedup_recovery() {
  std::mt19937_64 rng(555);
  std::normal_distribution<double> g(0.0, 1.0);
  const int dim = 64;
  std::vector<data::EmbeddingVector> e;
  std::set<std::set<std::string>> planted;
  int next = 0;
  auto id = [&] {
    std::ostringstream s;
    s << "v" << std::setw(2) << std::setfill('0') << next++;
    return s.str();
  };
  for (int size : {3, 4, 5}) {
    std::vector<double> base(dim);
    for (double& x : base) x = g(rng);
    std::set<std::string> group;
    for (int k = 0; k < size; ++k) {
      std::vector<double> v = base;
      for (double& x : v) x += 0.05 * g(rng);
      e.push_back(normalized(id(), v));
      group.insert(e.back().pair_id);
    }
    planted.insert(group);
  }
  while (e.size() < 30) {
    std::vector<double> v(dim);
    for (double& x : v) x = g(rng);
    e.push_back(normalized(id(), v));
    planted.insert({e.back().pair_id});
  }
  std::shuffle(e.begin(), e.end(), rng);
  const auto clusters = data::dedup_cluster(e, kDedupThreshold);
  const auto found = testing::as_sets(clusters);
  const bool exact = found == planted && found == testing::closure_oracle(e, kDedupThreshold);

  // a.b = b.c = 0.9 and a.c = cos(2 acos 0.9) = 0.62 < 0.85
  const double t = std::acos(0.9);
  const std::vector<data::EmbeddingVector> chain = {
      {"a", {1.0, 0.0}, true}, {"b", {std::cos(t), std::sin(t)}, true}, {"c", {std::cos(2 * t), std::sin(2 * t)}, true}};
  const auto chained = data::dedup_cluster(chain, kDedupThreshold);
  const bool chain_ok = chained.size() == 1 && chained[0].member_ids.size() == 3;
  return {exact && chain_ok, std::to_string(clusters.size()) + " clusters (planted " + std::to_string(planted.size()) +
                                 "), partition " + (exact ? "exact" : "wrong") + "; chain a.c=" +
                                 fmt(std::cos(2 * t), 4) + " -> " + std::to_string(chained.size()) + " cluster(s)"};
}

Outcome desk_run() {
  const auto start = Clock::now();
  testing::TempDir tmp;
  const auto corpus = testing::make_corpus(tmp / "c", 8, 32, 2024);
  const RunConfig cfg;
  const auto pairs = policy::load_source_pairs(corpus.manifest);

  auto pol = policy::make_policy(cfg.policy_arch(), cfg.seed());
  const auto pre = policy::pretrain_supervised(pol, pairs, cfg.pretrain());

  const auto reward_manifest = testing::alternate_methods(corpus.manifest);
  const auto enc = cfg.encoder();
  const auto samples = reward::load_reward_samples(reward_manifest, corpus.files.annotations_dir, enc.image_size,
                                                   cfg.reward_train().heatmap_style);
  auto model = reward::make_reward_model(enc, cfg.seed());
  const auto rh = reward::train_reward(model, samples, cfg.reward_train());

  auto gcfg = cfg.grpo();
  gcfg.epochs = 20;
  gcfg.regions = 4;
  const grpo::GridSegmenter grid;
  auto trainable_copy = [&] {
    auto p = policy::clone_reference(pol);
    for (auto& t : p.net->parameters()) t.set_requires_grad(true);
    p.role = policy::PolicyRole::kTrainable;
    return p;
  };
  auto tuned = trainable_copy();
  const auto run = grpo::finetune_grpo(tuned, model, pairs, gcfg, grid);
  const double r0 = run.history.front().mean_reward;
  const double rN = run.history.back().mean_reward;

  auto one_epoch_drift = [&](double beta) {
    auto p = trainable_copy();
    auto c = gcfg;
    c.epochs = 1;
    c.beta = beta;
    grpo::finetune_grpo(p, model, pairs, c, grid);
    return policy::parameter_drift(p, pol);
  };
  const double drift_anchored = one_epoch_drift(1e6);
  const double drift_default = one_epoch_drift(0.1);
  const double elapsed = seconds_since(start);
  return {rN >= r0 && drift_anchored < drift_default && elapsed < kDeskSeconds,
          "pretrain loss " + fmt(pre.front().loss) + " -> " + fmt(pre.back().loss) + ", reward loss " +
              fmt(rh.front().total) + " -> " + fmt(rh.back().total) + ", mean reward epoch 0 " + fmt(r0, 8) +
              " -> epoch 20 " + fmt(rN, 8) + ", 1-epoch drift beta=1e6 " + fmt(drift_anchored) + " vs beta=0.1 " +
              fmt(drift_default) + ", " + fmt(elapsed, 4) + "s"};
}

Outcome determinism() {
  testing::TempDir tmp;
  const auto corpus = testing::make_corpus(tmp / "c", 8, 32, 99);
  const auto cfg = testing::desk_config(3);
  const auto a = testing::run_training_commands(tmp / "run1", corpus, cfg);
  const auto b = testing::run_training_commands(tmp / "run2", corpus, cfg);
  bool ok = a.exit_pretrain == 0 && a.exit_reward == 0 && a.exit_finetune == 0 && b.exit_pretrain == 0 &&
            b.exit_reward == 0 && b.exit_finetune == 0;
  std::string detail;
  for (const auto& [name, digest] : a.history_digests) {
    const bool same = !digest.empty() && digest == b.history_digests.at(name);
    ok = ok && same;
    detail += name + (same ? " identical" : " DIFFERS") + "; ";
  }
  return {ok, detail + "digest " + a.history_digests.at("finetune-grpo").substr(0, 16)};
}

Outcome annotation_service() {
  testing::TempDir tmp;
  const auto corpus = testing::make_corpus(tmp / "c", 6, 16, 5);
  service::AnnotationStore store(tmp / "store", corpus.manifest);
  service::AnnotationServer server(store);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  httplib::Client client("127.0.0.1", port);

  json doc = json::parse(R"({"scores": {"Thermal Retention": 4, "Texture Preservation": 3, "Artifacts": 2,
    "Sharpness": 3, "Overall Score": 3}, "shapes": [{"label": "Artifacts", "points": [[4, 4], [7, 4]],
    "shape_type": "circle"}]})");
  json bad = doc;
  bad["scores"]["Texture Preservation"] = 9;
  const auto& first = corpus.manifest.triplets.front().triplet_id;
  auto res = client.Post("/tasks/" + first + "/annotation", bad.dump(), "application/json");
  const bool rejects = res && res->status == 400 && res->body.find("Texture Preservation") != std::string::npos;

  int races_ok = 0;
  const int races = static_cast<int>(corpus.manifest.triplets.size());
  for (const auto& t : corpus.manifest.triplets) {
    std::atomic<int> ready{0};
    int codes[2] = {0, 0};
    auto post = [&](int k) {
      httplib::Client c("127.0.0.1", port);
      ready.fetch_add(1);
      while (ready.load() < 2) std::this_thread::yield();
      auto r = c.Post("/tasks/" + t.triplet_id + "/annotation", doc.dump(), "application/json");
      codes[k] = r ? r->status : -1;
    };
    std::thread t0(post, 0), t1(post, 1);
    t0.join();
    t1.join();
    if (std::min(codes[0], codes[1]) == 200 && std::max(codes[0], codes[1]) == 409) ++races_ok;
  }
  const auto& second = corpus.manifest.triplets.at(1).triplet_id;
  client.Post("/tasks/" + first + "/review", R"({"action":"claim","reviewer":"r"})", "application/json");
  client.Post("/tasks/" + first + "/review", R"({"action":"reject"})", "application/json");
  client.Post("/tasks/" + second + "/review", R"({"action":"accept","reviewer":"r"})", "application/json");
  server.stop();
  const bool replay = service::replay_events(store.event_log(), corpus.manifest) == store.snapshot();
  return {rejects && races_ok == races && replay,
          std::string("schema violation -> ") + (res ? std::to_string(res->status) : "no response") +
              (rejects ? " naming the field" : "") + "; races " + std::to_string(races_ok) + "/" +
              std::to_string(races) + " with one 200 and one 409; replay " + (replay ? "matches" : "DIFFERS")};
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"group-advantage", group_advantages},
      {"clipped-surrogate", clipped_surrogate},
      {"ratio-bound", ratio_bound},
      {"reward-gradcheck", reward_gradcheck},
      {"frozen-backbone", frozen_backbone},
      {"heatmap-raster", heatmap_raster},
      {"metric-identities", metric_identities},
      {"dedup-recovery", dedup_recovery},
      {"desk-run", desk_run},
      {"determinism", determinism},
      {"annotation-service", annotation_service},
  };
  int failures = 0;
  for (const auto& [name, check] : checks) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (checks.size() - failures) << "/" << checks.size() << " passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
