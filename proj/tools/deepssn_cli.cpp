// deepssn: pipeline driver (ingest, synthesize, augment, mine, train, index,
// eval, query, serve).
//
// Exit codes: 0 success, 2 validation failure, 3 missing artifact.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepssn/deepssn.hpp"
#include "deepssn/http_server.hpp"

namespace {

using namespace deepssn;
using nlohmann::json;

constexpr int kExitValidation = 2;
constexpr int kExitMissing = 3;

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ValidationError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

MiningStrategy parse_strategy(const std::string& s) {
  if (s == "hard") return MiningStrategy::hard;
  if (s == "random") return MiningStrategy::random;
  throw ValidationError("unknown mining strategy '" + s + "' (hard|random)");
}

nn::LossKind parse_loss(const std::string& s) {
  if (s == "triplet") return nn::LossKind::triplet;
  if (s == "cross_entropy") return nn::LossKind::cross_entropy;
  throw ValidationError("unknown loss '" + s + "' (triplet|cross_entropy)");
}

nn::PoolingMode parse_pooling(const std::string& s) {
  if (s == "spp") return nn::PoolingMode::spp;
  if (s == "single_max") return nn::PoolingMode::single_max;
  throw ValidationError("unknown pooling '" + s + "' (spp|single_max)");
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  write_file(path, text);
}

// ---- ingest -----------------------------------------------------------------

struct IngestArgs {
  std::string input, output;
  double merge_radius = 5.0;
  double extent = 400.0;
};

// Raw records: {"scene_id", "label", "origin": [x, y], "sources": [[objects...], ...]}
// (or a single "objects" list) with coordinates in a planar metric frame.
int run_ingest(const IngestArgs& a) {
  std::ifstream in(a.input);
  if (!in) throw MissingArtifact("cannot open '" + a.input + "'");
  std::vector<SpatialScene> scenes;
  std::string line;
  std::size_t lineno = 0, rejected = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = a.input + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!j.contains("scene_id")) throw ValidationError(where + ": missing 'scene_id'");
    SpatialScene s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.label = j.value("label", 0);
    s.extent_m = a.extent;
    Point origin{0.0, 0.0};
    if (j.contains("origin")) origin = coords_from_json(json::array({j.at("origin")}), where).front();
    std::vector<json> sources;
    if (j.contains("sources"))
      for (const json& src : j.at("sources")) sources.push_back(src);
    else if (j.contains("objects"))
      sources.push_back(j.at("objects"));
    std::vector<GeoObject> merged;
    int serial = 0;
    for (const json& src : sources) {
      std::vector<GeoObject> objs;
      for (const json& oj : src) {
        try {
          objs.push_back(object_from_json(oj, s.scene_id + ":" + std::to_string(serial++)));
        } catch (const std::exception& e) {
          std::cerr << where << ": rejected object: " << e.what() << "\n";
          ++rejected;
        }
      }
      UnifyResult u = unify_coordinates(objs, origin, a.extent);
      for (const std::string& d : u.diagnostics) std::cerr << where << ": " << d << "\n";
      rejected += u.diagnostics.size();
      merged = merge_sources(merged, u.objects, a.merge_radius);
    }
    s.objects = std::move(merged);
    scenes.push_back(std::move(s));
  }
  write_corpus(a.output, scenes);
  std::cerr << "ingested " << scenes.size() << " scenes, rejected " << rejected << " objects\n";
  return 0;
}

// ---- training helpers --------------------------------------------------------

struct ModelArgs {
  std::string preset = "desk";
  int epochs = -1;
  int batch = -1;
  double lr = -1.0;
  double margin = 0.2;
  std::uint64_t seed = 0;
  std::string loss = "triplet";
  std::string mining = "hard";
  int k = -1;
  int top_m = 8;
  int embed_dim = -1;
  std::string kernels;
  std::string pooling = "spp";
};

struct Plan {
  nn::NetConfig net;
  nn::TrainConfig train;
  MiningConfig mining;
};

Plan make_plan(const ModelArgs& m) {
  Plan p;
  if (m.preset == "desk") {
    const DeskProtocol desk;
    p.net = desk.net;
    p.train = desk.train;
    p.mining = desk.mining;
  } else if (m.preset == "default") {
    p.net = nn::NetConfig::reference();
  } else {
    throw ValidationError("unknown preset '" + m.preset + "' (desk|default)");
  }
  if (m.epochs >= 0) p.train.epochs = m.epochs;
  if (m.batch > 0) p.train.batch_size = m.batch;
  if (m.lr > 0) p.train.learning_rate = m.lr;
  p.train.margin = m.margin;
  p.train.seed = m.seed;
  p.train.loss = parse_loss(m.loss);
  p.mining.strategy = parse_strategy(m.mining);
  p.mining.seed = m.seed;
  if (m.k > 0) p.mining.k_negatives = m.k;
  p.mining.top_m_coarse = m.top_m;
  if (m.embed_dim > 0) p.net.embed_dim = m.embed_dim;
  if (!m.kernels.empty()) {
    const auto ks = parse_int_list(m.kernels);
    if (ks.size() != p.net.conv.size()) throw ValidationError("--kernels needs one size per conv stage");
    for (std::size_t i = 0; i < ks.size(); ++i) p.net.conv[i].kernel = ks[i];
  }
  p.net.pooling = parse_pooling(m.pooling);
  p.net.margin = p.train.margin;
  p.net.validate();
  p.train.validate();
  p.mining.validate();
  return p;
}

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--preset", m.preset, "desk | default")->capture_default_str();
  cmd->add_option("--epochs", m.epochs, "Override the preset's epoch count");
  cmd->add_option("--batch", m.batch, "Triplets (or samples) per SGD step");
  cmd->add_option("--lr", m.lr, "Learning rate");
  cmd->add_option("--margin", m.margin, "Triplet margin")->capture_default_str();
  cmd->add_option("--seed", m.seed, "Seed for init, dropout, shuffling and random mining")->capture_default_str();
  cmd->add_option("--loss", m.loss, "triplet | cross_entropy")->capture_default_str();
  cmd->add_option("--mining", m.mining, "hard | random")->capture_default_str();
  cmd->add_option("--k", m.k, "Negatives per anchor");
  cmd->add_option("--top-m", m.top_m, "Coarse QCN candidates per anchor")->capture_default_str();
  cmd->add_option("--embed-dim", m.embed_dim, "Embedding dimension");
  cmd->add_option("--kernels", m.kernels, "Conv kernel sizes, e.g. 11,7,5");
  cmd->add_option("--pooling", m.pooling, "spp | single_max")->capture_default_str();
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string preset;
  std::string model, index, queries, output = "-";
  int epochs = -1;
  std::uint64_t seed = 1;
  int scenes = 64;
  bool ablation = false;
  int ablation_epochs = -1;
};

int run_eval(const EvalArgs& a) {
  json report;
  if (!a.model.empty() || !a.index.empty()) {
    // Evaluate existing artifacts: each query's truth is the indexed scene
    // sharing its label.
    if (a.model.empty() || a.index.empty() || a.queries.empty())
      throw ValidationError("eval on artifacts needs --model, --index and --queries");
    const auto net = nn::load_checkpoint<float>(a.model);
    const EmbeddingIndex index = load_index(a.index);
    std::map<int, std::string> by_label;
    for (const IndexEntry& e : index.entries()) by_label.emplace(e.label, e.scene_id);
    std::vector<std::size_t> ranks;
    std::vector<double> sparsity;
    for (const SpatialScene& s : read_corpus(a.queries)) {
      auto truth = by_label.find(s.label);
      if (truth == by_label.end()) throw ValidationError("query '" + s.scene_id + "' has no indexed scene with its label");
      const SceneTensor t = rasterize(s);
      const RankedResult r = query(index, net.embed(t), static_cast<int>(index.size()), s.scene_id);
      ranks.push_back(*rank_of(r, truth->second));
      sparsity.push_back(t.sparsity());
    }
    report = to_json(retrieval_metrics(ranks));
    if (sparsity.size() >= 4) report["sparsity_bins"] = to_json(bin_rank_stats(sparsity_bins(sparsity), ranks, sparsity));
    report["random_ranking_mrr_expected"] = random_ranking_mrr(index.size());
  } else {
    if (a.preset != "desk") throw ValidationError("eval needs --preset desk or --model/--index/--queries");
    DeskProtocol p = DeskProtocol{}.with_seed(a.seed);
    p.corpus.scenes = a.scenes;
    if (a.epochs >= 0) p.train.epochs = a.epochs;
    const DeskData d = prepare_desk_data(p);
    std::cerr << "desk corpus: " << d.train.size() << " training scenes, " << d.queries.size() << " held-out queries\n";
    const DeskOutcome o = run_desk(p, d, [](const nn::EpochLog& e) { std::cerr << nn::format_epoch_log(e) << "\n"; });
    report = to_json(o);
    report["preset"] = "desk";
    if (a.ablation) {
      DeskProtocol base = p;
      if (a.ablation_epochs >= 0) base.train.epochs = a.ablation_epochs;
      json grid = json::array();
      for (const AblationVariant& v : ablation_grid(base)) {
        std::cerr << "ablation " << v.name << "\n";
        const DeskOutcome r = run_desk(v.protocol, d);
        json row = to_json(r.heldout);
        row["variant"] = v.name;
        row["ndcg"] = r.ndcg;
        row["tau"] = r.tau;
        row["train_seconds"] = r.train_seconds;
        grid.push_back(std::move(row));
      }
      report["ablation"] = std::move(grid);
    }
  }
  write_text(a.output, report.dump(2) + "\n");
  return 0;
}

// ---- serve ------------------------------------------------------------------

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

struct ServeArgs {
  std::string listen = "127.0.0.1:8080";
  std::string model, index, corpus, feedback_log = "feedback.jsonl";
};

int run_serve(const ServeArgs& a) {
  const auto colon = a.listen.rfind(':');
  if (colon == std::string::npos) throw ValidationError("--listen must be host:port");
  const std::string host = a.listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(a.listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("--listen must be host:port");
  }
  auto loader = [a] { return load_snapshot(a.model, a.index, a.corpus); };
  SearchService service(loader(), a.feedback_log);
  httplib::Server server;
  mount_routes(server, service, loader);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving " << service.snapshot()->index.size() << " scenes on " << host << ":" << port << "\n";
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + a.listen);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial scene similarity search: pipeline and query service"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Unify raw multi-source scenes into a corpus file");
  c_ingest->add_option("--input", ingest.input, "Raw scene records (JSON lines)")->required();
  c_ingest->add_option("--output", ingest.output, "Corpus file to write")->required();
  c_ingest->add_option("--merge-radius", ingest.merge_radius, "Same-layer point dedupe radius, meters")->capture_default_str();
  c_ingest->add_option("--extent", ingest.extent, "Scene side length, meters")->capture_default_str();

  SyntheticConfig synth;
  std::string synth_out;
  auto* c_synth = app.add_subcommand("generate-synthetic", "Write a seeded synthetic corpus");
  c_synth->add_option("--scenes", synth.scenes, "Number of scenes")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  c_synth->add_option("--output", synth_out, "Corpus file to write")->required();

  std::string aug_in, aug_out, aug_rules;
  int aug_factor = 20;
  std::uint64_t aug_seed = 0;
  bool aug_originals = false;
  auto* c_aug = app.add_subcommand("augment", "Expand a corpus with perturbed variants");
  c_aug->add_option("--input", aug_in, "Corpus file")->required();
  c_aug->add_option("--output", aug_out, "Augmented corpus file")->required();
  c_aug->add_option("--factor", aug_factor, "Variants per scene")->capture_default_str();
  c_aug->add_option("--seed", aug_seed, "Augmentation seed")->capture_default_str();
  c_aug->add_option("--rules", aug_rules, "Rule file overriding the built-in table");
  c_aug->add_flag("--include-originals", aug_originals, "Also write the input scenes");

  std::string mine_corpus, mine_out, mine_model;
  MiningConfig mine_cfg;
  std::string mine_strategy = "hard";
  std::uint64_t mine_round = 0;
  auto* c_mine = app.add_subcommand("mine", "Write training triplets");
  c_mine->add_option("--corpus", mine_corpus, "Labelled corpus file")->required();
  c_mine->add_option("--output", mine_out, "Triplet file (TSV of ids)")->required();
  c_mine->add_option("--k", mine_cfg.k_negatives, "Negatives per anchor")->capture_default_str();
  c_mine->add_option("--top-m", mine_cfg.top_m_coarse, "Coarse QCN candidates")->capture_default_str();
  c_mine->add_option("--strategy", mine_strategy, "hard | random")->capture_default_str();
  c_mine->add_option("--seed", mine_cfg.seed, "Seed for random mining")->capture_default_str();
  c_mine->add_option("--round", mine_round, "Mining round (varies the random stream)")->capture_default_str();
  c_mine->add_option("--model", mine_model, "Checkpoint whose embeddings pick hard positives");

  std::string train_corpus, train_out, train_log;
  ModelArgs train_args;
  auto* c_train = app.add_subcommand("train", "Train the embedding network");
  c_train->add_option("--corpus", train_corpus, "Labelled corpus file")->required();
  c_train->add_option("--output", train_out, "Checkpoint to write")->required();
  c_train->add_option("--log", train_log, "Loss log (epoch, mean loss, triplets, seconds)");
  add_model_options(c_train, train_args);

  std::string index_corpus, index_model, index_out;
  auto* c_index = app.add_subcommand("index", "Embed a corpus into an index file");
  c_index->add_option("--corpus", index_corpus, "Corpus file")->required();
  c_index->add_option("--model", index_model, "Checkpoint")->required();
  c_index->add_option("--output", index_out, "Index file to write")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate retrieval (desk protocol or existing artifacts)");
  c_eval->add_option("--preset", eval.preset, "desk: run the desk-scale protocol end to end");
  c_eval->add_option("--model", eval.model, "Checkpoint to evaluate");
  c_eval->add_option("--index", eval.index, "Index to evaluate");
  c_eval->add_option("--queries", eval.queries, "Query corpus; truth is the indexed scene with the same label");
  c_eval->add_option("--output", eval.output, "Report file ('-' for stdout)")->capture_default_str();
  c_eval->add_option("--epochs", eval.epochs, "Override the desk epoch count");
  c_eval->add_option("--seed", eval.seed, "Training seed")->capture_default_str();
  c_eval->add_option("--scenes", eval.scenes, "Desk corpus size")->capture_default_str();
  c_eval->add_flag("--ablation", eval.ablation, "Also run the ablation grid");
  c_eval->add_option("--ablation-epochs", eval.ablation_epochs, "Epochs per ablation run");

  std::string q_model, q_index, q_sketch;
  int q_k = kDefaultPageSize;
  auto* c_query = app.add_subcommand("query", "Rank indexed scenes against a sketch document");
  c_query->add_option("--model", q_model, "Checkpoint")->required();
  c_query->add_option("--index", q_index, "Index file")->required();
  c_query->add_option("--sketch", q_sketch, "Sketch document (JSON)")->required();
  c_query->add_option("--k", q_k, "Results to return")->capture_default_str();

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP query service");
  c_serve->add_option("--listen", serve.listen, "host:port")->envname("DEEPSSN_LISTEN")->capture_default_str();
  c_serve->add_option("--model", serve.model, "Checkpoint")->envname("DEEPSSN_MODEL")->required();
  c_serve->add_option("--index", serve.index, "Index file")->envname("DEEPSSN_INDEX")->required();
  c_serve->add_option("--corpus", serve.corpus, "Corpus backing /scenes")->envname("DEEPSSN_CORPUS")->required();
  c_serve->add_option("--feedback-log", serve.feedback_log, "Annotation log")->envname("DEEPSSN_FEEDBACK_LOG")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*c_ingest) return run_ingest(ingest);

    if (*c_synth) {
      write_corpus(synth_out, generate_synthetic(synth));
      return 0;
    }

    if (*c_aug) {
      std::vector<SpatialScene> scenes = read_corpus(aug_in);
      AugmentConfig cfg = default_augment_config(aug_seed, aug_factor);
      if (!aug_rules.empty()) {
        std::ifstream in(aug_rules);
        if (!in) throw MissingArtifact("cannot open rule file '" + aug_rules + "'");
        cfg = parse_augment_config(in);
        if (c_aug->count("--factor")) cfg.factor = aug_factor;
        if (c_aug->count("--seed")) cfg.seed = aug_seed;
      }
      std::vector<SpatialScene> out = aug_originals ? scenes : std::vector<SpatialScene>{};
      for (SpatialScene& s : augment_corpus(scenes, cfg)) out.push_back(std::move(s));
      write_corpus(aug_out, out);
      std::cerr << "wrote " << out.size() << " scenes\n";
      return 0;
    }

    if (*c_mine) {
      const std::vector<SpatialScene> scenes = read_corpus(mine_corpus);
      mine_cfg.strategy = parse_strategy(mine_strategy);
      const MiningCorpus corpus(scenes, mine_cfg.near_threshold_m);
      EmbeddingTable emb;
      if (!mine_model.empty()) emb = nn::embed_all(nn::load_checkpoint<float>(mine_model), rasterize_all(scenes));
      const auto triplets = build_triplets(corpus, mine_cfg, emb.empty() ? nullptr : &emb, mine_round);
      write_text(mine_out, format_triplets(corpus, triplets));
      std::cerr << "wrote " << triplets.size() << " triplets\n";
      return 0;
    }

    if (*c_train) {
      const Plan plan = make_plan(train_args);
      const std::vector<SpatialScene> scenes = read_corpus(train_corpus);
      const std::vector<SceneTensor> tensors = rasterize_all(scenes);
      nn::NetConfig cfg = plan.net;
      if (plan.train.loss == nn::LossKind::cross_entropy) cfg.num_classes = static_cast<int>(nn::class_index(scenes).size());
      nn::Network<float> net(cfg, plan.train.seed);
      std::ofstream log_file;
      if (!train_log.empty()) {
        log_file.open(train_log, std::ios::trunc);
        if (!log_file) throw std::runtime_error("cannot write '" + train_log + "'");
      }
      auto on_epoch = [&](const nn::EpochLog& e) {
        const std::string line = nn::format_epoch_log(e);
        std::cerr << line << "\n";
        if (log_file) log_file << line << "\n" << std::flush;
      };
      if (plan.train.loss == nn::LossKind::cross_entropy) {
        nn::train_cross_entropy(net, scenes, tensors, plan.train, on_epoch);
      } else {
        const MiningCorpus corpus(scenes, plan.mining.near_threshold_m);
        nn::train_triplet(net, corpus, tensors, plan.train, plan.mining, on_epoch);
      }
      nn::save_checkpoint(train_out, net);
      return 0;
    }

    if (*c_index) {
      const std::string bytes = read_file(index_model);
      const auto net = nn::decode_checkpoint<float>(bytes);
      const std::vector<SpatialScene> scenes = read_corpus(index_corpus);
      save_index(index_out, build_index(net, scenes, model_fingerprint(bytes)));
      std::cerr << "indexed " << scenes.size() << " scenes\n";
      return 0;
    }

    if (*c_eval) return run_eval(eval);

    if (*c_query) {
      const std::string bytes = read_file(q_model);
      const auto net = nn::decode_checkpoint<float>(bytes);
      const EmbeddingIndex index = load_index(q_index);
      if (index.fingerprint() != model_fingerprint(bytes))
        throw ValidationError("index was built from a different checkpoint");
      std::ifstream in(q_sketch);
      if (!in) throw MissingArtifact("cannot open sketch '" + q_sketch + "'");
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ValidationError(std::string("sketch: ") + e.what());
      }
      const SketchDocument sketch = sketch_from_json(j);
      if (sketch.icons.empty()) throw ValidationError("empty sketch");
      const RankedResult r = query(index, net.embed(sketch_to_tensor(sketch)), q_k, sketch.sketch_id);
      json results = json::array();
      for (const RankedItem& it : r.items) results.push_back({{"scene_id", it.scene_id}, {"distance", it.distance}});
      std::cout << json{{"query_id", r.query_id}, {"results", results}}.dump(2) << "\n";
      return 0;
    }

    if (*c_serve) return run_serve(serve);
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
