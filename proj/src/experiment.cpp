#include "mimofb/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mimofb/capacity.hpp"

namespace mimofb {

namespace pt = boost::property_tree;

namespace {

constexpr std::pair<Stage, const char*> kStageNames[] = {
    {Stage::kGenerate, "generate"}, {Stage::kFilter, "filter"}, {Stage::kSplit, "split"},
    {Stage::kCodebooks, "codebooks"}, {Stage::kLabel, "label"}, {Stage::kTrain, "train"},
    {Stage::kEvaluate, "evaluate"}, {Stage::kSweep, "sweep"},
};

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) {
    // Accept comma separators as well as whitespace.
    std::stringstream ws(w);
    std::string part;
    while (std::getline(ws, part, ','))
      if (!part.empty()) out.push_back(part);
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  for (const auto& w : words(s)) {
    std::istringstream is(w);
    T v{};
    if (!(is >> v) || !is.eof()) throw ConfigError("bad list element: " + w);
    out.push_back(v);
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("bad boolean: " + s);
}

Link parse_link(const std::string& s) {
  if (s == "ul") return Link::kUplink;
  if (s == "dl") return Link::kDownlink;
  throw ConfigError("link must be ul or dl, got " + s);
}

/// Reads typed values out of one INI section and remembers which keys were
/// consumed, so leftovers can be reported as unknown.
class Section {
 public:
  Section(const pt::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto child = root.get_child_optional(name_)) tree_ = *child;
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (auto v = raw(key)) {
      std::istringstream is(*v);
      T parsed{};
      if (!(is >> parsed) || !(is >> std::ws).eof())
        throw ConfigError("[" + name_ + "] " + key + ": cannot parse '" + *v + "'");
      out = parsed;
    }
  }
  void get_bool(const std::string& key, bool& out) {
    if (auto v = raw(key)) out = parse_bool(*v);
  }
  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (auto v = tree_.get_optional<std::string>(pt::ptree::path_type(key, '\0'))) return *v;
    return std::nullopt;
  }
  void check_unknown() const {
    for (const auto& [key, _] : tree_)
      if (!used_.count(key)) throw ConfigError("unknown key [" + name_ + "] " + key);
  }
  const pt::ptree& tree() const { return tree_; }

 private:
  std::string name_;
  pt::ptree tree_;
  std::set<std::string> used_;
};

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

std::vector<StrategySpec> default_strategies() {
  std::vector<StrategySpec> s;
  for (const char* t : {"uniform-power", "wf-true", "uni-eigsp-true", "cb-true-csi:ul:3",
                        "cb-true-csi:dl:3", "all-train-cb:ul", "cb-ls:dl:3", "cb-omp:dl:3",
                        "wf-ls", "wf-omp"})
    s.push_back(parse_strategy(t));
  return s;
}

std::vector<StrategySpec> default_sweep() {
  std::vector<StrategySpec> s;
  for (const char* t : {"uniform-power", "cb-true-csi:dl:3", "cb-omp:dl:3", "dnn:dl:3"})
    s.push_back(parse_strategy(t));
  return s;
}

}  // namespace

std::string to_string(Stage s) {
  for (const auto& [st, name] : kStageNames)
    if (st == s) return name;
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (const auto& [st, name] : kStageNames)
    if (s == name) return st;
  throw ConfigError("unknown stage: " + s);
}

std::vector<Stage> all_stages() {
  std::vector<Stage> out;
  for (const auto& [st, _] : kStageNames) out.push_back(st);
  return out;
}

StageError::StageError(Stage stage, const std::string& message)
    : Error("stage " + to_string(stage) + ": " + message), stage_(stage) {}

std::uint64_t ExperimentConfig::stage_seed(Stage s) const {
  switch (s) {
    case Stage::kGenerate: return data_seed.value_or(seed);
    case Stage::kSplit: return split_seed.value_or(seed + 1);
    case Stage::kCodebooks: return lloyd_seed.value_or(seed + 2);
    case Stage::kLabel: return label_seed.value_or(seed + 3);
    case Stage::kTrain: return search_seed.value_or(seed + 4);
    case Stage::kEvaluate:
    case Stage::kSweep: return eval_seed.value_or(seed + 5);
    case Stage::kFilter: return seed;
  }
  return seed;
}

void ExperimentConfig::validate() const {
  system.validate();
  lloyd.validate();
  pgd.validate();
  search.validate();
  if (count < 1) throw ConfigError("data count must be >= 1");
  if (snr_lo_db > snr_hi_db) throw ConfigError("snr_lo must not exceed snr_hi");
  for (int m : codebook_bits)
    if (m < 0 || m > 20) throw ConfigError("codebook bits must lie in [0, 20]");
  if (encoder_bits < 0) throw ConfigError("encoder bits must be non-negative");
  for (int n_p : encoder_pilots)
    if (n_p < 1 || n_p > system.n_tx) throw ConfigError("encoder pilots must lie in [1, n_tx]");
  for (int n_p : sweep_pilots)
    if (n_p < 1 || n_p > system.n_tx) throw ConfigError("sweep pilots must lie in [1, n_tx]");
  if (search_budget < 1) throw ConfigError("search budget must be >= 1");
  if (oversampling < 1 || omp_s_max < 1) throw ConfigError("bad OMP settings");
  for (const auto& s : strategies) s.validate();
  for (const auto& s : sweep_strategies) s.validate();
}

ExperimentConfig parse_experiment_config(const std::string& ini_text) {
  pt::ptree root;
  std::istringstream is(ini_text);
  try {
    pt::ini_parser::read_ini(is, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> known{"run", "system", "geometry", "data", "lloyd", "pgd",
                                           "codebook", "encoder", "search", "evaluate", "inputs"};
  for (const auto& [name, _] : root)
    if (!known.count(name)) throw ConfigError("unknown config section [" + name + "]");

  ExperimentConfig c;
  c.strategies = default_strategies();
  c.sweep_strategies = default_sweep();

  Section run(root, "run");
  run.get("seed", c.seed);
  if (auto v = run.raw("stages")) {
    c.stages.clear();
    for (const auto& w : words(*v)) c.stages.push_back(stage_from_string(w));
  }
  run.check_unknown();

  Section sys(root, "system");
  sys.get("n_tx", c.system.n_tx);
  sys.get("n_rx", c.system.n_rx);
  sys.get("n_p", c.system.n_p);
  if (auto v = sys.raw("rho_dbm")) c.system.rho = dbm_to_watt(std::stod(*v));
  if (auto v = sys.raw("sigma_n2_dbm")) c.system.sigma_n2 = dbm_to_watt(std::stod(*v));
  sys.get("rho", c.system.rho);
  sys.get("sigma_n2", c.system.sigma_n2);
  sys.get("f_ul", c.system.f_ul);
  sys.get("f_dl", c.system.f_dl);
  sys.check_unknown();

  Section geo(root, "geometry");
  geo.get("paths_los", c.geometry.paths_los);
  geo.get("paths_nlos", c.geometry.paths_nlos);
  geo.get("p_los", c.geometry.p_los);
  geo.get("max_delay", c.geometry.max_delay);
  geo.get("sector_width", c.geometry.sector_width);
  geo.get("angular_spread", c.geometry.angular_spread);
  geo.get("delay_decay", c.geometry.delay_decay);
  geo.get("los_k_factor", c.geometry.los_k_factor);
  geo.get("path_gain_db_mean", c.geometry.path_gain_db_mean);
  geo.get("path_gain_db_std", c.geometry.path_gain_db_std);
  geo.check_unknown();

  Section data(root, "data");
  data.get("count", c.count);
  data.get("snr_lo_db", c.snr_lo_db);
  data.get("snr_hi_db", c.snr_hi_db);
  if (auto v = data.raw("filter_side")) c.filter_side = parse_link(*v);
  data.get("n_train", c.n_train);
  data.get("n_val", c.n_val);
  std::uint64_t s = 0;
  if (data.raw("seed")) { data.get("seed", s); c.data_seed = s; }
  if (data.raw("split_seed")) { data.get("split_seed", s); c.split_seed = s; }
  data.check_unknown();

  Section lloyd(root, "lloyd");
  lloyd.get("max_iters", c.lloyd.max_lloyd_iters);
  lloyd.get("conv_tol", c.lloyd.conv_tol);
  if (auto v = lloyd.raw("empty_cluster")) {
    if (*v == "respawn") c.lloyd.empty_cluster_policy = EmptyClusterPolicy::kRespawnAtWorstChannel;
    else if (*v == "keep") c.lloyd.empty_cluster_policy = EmptyClusterPolicy::kKeepPrevious;
    else throw ConfigError("[lloyd] empty_cluster must be respawn or keep");
  }
  if (lloyd.raw("seed")) { lloyd.get("seed", s); c.lloyd_seed = s; }
  lloyd.check_unknown();

  Section pgd(root, "pgd");
  pgd.get("max_iters", c.pgd.max_pgd_iters);
  pgd.get("armijo_beta", c.pgd.armijo_beta);
  pgd.get("armijo_sigma", c.pgd.armijo_sigma);
  pgd.get("alpha_init", c.pgd.alpha_init);
  pgd.get("max_backtracks", c.pgd.max_backtracks);
  pgd.get("grad_tol", c.pgd.grad_tol);
  pgd.get("obj_tol", c.pgd.obj_tol);
  pgd.check_unknown();

  Section cb(root, "codebook");
  if (auto v = cb.raw("bits")) c.codebook_bits = parse_list<int>(*v);
  if (auto v = cb.raw("links")) {
    c.codebook_links.clear();
    for (const auto& w : words(*v)) c.codebook_links.push_back(source_from_string(w));
  }
  cb.get_bool("all_train", c.all_train_codebook);
  cb.check_unknown();

  Section enc(root, "encoder");
  if (auto v = enc.raw("links")) {
    c.encoder_links.clear();
    for (const auto& w : words(*v)) c.encoder_links.push_back(source_from_string(w));
  }
  enc.get("bits", c.encoder_bits);
  if (auto v = enc.raw("pilots")) c.encoder_pilots = parse_list<int>(*v);
  enc.get("budget", c.search_budget);
  if (enc.raw("label_seed")) { enc.get("label_seed", s); c.label_seed = s; }
  if (enc.raw("search_seed")) { enc.get("search_seed", s); c.search_seed = s; }
  enc.check_unknown();

  Section srch(root, "search");
  auto& sp = c.search;
  srch.get("conv_depth_min", sp.conv_depth_min);
  srch.get("conv_depth_max", sp.conv_depth_max);
  srch.get("kernels_min", sp.kernels_min);
  srch.get("kernels_max", sp.kernels_max);
  if (auto v = srch.raw("activations")) {
    sp.activations.clear();
    for (const auto& w : words(*v)) sp.activations.push_back(activation_from_string(w));
  }
  srch.get("batch_min", sp.batch_min);
  srch.get("batch_max", sp.batch_max);
  srch.get("lr_min", sp.lr_min);
  srch.get("lr_max", sp.lr_max);
  srch.get("l1_min", sp.l1_min);
  srch.get("l1_max", sp.l1_max);
  srch.get("l2_min", sp.l2_min);
  srch.get("l2_max", sp.l2_max);
  srch.get("decay_min", sp.decay_min);
  srch.get("decay_max", sp.decay_max);
  srch.get("epochs", sp.epochs);
  srch.get("patience", sp.early_stop_patience);
  srch.get_bool("max_pool", sp.max_pool);
  srch.get_bool("batch_norm", sp.batch_norm);
  srch.get_bool("augment_rx_unitary", sp.augment_rx_unitary);
  if (auto v = srch.raw("dense_tail")) sp.dense_tail = parse_list<int>(*v);
  srch.check_unknown();

  Section ev(root, "evaluate");
  if (auto v = ev.raw("strategies")) {
    c.strategies.clear();
    for (const auto& w : words(*v)) c.strategies.push_back(parse_strategy(w));
  }
  if (auto v = ev.raw("sweep_strategies")) {
    c.sweep_strategies.clear();
    for (const auto& w : words(*v)) c.sweep_strategies.push_back(parse_strategy(w));
  }
  if (auto v = ev.raw("sweep_pilots")) c.sweep_pilots = parse_list<int>(*v);
  ev.get("oversampling", c.oversampling);
  ev.get("omp_s_max", c.omp_s_max);
  if (auto v = ev.raw("genie_metric")) {
    if (*v == "error") c.genie_metric = GenieMetric::kChannelError;
    else if (*v == "se") c.genie_metric = GenieMetric::kSpectralEfficiency;
    else throw ConfigError("[evaluate] genie_metric must be error or se");
  }
  if (ev.raw("seed")) { ev.get("seed", s); c.eval_seed = s; }
  ev.check_unknown();

  Section in(root, "inputs");
  for (const auto& [key, value] : in.tree()) c.inputs[key] = value.get_value<std::string>();

  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_experiment_config(ss.str());
}

namespace artifact {
std::string codebook_file(const std::string& key) { return "cb_" + key + ".cbk1"; }
std::string encoder_file(const std::string& key) { return "enc_" + key + ".enc1"; }
}  // namespace artifact

// ---------------------------------------------------------------------------

namespace {

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, std::filesystem::path out) : cfg_(cfg), out_(std::move(out)) {}

  ExperimentResult run() {
    std::vector<Stage> stages = cfg_.stages;
    std::sort(stages.begin(), stages.end());
    stages.erase(std::unique(stages.begin(), stages.end()), stages.end());
    std::error_code ec;
    std::filesystem::create_directories(out_, ec);
    if (ec) throw StageError(stages.empty() ? Stage::kGenerate : stages.front(),
                             "cannot create output directory " + out_.string());
    for (Stage s : stages) {
      try {
        run_stage(s);
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(s, e.what());
      }
      result_.executed.push_back(s);
    }
    return std::move(result_);
  }

 private:
  void run_stage(Stage s) {
    switch (s) {
      case Stage::kGenerate: generate(); break;
      case Stage::kFilter: filter(); break;
      case Stage::kSplit: split(); break;
      case Stage::kCodebooks: codebooks(); break;
      case Stage::kLabel: label(); break;
      case Stage::kTrain: train_encoders(); break;
      case Stage::kEvaluate: evaluate(); break;
      case Stage::kSweep: sweep(); break;
    }
  }

  std::filesystem::path input(const std::string& key, const std::string& default_name) const {
    const auto it = cfg_.inputs.find(key);
    return it != cfg_.inputs.end() ? it->second : out_ / default_name;
  }

  void record(const std::filesystem::path& p) { result_.written.push_back(p); }

  const Dataset& dataset(std::optional<Dataset>& slot, const std::string& key, const char* file) {
    if (!slot) slot = read_cmx1(input(key, file), cfg_.system);
    return *slot;
  }

  void generate() {
    raw_ = generate_paired_dataset(cfg_.system, cfg_.count, cfg_.stage_seed(Stage::kGenerate),
                                   cfg_.geometry);
    write_cmx1(out_ / artifact::kDataset, *raw_);
    record(out_ / artifact::kDataset);
  }

  void filter() {
    const auto& raw = dataset(raw_, "dataset", artifact::kDataset);
    filtered_ = filter_by_snr(raw, cfg_.snr_lo_db, cfg_.snr_hi_db, cfg_.filter_side);
    write_cmx1(out_ / artifact::kFiltered, *filtered_);
    record(out_ / artifact::kFiltered);
  }

  void split() {
    const auto& filtered = dataset(filtered_, "filtered", artifact::kFiltered);
    auto parts = split_dataset(filtered, cfg_.n_train, cfg_.n_val, cfg_.stage_seed(Stage::kSplit));
    train_ = std::move(parts.train);
    val_ = std::move(parts.val);
    test_ = std::move(parts.test);
    for (auto [ds, name] : {std::pair{&train_, artifact::kTrain}, {&val_, artifact::kVal},
                            {&test_, artifact::kTest}}) {
      write_cmx1(out_ / name, **ds);
      record(out_ / name);
    }
  }

  void codebooks() {
    const auto& train = dataset(train_, "train", artifact::kTrain);
    LloydOptions lloyd = cfg_.lloyd;
    lloyd.seed = cfg_.stage_seed(Stage::kCodebooks);
    for (auto src : cfg_.codebook_links) {
      for (int m : cfg_.codebook_bits) {
        auto learned = learn_codebook(train, link_of(src), m, lloyd, cfg_.pgd);
        store_codebook(codebook_key(src, m), std::move(learned.codebook));
      }
      if (cfg_.all_train_codebook)
        store_codebook(codebook_key(src, 0, true), all_train_data_codebook(train, link_of(src)));
    }
  }

  void store_codebook(const std::string& key, Codebook cb) {
    const auto path = out_ / artifact::codebook_file(key);
    write_cbk1(path, cb);
    record(path);
    assets_.codebooks[key] = std::move(cb);
  }

  const Codebook& codebook(const std::string& key) {
    auto it = assets_.codebooks.find(key);
    if (it == assets_.codebooks.end())
      it = assets_.codebooks.emplace(key, read_cbk1(input("codebook." + key, artifact::codebook_file(key)))).first;
    return it->second;
  }

  std::pair<LabeledSet, LabeledSet> labeled(CodebookSource src, int n_p) {
    const auto& cb = codebook(codebook_key(src, cfg_.encoder_bits));
    const auto& train = dataset(train_, "train", artifact::kTrain);
    const auto& val = dataset(val_, "val", artifact::kVal);
    const CMatrix pilots = pilot_matrix(cfg_.system.n_tx, n_p, cfg_.system.rho);
    const auto seed = cfg_.stage_seed(Stage::kLabel);
    // Distinct noise streams for the training and validation observations.
    return {build_labels(train, link_of(src), cb, pilots, cfg_.system.sigma_n2, seed * 2 + 0),
            build_labels(val, link_of(src), cb, pilots, cfg_.system.sigma_n2, seed * 2 + 1)};
  }

  void label() {
    for (auto src : cfg_.encoder_links)
      for (int n_p : cfg_.encoder_pilots) {
        const auto [tr, va] = labeled(src, n_p);
        const auto path = out_ / ("labels_" + encoder_key(src, cfg_.encoder_bits, n_p) + ".csv");
        std::ofstream os(path);
        if (!os) throw ConfigError("cannot open for writing: " + path.string());
        os << "split,index,label\n";
        for (std::size_t i = 0; i < tr.size(); ++i) os << "train," << i << ',' << tr.labels[i] << '\n';
        for (std::size_t i = 0; i < va.size(); ++i) os << "val," << i << ',' << va.labels[i] << '\n';
        record(path);
      }
  }

  void train_encoders() {
    for (auto src : cfg_.encoder_links)
      for (int n_p : cfg_.encoder_pilots) {
        const auto [tr, va] = labeled(src, n_p);
        const auto classes = static_cast<int>(codebook(codebook_key(src, cfg_.encoder_bits)).size());
        const auto key = encoder_key(src, cfg_.encoder_bits, n_p);
        auto res = random_search(cfg_.search, cfg_.search_budget, tr, va, classes,
                                 cfg_.stage_seed(Stage::kTrain) + static_cast<std::uint64_t>(n_p));
        const auto path = out_ / artifact::encoder_file(key);
        save_encoder(path, res.best);
        record(path);
        write_trials(out_ / ("search_" + key + ".csv"), res);
        assets_.encoders[key] = std::move(res.best);
      }
  }

  void write_trials(const std::filesystem::path& path, const SearchResult& res) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    os << "trial,conv_depth,kernels,activation,batch,lr,l1,l2,lr_decay,epochs_run,val_loss,val_accuracy,best\n";
    char buf[512];
    for (std::size_t t = 0; t < res.trials.size(); ++t) {
      const auto& r = res.trials[t];
      std::snprintf(buf, sizeof buf, "%zu,%d,%d,%s,%d,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%d\n", t,
                    r.arch.conv_depth, r.arch.kernels, to_string(r.arch.activation).c_str(),
                    r.cfg.batch_size, r.cfg.learning_rate, r.cfg.l1, r.cfg.l2, r.cfg.lr_decay,
                    r.epochs_run, r.val_loss, r.val_accuracy, t == res.best_trial ? 1 : 0);
      os << buf;
    }
    record(path);
  }

  /// Loads every codebook and encoder the strategies refer to.
  void require_assets(const std::vector<StrategySpec>& specs, const std::vector<int>& pilots) {
    for (const auto& s : specs) {
      if (s.needs_codebook())
        codebook(codebook_key(s.source, s.m_bits, s.kind == StrategyKind::kAllTrainCb));
      if (s.kind == StrategyKind::kDnn)
        for (int n_p : pilots) {
          const auto key = encoder_key(s.source, s.m_bits, n_p);
          if (!assets_.encoders.count(key))
            assets_.encoders.emplace(key, load_encoder(input("encoder." + key, artifact::encoder_file(key))));
        }
    }
  }

  EvalSettings settings() const {
    EvalSettings s;
    s.seed = cfg_.stage_seed(Stage::kEvaluate);
    s.oversampling = cfg_.oversampling;
    s.omp_s_max = cfg_.omp_s_max;
    s.genie_metric = cfg_.genie_metric;
    return s;
  }

  void write_report() {
    const auto path = out_ / artifact::kReport;
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    os << format_report(result_.report);
    if (std::find(result_.written.begin(), result_.written.end(), path) == result_.written.end())
      record(path);
  }

  void evaluate() {
    std::vector<StrategySpec> specs = cfg_.strategies;
    require_assets(specs, {cfg_.system.n_p});
    const auto& test = dataset(test_, "test", artifact::kTest);
    auto sweep = std::move(result_.report.sweep);
    result_.report = evaluate_all(specs, test, assets_, cfg_.system, settings());
    result_.report.sweep = std::move(sweep);
    write_box_csv(out_ / artifact::kBoxCsv, result_.report);
    record(out_ / artifact::kBoxCsv);
    write_report();
  }

  void sweep() {
    require_assets(cfg_.sweep_strategies, cfg_.sweep_pilots);
    const auto& test = dataset(test_, "test", artifact::kTest);
    result_.report.sweep = pilot_sweep(cfg_.sweep_strategies, test, assets_, cfg_.sweep_pilots,
                                       cfg_.system, settings());
    write_sweep_csv(out_ / artifact::kSweepCsv, *result_.report.sweep);
    record(out_ / artifact::kSweepCsv);
    write_report();
  }

  const ExperimentConfig& cfg_;
  std::filesystem::path out_;
  std::optional<Dataset> raw_, filtered_, train_, val_, test_;
  EvalAssets assets_;
  ExperimentResult result_;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  return Pipeline(cfg, out_dir).run();
}

}  // namespace mimofb
