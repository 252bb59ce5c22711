#include "cyclemap/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "cyclemap/error.hpp"
#include "cyclemap/parallel.hpp"
#include "binary_io.hpp"

namespace cyclemap {
namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw UsageError("bad value for " + key + ": '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw UsageError("bad value for " + key + ": '" + text + "' (expected true/false)");
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (is.fail()) throw DataError("corrupt RNG state in checkpoint");
  return rng;
}

LossWeights phase_weights(const TrainConfig& c, bool coupling_phase) {
  LossWeights w;
  if (coupling_phase) {
    w.coupling = c.coupling_weight;
    return w;
  }
  switch (c.objective) {
    case Objective::Cyclic: w.cyclic = 1.0; break;
    case Objective::Isometric: w.isometric = 1.0; break;
    case Objective::Supervised: w.supervised = 1.0; break;
  }
  return w;
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::Cyclic: return "cyclic";
    case Objective::Isometric: return "isometric";
    case Objective::Supervised: return "supervised";
  }
  return "?";
}

Objective objective_from_name(const std::string& name) {
  if (name == "cyclic") return Objective::Cyclic;
  if (name == "isometric") return Objective::Isometric;
  if (name == "supervised") return Objective::Supervised;
  throw UsageError("unknown objective '" + name + "' (expected cyclic, isometric or supervised)");
}

int TrainConfig::resolved_steps_per_epoch(std::size_t n_shapes) const {
  if (steps_per_epoch > 0) return steps_per_epoch;
  if (one_shot) return 100;
  const std::size_t pairs = self_pairs ? n_shapes * n_shapes : n_shapes * (n_shapes - 1);
  const std::size_t b = static_cast<std::size_t>(batch_size);
  return static_cast<int>(std::max<std::size_t>(1, (pairs + b - 1) / b));
}

int TrainConfig::resolved_coupling_epochs() const {
  if (coupling_epochs >= 0) return coupling_epochs;
  return one_shot ? 2 : 1;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (steps_per_epoch < 0) throw UsageError("steps_per_epoch must be >= 0");
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");
  if (!(clip_norm > 0.0)) throw UsageError("clip_norm must be positive");
  if (k < 1 || m < 1 || s < 1 || L < 0) throw UsageError("k, m, s must be >= 1 and L >= 0");
  if (!(reg >= 0.0)) throw UsageError("reg must be >= 0");
  if (coupling_epochs < -1) throw UsageError("coupling_epochs must be >= 0 (or -1 for the default)");
  if (!(coupling_weight >= 0.0)) throw UsageError("coupling_weight must be >= 0");
}

std::string TrainConfig::encode() const {
  // std::map keeps the keys sorted, which makes the encoding canonical.
  std::map<std::string, std::string> kv{
      {"L", std::to_string(L)},
      {"batch_size", std::to_string(batch_size)},
      {"beta1", fmt_double(beta1)},
      {"beta2", fmt_double(beta2)},
      {"clip_norm", fmt_double(clip_norm)},
      {"coupling_epochs", std::to_string(coupling_epochs)},
      {"coupling_weight", fmt_double(coupling_weight)},
      {"epochs", std::to_string(epochs)},
      {"epsilon", fmt_double(epsilon)},
      {"k", std::to_string(k)},
      {"learning_rate", fmt_double(learning_rate)},
      {"m", std::to_string(m)},
      {"objective", objective_name(objective)},
      {"one_shot", one_shot ? "true" : "false"},
      {"reg", fmt_double(reg)},
      {"s", std::to_string(s)},
      {"seed", std::to_string(seed)},
      {"self_pairs", self_pairs ? "true" : "false"},
      {"steps_per_epoch", std::to_string(steps_per_epoch)},
  };
  std::string out;
  for (const auto& [key, value] : kv) out += key + "=" + value + "\n";
  return out;
}

TrainConfig TrainConfig::decode(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line without '=': '" + line + "'");
    c.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return c;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "L") L = parse_number<int>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "beta1") beta1 = parse_number<double>(key, value);
  else if (key == "beta2") beta2 = parse_number<double>(key, value);
  else if (key == "clip_norm") clip_norm = parse_number<double>(key, value);
  else if (key == "coupling_epochs") coupling_epochs = parse_number<int>(key, value);
  else if (key == "coupling_weight") coupling_weight = parse_number<double>(key, value);
  else if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "epsilon") epsilon = parse_number<double>(key, value);
  else if (key == "k") k = parse_number<int>(key, value);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "m") m = parse_number<int>(key, value);
  else if (key == "objective") objective = objective_from_name(value);
  else if (key == "one_shot") one_shot = parse_bool(key, value);
  else if (key == "reg") reg = parse_number<double>(key, value);
  else if (key == "s") s = parse_number<int>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "self_pairs") self_pairs = parse_bool(key, value);
  else if (key == "steps_per_epoch") steps_per_epoch = parse_number<int>(key, value);
  else throw UsageError("unknown config key '" + key + "'");
}

double adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& st, const TrainConfig& c) {
  if (grad.size() != params.size()) throw UsageError("gradient size does not match parameters");
  if (st.m.size() != params.size()) st.m = Eigen::VectorXd::Zero(params.size());
  if (st.v.size() != params.size()) st.v = Eigen::VectorXd::Zero(params.size());
  const double norm = grad.norm();
  ++st.t;
  if (norm == 0.0) {
    st.m *= c.beta1;
    st.v *= c.beta2;
    return 0.0;
  }
  const double scale = norm > c.clip_norm ? c.clip_norm / norm : 1.0;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double g = grad(i) * scale;
    st.m(i) = c.beta1 * st.m(i) + (1.0 - c.beta1) * g;
    st.v(i) = c.beta2 * st.v(i) + (1.0 - c.beta2) * g * g;
    params(i) -= c.learning_rate * (st.m(i) / bc1) / (std::sqrt(st.v(i) / bc2) + c.epsilon);
  }
  return norm;
}

std::vector<PairIndex> sample_pairs(std::size_t n_shapes, int batch_size, std::mt19937_64& rng, bool self_pairs,
                                    bool one_shot) {
  if (n_shapes == 0) throw UsageError("cannot sample pairs from an empty dataset");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  std::vector<PairIndex> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  if (one_shot) {
    if (n_shapes != 2) throw UsageError("one-shot mode needs exactly 2 shapes, got " + std::to_string(n_shapes));
    out.assign(static_cast<std::size_t>(batch_size), PairIndex{0, 1});
    return out;
  }
  if (!self_pairs && n_shapes < 2) throw UsageError("need at least 2 shapes unless self-pairs mode is on");
  // Index arithmetic on raw engine output instead of distribution objects,
  // whose algorithms differ between standard libraries.
  const std::uint64_t n = n_shapes;
  const std::uint64_t total = self_pairs ? n * n : n * (n - 1);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % total;
  for (int b = 0; b < batch_size; ++b) {
    std::uint64_t r;
    do r = rng();
    while (r >= limit);
    r %= total;
    if (self_pairs) {
      out.push_back({static_cast<std::size_t>(r / n), static_cast<std::size_t>(r % n)});
    } else {
      const std::uint64_t x = r / (n - 1), off = r % (n - 1);
      const std::uint64_t y = off >= x ? off + 1 : off;
      out.push_back({static_cast<std::size_t>(x), static_cast<std::size_t>(y)});
    }
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  binio::Writer w;
  w.put_bytes("CYFM");
  w.put<std::uint32_t>(ckpt.version);
  w.put_string(ckpt.config.encode());
  w.put<std::int64_t>(ckpt.epoch);
  w.put<std::int64_t>(ckpt.step);
  w.put<std::int64_t>(ckpt.optimizer.t);
  w.put_string(ckpt.rng_state);
  w.put_tensor(ckpt.params.data);
  w.put_tensor(ckpt.optimizer.m);
  w.put_tensor(ckpt.optimizer.v);

  // Write to a sibling and rename so a crash never leaves a half file.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp);
    f.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!f) throw DataError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 4) throw DataError(name + ": truncated checkpoint (while reading magic)");
  if (bytes.compare(0, 4, "CYFM") != 0) throw DataError(name + ": not a checkpoint (bad magic)");
  binio::Reader r(bytes, name, "checkpoint", 4);

  Checkpoint c;
  c.version = r.get<std::uint32_t>("version");
  if (c.version != Checkpoint::kVersion)
    throw DataError(name + ": checkpoint version " + std::to_string(c.version) + " is not supported (expected " +
                    std::to_string(Checkpoint::kVersion) + ")");
  c.config = TrainConfig::decode(r.get_string("config"));
  c.epoch = r.get<std::int64_t>("epoch");
  c.step = r.get<std::int64_t>("step");
  c.optimizer.t = r.get<std::int64_t>("optimizer step");
  c.rng_state = r.get_string("rng state");
  c.params.m = c.config.m;
  c.params.s = c.config.s;
  c.params.L = c.config.L;
  c.params.data = r.get_tensor("params");
  c.optimizer.m = r.get_tensor("first moments");
  c.optimizer.v = r.get_tensor("second moments");
  if (!r.at_end()) throw DataError(name + ": trailing bytes after checkpoint payload");

  const auto expected = ModelParams::size_for(c.config.m, c.config.s, c.config.L);
  if (c.params.size() != expected || static_cast<std::size_t>(c.optimizer.m.size()) != expected ||
      static_cast<std::size_t>(c.optimizer.v.size()) != expected)
    throw DataError(name + ": tensor sizes do not match the stored config");
  rng_from_string(c.rng_state);
  return c;
}

void check_compatible(const Checkpoint& ckpt, const TrainConfig& config) {
  auto cmp = [&](const char* field, int a, int b) {
    if (a != b)
      throw UsageError(std::string("incompatible checkpoint: ") + field + " is " + std::to_string(a) +
                       " in the checkpoint but " + std::to_string(b) + " in the config");
  };
  cmp("k", ckpt.config.k, config.k);
  cmp("m", ckpt.config.m, config.m);
  cmp("s", ckpt.config.s, config.s);
  cmp("L", ckpt.config.L, config.L);
}

Checkpoint initial_checkpoint(const TrainConfig& config) {
  config.validate();
  Checkpoint c;
  c.config = config;
  c.params = init_params(config.m, config.s, config.L, config.seed);
  c.optimizer.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.params.size()));
  c.optimizer.v = c.optimizer.m;
  // The sampler stream is separate from the init stream.
  c.rng_state = rng_to_string(std::mt19937_64(config.seed ^ 0x9E3779B97F4A7C15ULL));
  return c;
}

LossBreakdown step(Checkpoint& state, const std::vector<ShapeContext>& dataset, const std::vector<PairIndex>& batch,
                   bool coupling_phase) {
  if (batch.empty()) throw UsageError("empty batch");
  const TrainConfig& c = state.config;
  const LossWeights weights = phase_weights(c, coupling_phase);
  const std::size_t np = state.params.size();
  // Repeated pairs (one-shot batches are all the same pair) are computed once.
  std::vector<PairIndex> unique;
  std::vector<std::size_t> slot(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto it = std::find(unique.begin(), unique.end(), batch[b]);
    slot[b] = static_cast<std::size_t>(it - unique.begin());
    if (it == unique.end()) unique.push_back(batch[b]);
  }
  std::vector<Eigen::VectorXd> grads(unique.size());
  std::vector<LossBreakdown> losses(unique.size());

  parallel_for(unique.size(), [&](std::size_t b) {
    const ShapeContext& x = dataset.at(unique[b].x);
    const ShapeContext& y = dataset.at(unique[b].y);
    const std::string pair_name = "pair (" + x.name + ", " + y.name + ")";
    if (x.basis.k() != c.k || y.basis.k() != c.k)
      throw UsageError(pair_name + ": basis k does not match the config k=" + std::to_string(c.k));
    const auto gt = ground_truth_from_labels(x, y);
    LossInputs in;
    in.dx = x.dist.get();
    in.dy = y.dist.get();
    in.gt = gt ? &*gt : nullptr;
    try {
      const PairForward fwd = forward_pair(state.params, x, y, c.reg);
      losses[b] = evaluate_losses(fwd, in, weights);
      if (!std::isfinite(losses[b].total)) throw NumericalError("non-finite loss");
      grads[b] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(np));
      backward(state.params, x, y, fwd, in, weights, grads[b]);
    } catch (const NumericalError& e) {
      throw NumericalError(pair_name + " at step " + std::to_string(state.step) + ": " + e.what());
    }
  });

  // Fixed-order reduction keeps the result independent of the thread count.
  const double inv = 1.0 / static_cast<double>(batch.size());
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(np));
  LossBreakdown mean;
  mean.cyclic = mean.isometric = mean.supervised = mean.coupling = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t u = slot[b];
    grad += grads[u];
    mean.cyclic += losses[u].cyclic;
    mean.isometric += losses[u].isometric;
    mean.supervised += losses[u].supervised;
    mean.coupling += losses[u].coupling;
    mean.total += losses[u].total;
  }
  grad *= inv;
  mean.cyclic *= inv;
  mean.isometric *= inv;
  mean.supervised *= inv;
  mean.coupling *= inv;
  mean.total *= inv;
  if (!all_finite(grad)) throw NumericalError("non-finite gradient at step " + std::to_string(state.step));

  adam_update(state.params.data, grad, state.optimizer, c);
  ++state.step;
  return mean;
}

TrainResult train(const std::vector<ShapeContext>& dataset, Checkpoint start, const TrainOptions& options) {
  const TrainConfig& c = start.config;
  c.validate();
  TrainResult res;
  res.checkpoint = std::move(start);
  Checkpoint& st = res.checkpoint;
  if (st.epoch >= c.epochs) return res;

  if (dataset.empty()) throw UsageError("empty dataset");
  for (const auto& s : dataset) {
    s.check();
    if (s.basis.k() != c.k)
      throw UsageError("shape " + s.name + " has k=" + std::to_string(s.basis.k()) + " but the config asks for k=" +
                       std::to_string(c.k));
    if (s.stack.m() != c.m || s.stack.s() != c.s)
      throw UsageError("shape " + s.name + " descriptors are m=" + std::to_string(s.stack.m()) +
                       ", s=" + std::to_string(s.stack.s()) + " but the config asks for m=" + std::to_string(c.m) +
                       ", s=" + std::to_string(c.s));
  }

  const int steps = c.resolved_steps_per_epoch(dataset.size());
  const int coupling = c.resolved_coupling_epochs();
  std::mt19937_64 rng = rng_from_string(st.rng_state);
  for (auto epoch = st.epoch; epoch < c.epochs; ++epoch) {
    const bool coupling_phase = epoch < coupling;
    // The coupling loss is scale free while the distance losses scale with
    // the mesh; moments carried across the switch would throttle the new
    // objective for hundreds of steps, so the optimizer starts over.
    if (epoch == coupling && epoch > 0) {
      st.optimizer.m.setZero();
      st.optimizer.v.setZero();
      st.optimizer.t = 0;
    }
    for (int i = 0; i < steps; ++i) {
      const auto batch = sample_pairs(dataset.size(), c.batch_size, rng, c.self_pairs, c.one_shot);
      LossLogRow row;
      row.step = st.step;
      row.epoch = static_cast<int>(epoch);
      row.phase = coupling_phase ? "coupling" : objective_name(c.objective);
      row.losses = step(st, dataset, batch, coupling_phase);
      if (options.on_step) options.on_step(row);
      res.log.push_back(std::move(row));
    }
    st.epoch = epoch + 1;
    st.rng_state = rng_to_string(rng);
    if (options.on_epoch) options.on_epoch(st);
  }
  return res;
}

TrainResult train(const std::vector<ShapeContext>& dataset, const TrainConfig& config, const TrainOptions& options) {
  return train(dataset, initial_checkpoint(config), options);
}

std::string loss_csv_header() { return "step,epoch,phase,cyclic,isometric,supervised,coupling"; }

std::string loss_csv_row(const LossLogRow& row) {
  auto v = [](double x) { return std::isnan(x) ? std::string() : fmt_double(x); };
  return std::to_string(row.step) + "," + std::to_string(row.epoch) + "," + row.phase + "," + v(row.losses.cyclic) +
         "," + v(row.losses.isometric) + "," + v(row.losses.supervised) + "," + v(row.losses.coupling);
}

void write_loss_csv(const std::vector<LossLogRow>& log, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << loss_csv_header() << "\n";
  for (const auto& row : log) f << loss_csv_row(row) << "\n";
  if (!f) throw DataError("write failed: " + path.string());
}

}  // namespace cyclemap
