#include "hmnet/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hmnet {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* why) {
    if (!ok) throw ValidationError(std::string(field) + ": " + why);
  };
  require(warmup_steps >= 1, "warmup_steps", "must be >= 1");
  require(peak_lr > 0.0, "peak_lr", "must be > 0");
  require(initial_lr > 0.0, "initial_lr", "must be > 0");
  require(initial_lr <= peak_lr, "initial_lr", "must not exceed peak_lr");
  require(clip_norm > 0.0, "clip_norm", "must be > 0");
  require(accumulation_steps >= 1, "accumulation_steps", "must be >= 1");
  require(max_steps >= 1, "max_steps", "must be >= 1");
  require(checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
  require(eval_every >= 1, "eval_every", "must be >= 1");
  require(beta1 > 0.0 && beta1 < 1.0, "beta1", "must lie in (0, 1)");
  require(beta2 > 0.0 && beta2 < 1.0, "beta2", "must lie in (0, 1)");
  require(epsilon > 0.0, "epsilon", "must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"warmup_steps", c.warmup_steps},
                     {"peak_lr", c.peak_lr},
                     {"initial_lr", c.initial_lr},
                     {"clip_norm", c.clip_norm},
                     {"accumulation_steps", c.accumulation_steps},
                     {"max_steps", c.max_steps},
                     {"checkpoint_every", c.checkpoint_every},
                     {"eval_every", c.eval_every},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto field = [&](const char* key, auto& target) {
    if (j.contains(key)) j.at(key).get_to(target);
  };
  field("warmup_steps", c.warmup_steps);
  field("peak_lr", c.peak_lr);
  field("initial_lr", c.initial_lr);
  field("clip_norm", c.clip_norm);
  field("accumulation_steps", c.accumulation_steps);
  field("max_steps", c.max_steps);
  field("checkpoint_every", c.checkpoint_every);
  field("eval_every", c.eval_every);
  field("beta1", c.beta1);
  field("beta2", c.beta2);
  field("epsilon", c.epsilon);
  field("seed", c.seed);
}

double lr_at_step(Index t, const TrainConfig& cfg) {
  if (t < 0) throw std::invalid_argument("negative step");
  if (t >= cfg.warmup_steps) return cfg.peak_lr;
  const double frac = static_cast<double>(t) / static_cast<double>(cfg.warmup_steps);
  return cfg.initial_lr + (cfg.peak_lr - cfg.initial_lr) * frac;
}

RAdamState RAdamState::init(std::span<const Tensor> params, double beta1, double beta2,
                            double epsilon) {
  RAdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  for (const auto& p : params) {
    s.m.push_back(Tensor::Matrix::Zero(p.rows(), p.cols()));
    s.v.push_back(Tensor::Matrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

void radam_step(std::span<Tensor> params, std::span<const Tensor::Matrix> grads, RAdamState& state,
                double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeMismatch("radam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols() ||
        state.m[i].rows() != params[i].rows() || state.m[i].cols() != params[i].cols()) {
      throw ShapeMismatch("radam_step: shape of parameter " + std::to_string(i));
    }
  }
  if (lr < 0.0) throw std::invalid_argument("negative learning rate");

  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double bias1 = 1.0 - std::pow(b1, t);
  const double b2t = std::pow(b2, t);
  const double bias2 = 1.0 - b2t;
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / bias2;
  const bool rectified = rho_t > 4.0;
  const double r_t = rectified ? std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                                           ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                               : 0.0;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const Tensor::Matrix m_hat = m / bias1;
    auto& w = params[i].mutable_value();
    if (rectified) {
      w.array() -= lr * r_t * m_hat.array() / ((v.array() / bias2).sqrt() + state.epsilon);
    } else {
      w -= lr * m_hat;
    }
  }
}

void radam_step(std::span<Tensor> params, RAdamState& state, double lr) {
  std::vector<Tensor::Matrix> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  radam_step(params, grads, state, lr);
}

double global_grad_norm(std::span<const Tensor::Matrix> grads) {
  double total = 0.0;
  for (const auto& g : grads) total += g.squaredNorm();
  return std::sqrt(total);
}

double clip_gradients(std::span<Tensor::Matrix> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("max_norm must be > 0");
  for (const auto& g : grads) {
    if (!g.allFinite()) throw NonFiniteGradient("gradient holds NaN or infinity");
  }
  const double norm = global_grad_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

StepResult accumulated_step(HMNet& net, std::span<const data::MeetingIds> batch, RAdamState& state,
                            const TrainConfig& cfg, std::mt19937_64& rng) {
  if (batch.empty()) throw EmptyBatch("accumulated_step needs at least one micro-batch");
  const nn::ForwardContext ctx{true, net.config.dropout, &rng};
  const double micro_scale = 1.0 / static_cast<double>(cfg.accumulation_steps);

  StepResult result;
  for (const auto& meeting : batch) {
    const Tensor loss = model::compute_loss(meeting, meeting.target, net, ctx);
    result.loss += loss.item();
    backward(scale(loss, micro_scale));
  }
  result.loss /= static_cast<double>(batch.size());

  std::vector<Tensor> params = net.params.parameters();
  std::vector<Tensor::Matrix> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(p.grad());
  result.grad_norm = clip_gradients(grads, cfg.clip_norm);
  result.lr = lr_at_step(state.step, cfg);
  radam_step(params, grads, state, result.lr);
  net.params.zero_grad();
  result.step = state.step;
  return result;
}

namespace {

void copy_values(const HMNetParams& from, HMNetParams& to) {
  auto src = from.parameters();
  auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].mutable_value() = src[i].value();
}

}  // namespace

TrainSummary train(HMNet& net, RAdamState& state, std::span<const data::MeetingIds> corpus,
                   const TrainConfig& cfg, const TrainCallbacks& callbacks) {
  cfg.validate();
  if (corpus.empty()) throw EmptyCorpus("no training meetings");
  std::mt19937_64 rng(cfg.seed);
  TrainSummary summary;

  std::optional<HMNetParams> best;
  auto evaluate = [&](Index step) {
    if (!callbacks.dev_score) return;
    const double score = callbacks.dev_score(net);
    if (!summary.best_dev_score || score > *summary.best_dev_score) {
      summary.best_dev_score = score;
      summary.best_step = step;
      best = net.params.clone();
    }
  };

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  const auto batch_size = static_cast<std::size_t>(cfg.accumulation_steps);
  for (Index s = 0; s < cfg.max_steps; ++s) {
    std::vector<data::MeetingIds> batch;
    batch.reserve(batch_size);
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        order = data::seeded_permutation(corpus.size(), cfg.seed * 1000003ULL + epoch++);
        cursor = 0;
      }
      batch.push_back(corpus[order[cursor++]]);
    }
    const StepResult r = accumulated_step(net, batch, state, cfg, rng);
    summary.losses.push_back(r.loss);
    summary.final_loss = r.loss;
    summary.steps = r.step;
    if (callbacks.on_step) callbacks.on_step(r);
    const Index done = s + 1;
    if (done % cfg.eval_every == 0 && done != cfg.max_steps) evaluate(state.step);
    if (callbacks.on_checkpoint && done % cfg.checkpoint_every == 0 && done != cfg.max_steps) {
      callbacks.on_checkpoint(net, state, state.step);
    }
  }
  evaluate(state.step);
  if (best) copy_values(*best, net.params);
  if (callbacks.on_checkpoint) callbacks.on_checkpoint(net, state, state.step);
  return summary;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'H', 'M', 'N', '1'};

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void matrix(const Tensor::Matrix& m) { bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size())); }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  explicit Reader(std::ifstream& in) : in_(in) {}
  template <typename T>
  T pod() {
    T v{};
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CorruptCheckpoint("unexpected end of file");
  }
  void matrix(Tensor::Matrix& m) { bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size())); }

 private:
  std::ifstream& in_;
};

nlohmann::json header_json(const Checkpoint& c) {
  return nlohmann::json{{"model", c.model},
                        {"train", c.train},
                        {"vocab", c.lexicon.vocab.tokens()},
                        {"roles", c.lexicon.roles.names()},
                        {"pos_tags", c.lexicon.pos.tags()},
                        {"ent_tags", c.lexicon.ent.tags()},
                        {"optimizer",
                         {{"beta1", c.optimizer.beta1},
                          {"beta2", c.optimizer.beta2},
                          {"epsilon", c.optimizer.epsilon}}}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  Writer w(out);
  w.bytes(kMagic, sizeof(kMagic));
  w.pod(kCheckpointVersion);
  const std::string header = header_json(ckpt).dump();
  w.pod(static_cast<std::uint64_t>(header.size()));
  w.bytes(header.data(), header.size());

  const auto named = ckpt.params.named_parameters();
  w.pod(static_cast<std::uint64_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.pod(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.pod(static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) w.pod(static_cast<std::uint64_t>(e));
    w.matrix(t.value());
  }
  const bool has_state = ckpt.optimizer.m.size() == named.size();
  w.pod(static_cast<std::uint64_t>(has_state ? ckpt.optimizer.step : 0));
  w.pod(static_cast<std::uint8_t>(has_state ? 1 : 0));
  if (has_state) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      w.matrix(ckpt.optimizer.m[i]);
      w.matrix(ckpt.optimizer.v[i]);
    }
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in);
  char magic[4];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CorruptCheckpoint("bad magic bytes");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const auto header_size = r.pod<std::uint64_t>();
  if (header_size > (std::uint64_t{1} << 32)) throw CorruptCheckpoint("implausible header size");
  std::string header(header_size, '\0');
  r.bytes(header.data(), header.size());

  Checkpoint c;
  try {
    const auto j = nlohmann::json::parse(header);
    c.model = j.at("model").get<HMNetConfig>();
    c.train = j.at("train").get<TrainConfig>();
    c.lexicon.vocab = data::Vocab(j.at("vocab").get<std::vector<std::string>>());
    c.lexicon.roles = data::SymbolTable(j.at("roles").get<std::vector<std::string>>());
    c.lexicon.pos = data::TagVocab(j.at("pos_tags").get<std::vector<std::string>>());
    c.lexicon.ent = data::TagVocab(j.at("ent_tags").get<std::vector<std::string>>());
    const auto& opt = j.at("optimizer");
    c.optimizer.beta1 = opt.at("beta1").get<double>();
    c.optimizer.beta2 = opt.at("beta2").get<double>();
    c.optimizer.epsilon = opt.at("epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("config header: ") + e.what());
  } catch (const SchemaError& e) {
    throw CorruptCheckpoint(std::string("config header: ") + e.what());
  }

  c.params = HMNetParams::init(c.model, 0);
  const auto named = c.params.named_parameters();
  const auto count = r.pod<std::uint64_t>();
  if (count != named.size()) throw CorruptCheckpoint("parameter count does not match config");
  for (const auto& [expected_name, tensor] : named) {
    const auto name_size = r.pod<std::uint32_t>();
    if (name_size > 4096) throw CorruptCheckpoint("implausible parameter name length");
    std::string name(name_size, '\0');
    r.bytes(name.data(), name.size());
    if (name != expected_name) {
      throw CorruptCheckpoint("parameter '" + name + "' where '" + expected_name + "' expected");
    }
    const auto rank = r.pod<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(r.pod<std::uint64_t>()));
    if (shape != tensor.shape()) throw CorruptCheckpoint("shape mismatch for '" + name + "'");
    Tensor t = tensor;
    r.matrix(t.mutable_value());
  }
  c.optimizer.step = static_cast<Index>(r.pod<std::uint64_t>());
  if (r.pod<std::uint8_t>() != 0) {
    for (const auto& [name, tensor] : named) {
      c.optimizer.m.push_back(Tensor::Matrix(tensor.rows(), tensor.cols()));
      c.optimizer.v.push_back(Tensor::Matrix(tensor.rows(), tensor.cols()));
      r.matrix(c.optimizer.m.back());
      r.matrix(c.optimizer.v.back());
    }
  } else {
    const auto params = c.params.parameters();
    const Index step = c.optimizer.step;
    c.optimizer = RAdamState::init(params, c.optimizer.beta1, c.optimizer.beta2, c.optimizer.epsilon);
    c.optimizer.step = step;
  }
  return c;
}

}  // namespace hmnet
