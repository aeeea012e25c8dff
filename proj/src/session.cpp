#include "ssn/session.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ssn/checkpoint.hpp"
#include "ssn/png.hpp"

namespace ssn::service {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

blocks::BlockPartition grid_for(const GeneratorConfig& cfg) {
  return blocks::BlockPartition::grid(cfg.output_height(), cfg.output_width(), cfg.latent_rows,
                                      cfg.latent_cols);
}

blocks::LatentGrid grid_from_seeds(const GeneratorConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  return blocks::LatentGrid::from_seeds(cfg.latent_rows, cfg.latent_cols, cfg.n_z, seeds);
}

Real block_mse(const Tensor& a, const Tensor& b, const blocks::BlockPartition& p, std::size_t block) {
  const std::vector<Real> x = blocks::extract_block(a, p, block), y = blocks::extract_block(b, p, block);
  Real s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return x.empty() ? 0.0 : s / static_cast<Real>(x.size());
}

}  // namespace

ModelPtr load_model(const std::string& checkpoint_path) {
  train::TrainState s = [&] {
    try {
      return checkpoint::load(checkpoint_path);
    } catch (const checkpoint::CheckpointError& e) {
      throw ServiceError(400, e.what());
    } catch (const ConfigError& e) {
      throw ServiceError(400, std::string("checkpoint config: ") + e.what());
    }
  }();
  auto m = std::make_shared<Model>();
  m->checkpoint = checkpoint_path;
  m->config = s.config.generator;
  m->g = std::move(s.g);
  return m;
}

std::string digest(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------

Session::Session(std::string id, ModelPtr model, std::uint64_t seed, int rows, int cols)
    : id_(std::move(id)),
      model_(std::move(model)),
      seed_(seed),
      rng_(seed),
      partition_(grid_for(model_->config)),
      latent_(blocks::LatentGrid::sample(model_->config.latent_rows, model_->config.latent_cols,
                                         model_->config.n_z, rng_)) {
  const auto& cfg = model_->config;
  if (rows != cfg.latent_rows || cols != cfg.latent_cols) {
    throw ServiceError(400, "session: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " does not match the checkpoint latent grid " + std::to_string(cfg.latent_rows) +
                                "x" + std::to_string(cfg.latent_cols));
  }
  draws_ = latent_.block_count();
  render();
}

void Session::render() {
  NoGradGuard no_grad;
  image_ = model::generate(model_->config, model_->g, latent_.to_tensor());
  png_ = png::encode(image_);
  digest_ = digest(png_);
}

std::size_t Session::block_index(int row, int col) const {
  if (row < 1 || row > latent_.rows() || col < 1 || col > latent_.cols()) {
    throw ServiceError(400, "block (" + std::to_string(row) + "," + std::to_string(col) + ") is outside the " +
                                std::to_string(latent_.rows()) + "x" + std::to_string(latent_.cols()) + " grid");
  }
  return static_cast<std::size_t>(row - 1) * latent_.cols() + (col - 1);
}

void Session::check_revision(std::uint64_t expected) const {
  if (expected != revision_) {
    throw ServiceError(409, "stale revision " + std::to_string(expected) + ", session is at " +
                                std::to_string(revision_));
  }
}

ResampleOutcome Session::resample(const std::vector<std::size_t>& targets, std::uint64_t expected_revision,
                                  const std::vector<std::uint64_t>& seeds) {
  check_revision(expected_revision);
  if (targets.empty()) throw ServiceError(400, "resample: no blocks selected");
  const std::set<std::size_t> unique(targets.begin(), targets.end());
  if (unique.size() != targets.size()) throw ServiceError(400, "resample: duplicate block");
  for (std::size_t a : targets) {
    if (a >= latent_.block_count()) throw ServiceError(400, "resample: block index out of range");
  }
  if (!seeds.empty() && seeds.size() != targets.size()) {
    throw ServiceError(400, "resample: need one seed per block");
  }

  blocks::LatentGrid next = latent_;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::uint64_t s = 0;
    if (seeds.empty()) {
      s = rng_();
      ++draws_;
    } else {
      s = seeds[i];
    }
    next.set_block(targets[i], blocks::LatentGrid::block_from_seed(latent_.n_z(), s), s);
  }

  const Tensor before = image_;
  history_.push_back({latent_, targets, digest_});
  latent_ = std::move(next);
  render();
  ++revision_;

  ResampleOutcome out;
  out.png = png_;
  for (std::size_t a = 0; a < latent_.block_count(); ++a) {
    out.changed.push_back(unique.count(a) > 0);
    out.block_change.push_back(block_mse(before, image_, partition_, a));
  }
  out.distortion_outside = blocks::distortion_outside(before, image_, partition_, unique);
  return out;
}

void Session::undo(std::uint64_t expected_revision) {
  check_revision(expected_revision);
  if (history_.empty()) throw ServiceError(409, "undo: history is empty");
  HistoryEntry last = std::move(history_.back());
  history_.pop_back();
  latent_ = std::move(last.latent);
  render();
  if (digest_ != last.digest) {
    throw std::logic_error("undo: regenerated image digest " + digest_ + " differs from stored " + last.digest);
  }
  ++revision_;
}

json Session::state() const {
  const auto& cfg = model_->config;
  json blocks_changed = json::array();
  if (!history_.empty()) {
    for (std::size_t a : history_.back().targets) {
      blocks_changed.push_back({static_cast<int>(a) / latent_.cols() + 1, static_cast<int>(a) % latent_.cols() + 1});
    }
  }
  return {{"session_id", id_},
          {"revision", revision_},
          {"checkpoint", model_->checkpoint},
          {"seed", seed_},
          {"rows", latent_.rows()},
          {"cols", latent_.cols()},
          {"n_z", cfg.n_z},
          {"height", cfg.output_height()},
          {"width", cfg.output_width()},
          {"history_depth", history_.size()},
          {"can_undo", !history_.empty()},
          {"last_resampled", blocks_changed},
          {"latent_seeds", latent_.seeds()},
          {"image_digest", digest_}};
}

json Session::to_json() const {
  json history = json::array();
  for (const auto& h : history_) {
    history.push_back({{"seeds", h.latent.seeds()}, {"targets", h.targets}, {"digest", h.digest}});
  }
  return {{"format", kFormatVersion},
          {"session_id", id_},
          {"checkpoint", model_->checkpoint},
          {"seed", seed_},
          {"draws", draws_},
          {"revision", revision_},
          {"seeds", latent_.seeds()},
          {"digest", digest_},
          {"history", history}};
}

Session Session::from_json(const json& j, ModelPtr model) {
  try {
    if (j.at("format").get<int>() != kFormatVersion) throw ServiceError(500, "session: unsupported format");
    const auto& cfg = model->config;
    Session s(j.at("session_id").get<std::string>(), model, j.at("seed").get<std::uint64_t>(), cfg.latent_rows,
              cfg.latent_cols);
    s.draws_ = j.at("draws").get<std::uint64_t>();
    s.rng_.seed(s.seed_);
    s.rng_.discard(s.draws_);
    s.revision_ = j.at("revision").get<std::uint64_t>();
    for (const auto& h : j.at("history")) {
      s.history_.push_back({grid_from_seeds(cfg, h.at("seeds").get<std::vector<std::uint64_t>>()),
                            h.at("targets").get<std::vector<std::size_t>>(), h.at("digest").get<std::string>()});
    }
    s.latent_ = grid_from_seeds(cfg, j.at("seeds").get<std::vector<std::uint64_t>>());
    s.render();
    if (s.digest_ != j.at("digest").get<std::string>()) {
      throw ServiceError(500, "session " + s.id_ + ": regenerated image does not match the persisted digest");
    }
    return s;
  } catch (const json::exception& e) {
    throw ServiceError(500, std::string("session: corrupt record: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

SessionStore::SessionStore(std::filesystem::path dir, std::string default_checkpoint)
    : dir_(std::move(dir)), default_checkpoint_(std::move(default_checkpoint)) {
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_);
  for (const auto& f : std::filesystem::directory_iterator(dir_)) {
    const std::string stem = f.path().stem().string();
    if (f.path().extension() == ".json" && stem.size() > 1 && stem[0] == 's') {
      try {
        next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(stem.substr(1)) + 1);
      } catch (const std::exception&) {
      }
    }
  }
}

ModelPtr SessionStore::model(const std::string& checkpoint) {
  std::lock_guard lock(mutex_);
  auto& m = models_[checkpoint];
  if (!m) {
    try {
      m = load_model(checkpoint);
    } catch (...) {
      models_.erase(checkpoint);
      throw;
    }
  }
  return m;
}

std::string SessionStore::create(const std::string& checkpoint, std::uint64_t seed, std::optional<int> rows,
                                 std::optional<int> cols) {
  const std::string path = checkpoint.empty() ? default_checkpoint_ : checkpoint;
  if (path.empty()) throw ServiceError(400, "create: no checkpoint given and the server has no default");
  const ModelPtr m = model(path);
  std::string id;
  {
    std::lock_guard lock(mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(next_id_++));
    id = buf;
  }
  auto entry = std::make_shared<Entry>(Session(id, m, seed, rows.value_or(m->config.latent_rows),
                                               cols.value_or(m->config.latent_cols)));
  persist(entry->session);
  std::lock_guard lock(mutex_);
  sessions_.emplace(id, std::move(entry));
  return id;
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) {
  {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it != sessions_.end()) return it->second;
  }
  const bool safe = !id.empty() && std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); });
  const auto file = dir_ / (id + ".json");
  if (dir_.empty() || !safe || !std::filesystem::exists(file)) throw ServiceError(404, "unknown session " + id);
  std::ifstream in(file);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ServiceError(500, "session " + id + ": unreadable record: " + e.what());
  }
  auto entry = std::make_shared<Entry>(Session::from_json(j, model(j.value("checkpoint", std::string{}))));
  std::lock_guard lock(mutex_);
  return sessions_.emplace(id, std::move(entry)).first->second;
}

void SessionStore::persist(const Session& s) const {
  if (dir_.empty()) return;
  const auto file = dir_ / (s.id() + ".json");
  const auto tmp = dir_ / (s.id() + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << s.to_json().dump(1) << "\n";
    if (!out) throw ServiceError(500, "session: cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

}  // namespace ssn::service
