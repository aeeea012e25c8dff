// Interactive block-resampling sessions. A session stores latents, never
// images: every image is regenerated from the current latent grid, and the
// history keeps the latents needed for exact undo.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssn/blocks.hpp"
#include "ssn/config.hpp"
#include "ssn/model.hpp"

namespace ssn::service {

/// Error with the HTTP status it maps to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Frozen generator loaded from a checkpoint; shared by sessions, read-only.
struct Model {
  std::string checkpoint;
  GeneratorConfig config;
  model::ParamStore g;
};
using ModelPtr = std::shared_ptr<const Model>;

ModelPtr load_model(const std::string& checkpoint_path);

/// 64-bit FNV-1a of bytes as 16 hex digits.
std::string digest(const std::vector<std::uint8_t>& bytes);

struct HistoryEntry {
  blocks::LatentGrid latent;          // latent before the step
  std::vector<std::size_t> targets;   // blocks the step resampled
  std::string digest;                 // PNG digest before the step
};

struct ResampleOutcome {
  std::vector<std::uint8_t> png;
  /// One entry per block: whether its latent changed.
  std::vector<bool> changed;
  /// Mean squared change of each image block.
  std::vector<Real> block_change;
  /// Off-target mean squared error between the previous and the new image.
  Real distortion_outside = 0.0;
};

class Session {
 public:
  /// Grid must equal the model's latent grid.
  Session(std::string id, ModelPtr model, std::uint64_t seed, int rows, int cols);

  const std::string& id() const { return id_; }
  std::uint64_t revision() const { return revision_; }
  std::uint64_t seed() const { return seed_; }
  const blocks::LatentGrid& latent() const { return latent_; }
  const std::vector<HistoryEntry>& history() const { return history_; }
  const blocks::BlockPartition& partition() const { return partition_; }
  const Model& model() const { return *model_; }
  const std::vector<std::uint8_t>& png() const { return png_; }
  const std::string& image_digest() const { return digest_; }

  /// Zero-based block index from a 1-based (row, col).
  std::size_t block_index(int row, int col) const;

  /// Fresh blocks for `targets`: explicit per-target seeds when given,
  /// otherwise the next seeds of the session stream. Throws ServiceError 409 on
  /// a stale revision and 400 on bad targets.
  ResampleOutcome resample(const std::vector<std::size_t>& targets, std::uint64_t expected_revision,
                           const std::vector<std::uint64_t>& seeds = {});
  /// Restores the latent before the last resample; 409 if there is none.
  void undo(std::uint64_t expected_revision);

  nlohmann::json state() const;
  nlohmann::json to_json() const;
  /// Rebuilds a persisted session; the regenerated image must match the stored digest.
  static Session from_json(const nlohmann::json& j, ModelPtr model);

 private:
  void check_revision(std::uint64_t expected) const;
  void render();

  std::string id_;
  ModelPtr model_;
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 rng_;
  std::uint64_t revision_ = 0;
  blocks::BlockPartition partition_;
  blocks::LatentGrid latent_;
  std::vector<HistoryEntry> history_;
  Tensor image_;
  std::vector<std::uint8_t> png_;
  std::string digest_;
};

/// Thread-safe session registry with optional on-disk persistence.
class SessionStore {
 public:
  /// Empty `dir` keeps sessions in memory only. `default_checkpoint` is used
  /// when a create request names none.
  explicit SessionStore(std::filesystem::path dir = {}, std::string default_checkpoint = {});

  std::string create(const std::string& checkpoint, std::uint64_t seed, std::optional<int> rows,
                     std::optional<int> cols);

  /// Runs `f` on the session under its lock and persists it afterwards when
  /// `mutates` is set. Unknown ids are looked up on disk before failing with 404.
  template <class F>
  auto with_session(const std::string& id, bool mutates, F&& f) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    if constexpr (std::is_void_v<decltype(f(entry->session))>) {
      f(entry->session);
      if (mutates) persist(entry->session);
    } else {
      auto result = f(entry->session);
      if (mutates) persist(entry->session);
      return result;
    }
  }

 private:
  struct Entry {
    explicit Entry(Session s) : session(std::move(s)) {}
    std::mutex mutex;
    Session session;
  };

  std::shared_ptr<Entry> find(const std::string& id);
  ModelPtr model(const std::string& checkpoint);
  void persist(const Session& s) const;

  std::filesystem::path dir_;
  std::string default_checkpoint_;
  std::mutex mutex_;
  std::uint64_t next_id_ = 1;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::map<std::string, ModelPtr> models_;
};

}  // namespace ssn::service
