#pragma once

#include "gmw/errors.hpp"
#include "gmw/motion.hpp"

#include <compare>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>

namespace gmw {

/// Hard label returned by a classifier; only this crosses the oracle boundary.
struct Label {
  int class_id = 0;
  auto operator<=>(const Label &) const = default;
};

/// A hard-label oracle. Implementations may hold connection state, hence the
/// non-const classify.
class Classifier {
public:
  virtual ~Classifier() = default;
  virtual int num_classes() const = 0;
  virtual std::size_t num_joints() const = 0;
  /// Frame count the model insists on, if any.
  virtual std::optional<std::size_t> expected_frames() const { return std::nullopt; }
  virtual Label classify(const Motion &mo) = 0;
};

struct QueryLedger {
  std::uint64_t total = 0;
  std::map<std::string, std::uint64_t> per_phase;
  std::uint64_t budget = UINT64_MAX;
  std::uint64_t cache_hits = 0; // debugging aid, never part of `total`
};

/// Counting front door to a classifier. Every label handed out is recorded in
/// the ledger under a phase name; once the budget is spent further queries
/// throw BudgetExhausted without reaching the classifier.
class QueryGateway {
public:
  explicit QueryGateway(Classifier &classifier, std::uint64_t budget = UINT64_MAX, bool cache = false)
      : classifier_(&classifier), cache_enabled_(cache) {
    ledger_.budget = budget;
  }

  Label classify(const Motion &mo, const std::string &phase = "query") {
    if (mo.joint_count() != classifier_->num_joints())
      throw StructuralError("classifier expects " + std::to_string(classifier_->num_joints()) +
                            " joints, motion has " + std::to_string(mo.joint_count()));
    if (auto frames = classifier_->expected_frames(); frames && *frames != mo.frame_count())
      throw StructuralError("classifier expects " + std::to_string(*frames) + " frames, motion has " +
                            std::to_string(mo.frame_count()));
    std::string key;
    if (cache_enabled_) {
      key.resize(static_cast<std::size_t>(mo.frames().size()) * sizeof(double));
      std::memcpy(key.data(), mo.frames().data(), key.size());
      if (auto it = cache_.find(key); it != cache_.end()) {
        ++ledger_.cache_hits;
        return it->second;
      }
    }
    if (ledger_.total >= ledger_.budget)
      throw BudgetExhausted("query budget of " + std::to_string(ledger_.budget) + " exhausted");
    const Label label = classifier_->classify(mo);
    if (label.class_id < 0 || label.class_id >= classifier_->num_classes())
      throw ProtocolError("label " + std::to_string(label.class_id) + " outside [0, " +
                          std::to_string(classifier_->num_classes()) + ")");
    ++ledger_.total;
    ++ledger_.per_phase[phase];
    if (cache_enabled_) cache_.emplace(std::move(key), label);
    return label;
  }

  const QueryLedger &ledger() const noexcept { return ledger_; }
  Classifier &classifier() noexcept { return *classifier_; }

private:
  Classifier *classifier_;
  QueryLedger ledger_;
  bool cache_enabled_;
  std::unordered_map<std::string, Label> cache_;
};

} // namespace gmw
