#pragma once

#include "gmw/classifier.hpp"
#include "gmw/errors.hpp"
#include "gmw/motion.hpp"
#include "gmw/motion_io.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <vector>

namespace gmw {

/// Which channels of a motion feed the nearest-centroid classifier.
struct FeatureSpec {
  std::size_t downsample_frames = 16;
  bool positions = true;
  bool first_differences = true;

  bool operator==(const FeatureSpec &) const = default;
};

/// Frame indices kept by downsampling: evenly spaced, rounded to nearest.
inline std::vector<std::size_t> downsample_indices(std::size_t frames, std::size_t keep) {
  std::vector<std::size_t> idx(keep);
  if (keep == 1) return {0};
  for (std::size_t i = 0; i < keep; ++i)
    idx[i] = (2 * i * (frames - 1) + (keep - 1)) / (2 * (keep - 1));
  return idx;
}

/// Raw (unnormalized) feature vector: downsampled positions followed by
/// differences between consecutive kept frames.
inline Eigen::VectorXd motion_features(const Motion &mo, const FeatureSpec &spec) {
  const auto idx = downsample_indices(mo.frame_count(), spec.downsample_frames);
  const Eigen::Index m = mo.frames().cols();
  const Eigen::Index k = static_cast<Eigen::Index>(idx.size());
  Eigen::Index dim = 0;
  if (spec.positions) dim += k * m;
  if (spec.first_differences) dim += (k - 1) * m;
  Eigen::VectorXd f(dim);
  Eigen::Index at = 0;
  const auto &fr = mo.frames();
  if (spec.positions)
    for (auto t : idx) {
      f.segment(at, m) = fr.row(static_cast<Eigen::Index>(t)).transpose();
      at += m;
    }
  if (spec.first_differences)
    for (std::size_t i = 1; i < idx.size(); ++i) {
      f.segment(at, m) =
          (fr.row(static_cast<Eigen::Index>(idx[i])) - fr.row(static_cast<Eigen::Index>(idx[i - 1]))).transpose();
      at += m;
    }
  return f;
}

struct CentroidModel {
  FeatureSpec spec;
  std::size_t num_joints = 0;
  Eigen::VectorXd mean;       // per feature dimension
  Eigen::VectorXd scale;      // per feature dimension, > 0
  Eigen::MatrixXd centroids;  // one row per class, normalized features

  int num_classes() const noexcept { return static_cast<int>(centroids.rows()); }

  Eigen::VectorXd normalized_features(const Motion &mo) const {
    return ((motion_features(mo, spec) - mean).array() / scale.array()).matrix();
  }
};

/// Fits per-dimension z-normalization on the whole set, then averages each
/// class. Every class id in [0, max label] needs at least one sample.
inline CentroidModel train_centroid(std::span<const Motion> dataset, const FeatureSpec &spec = {}) {
  if (dataset.empty()) throw ValidationError("empty training set");
  int max_label = -1;
  for (const auto &mo : dataset) {
    if (!mo.label()) throw ValidationError("training motion without label");
    if (*mo.label() < 0) throw ValidationError("negative class label");
    if (!mo.same_shape(dataset.front())) throw StructuralError("training motions differ in shape");
    max_label = std::max(max_label, *mo.label());
  }
  const int classes = max_label + 1;
  if (classes < 2) throw ValidationError("training set needs at least two classes");

  std::vector<Eigen::VectorXd> feats;
  feats.reserve(dataset.size());
  for (const auto &mo : dataset) feats.push_back(motion_features(mo, spec));
  const Eigen::Index dim = feats.front().size();

  CentroidModel model;
  model.spec = spec;
  model.num_joints = dataset.front().joint_count();
  model.mean = Eigen::VectorXd::Zero(dim);
  for (const auto &f : feats) model.mean += f;
  model.mean /= static_cast<double>(feats.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto &f : feats) var += (f - model.mean).cwiseAbs2();
  var /= static_cast<double>(feats.size());
  model.scale = var.cwiseSqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; });

  model.centroids = Eigen::MatrixXd::Zero(classes, dim);
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const int c = *dataset[i].label();
    model.centroids.row(c) += ((feats[i] - model.mean).array() / model.scale.array()).matrix().transpose();
    ++counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw ValidationError("class " + std::to_string(c) + " has no training samples");
    model.centroids.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  return model;
}

/// Nearest centroid in normalized feature space; ties go to the lower class id.
inline Label centroid_classify(const CentroidModel &model, const Motion &mo) {
  const Eigen::VectorXd f = model.normalized_features(mo);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < model.num_classes(); ++c) {
    const double d = (model.centroids.row(c).transpose() - f).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return {best};
}

inline json centroid_model_to_json(const CentroidModel &m) {
  auto vec = [](const Eigen::VectorXd &v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json doc;
  doc["kind"] = "nearest_centroid";
  doc["num_joints"] = m.num_joints;
  doc["feature_spec"] = {{"downsample_frames", m.spec.downsample_frames},
                         {"positions", m.spec.positions},
                         {"first_differences", m.spec.first_differences}};
  doc["mean"] = vec(m.mean);
  doc["scale"] = vec(m.scale);
  json rows = json::array();
  for (Eigen::Index c = 0; c < m.centroids.rows(); ++c) rows.push_back(vec(m.centroids.row(c).transpose()));
  doc["centroids"] = std::move(rows);
  return doc;
}

inline CentroidModel centroid_model_from_json(const json &doc) {
  try {
    if (doc.at("kind").get<std::string>() != "nearest_centroid")
      throw ValidationError("not a nearest-centroid model");
    CentroidModel m;
    m.num_joints = doc.at("num_joints").get<std::size_t>();
    const auto &fs = doc.at("feature_spec");
    m.spec.downsample_frames = fs.at("downsample_frames").get<std::size_t>();
    m.spec.positions = fs.at("positions").get<bool>();
    m.spec.first_differences = fs.at("first_differences").get<bool>();
    auto to_vec = [](const json &j) {
      const auto v = j.get<std::vector<double>>();
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    m.mean = to_vec(doc.at("mean"));
    m.scale = to_vec(doc.at("scale"));
    const auto &rows = doc.at("centroids");
    if (rows.size() < 2) throw ValidationError("model needs at least two centroids");
    m.centroids.resize(static_cast<Eigen::Index>(rows.size()), m.mean.size());
    for (std::size_t c = 0; c < rows.size(); ++c) {
      const Eigen::VectorXd r = to_vec(rows[c]);
      if (r.size() != m.mean.size()) throw ValidationError("centroid dimension mismatch");
      m.centroids.row(static_cast<Eigen::Index>(c)) = r.transpose();
    }
    if (m.scale.size() != m.mean.size()) throw ValidationError("scale dimension mismatch");
    return m;
  } catch (const json::exception &e) {
    throw ValidationError(std::string("malformed model: ") + e.what());
  }
}

inline void save_centroid_model(const CentroidModel &m, const std::filesystem::path &path) {
  write_text_file(path, centroid_model_to_json(m).dump() + "\n");
}

inline CentroidModel load_centroid_model(const std::filesystem::path &path) {
  return centroid_model_from_json(read_json_file(path));
}

/// In-process hard-label oracle over a trained centroid model.
class CentroidClassifier : public Classifier {
public:
  explicit CentroidClassifier(std::shared_ptr<const CentroidModel> model) : model_(std::move(model)) {}

  int num_classes() const override { return model_->num_classes(); }
  std::size_t num_joints() const override { return model_->num_joints; }
  Label classify(const Motion &mo) override { return centroid_classify(*model_, mo); }

  const CentroidModel &model() const noexcept { return *model_; }

private:
  std::shared_ptr<const CentroidModel> model_;
};

} // namespace gmw
