#pragma once

#include "gmw/errors.hpp"
#include "gmw/motion.hpp"
#include "gmw/skeleton.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace gmw {

using json = nlohmann::json;

namespace detail {

inline json vec3_to_json(const Vec3 &v) { return json::array({v.x(), v.y(), v.z()}); }

inline double finite_number(const json &j, const char *what) {
  if (!j.is_number()) throw ValidationError(std::string(what) + " is not a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ValidationError(std::string(what) + " is not finite");
  return v;
}

inline Vec3 vec3_from_json(const json &j, const char *what) {
  if (!j.is_array() || j.size() != 3)
    throw ValidationError(std::string(what) + " must be an array of 3 numbers");
  return {finite_number(j[0], what), finite_number(j[1], what), finite_number(j[2], what)};
}

} // namespace detail

inline json skeleton_to_json(const Skeleton &sk) {
  json joints = json::array();
  for (const auto &js : sk.joints()) {
    json item;
    item["name"] = js.name;
    item["parent"] = js.parent ? json(*js.parent) : json(nullptr);
    item["offset"] = detail::vec3_to_json(js.offset);
    item["angle_min"] = detail::vec3_to_json(js.angle_min);
    item["angle_max"] = detail::vec3_to_json(js.angle_max);
    joints.push_back(std::move(item));
  }
  return joints;
}

inline SkeletonPtr skeleton_from_json(const json &j) {
  if (!j.is_array()) throw ValidationError("skeleton must be a joint list");
  std::vector<JointSpec> joints;
  for (const auto &item : j) {
    if (!item.is_object()) throw ValidationError("joint entry must be an object");
    JointSpec js;
    if (!item.contains("name") || !item["name"].is_string())
      throw ValidationError("joint entry without name");
    js.name = item["name"].get<std::string>();
    if (item.contains("parent") && !item["parent"].is_null()) {
      if (!item["parent"].is_number_unsigned())
        throw ValidationError("parent of '" + js.name + "' must be a non-negative index");
      js.parent = item["parent"].get<std::size_t>();
    }
    js.offset = detail::vec3_from_json(item.value("offset", json()), "offset");
    js.angle_min = detail::vec3_from_json(item.value("angle_min", json()), "angle_min");
    js.angle_max = detail::vec3_from_json(item.value("angle_max", json()), "angle_max");
    joints.push_back(std::move(js));
  }
  return make_skeleton(std::move(joints));
}

inline json frames_to_json(const Frames &frames) {
  json out = json::array();
  const Eigen::Index joints = frames.cols() / 3;
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    json frame = json::array();
    for (Eigen::Index j = 0; j < joints; ++j)
      frame.push_back(json::array({frames(t, 3 * j), frames(t, 3 * j + 1), frames(t, 3 * j + 2)}));
    out.push_back(std::move(frame));
  }
  return out;
}

/// Parses an n x O x 3 nested array.
inline Frames frames_from_json(const json &j, std::size_t joints) {
  if (!j.is_array()) throw ValidationError("frames must be an array");
  Frames out(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(3 * joints));
  for (std::size_t t = 0; t < j.size(); ++t) {
    const auto &frame = j[t];
    if (!frame.is_array() || frame.size() != joints)
      throw ValidationError("frame " + std::to_string(t) + " must hold " + std::to_string(joints) +
                            " joints");
    for (std::size_t k = 0; k < joints; ++k) {
      const Vec3 p = detail::vec3_from_json(frame[k], "joint position");
      out.row(static_cast<Eigen::Index>(t)).segment<3>(static_cast<Eigen::Index>(3 * k)) = p.transpose();
    }
  }
  return out;
}

inline json motion_to_json(const Motion &mo) {
  json doc;
  doc["skeleton"] = skeleton_to_json(mo.skeleton());
  doc["frame_dt"] = mo.frame_dt();
  doc["frames"] = frames_to_json(mo.frames());
  if (mo.label()) doc["label"] = *mo.label();
  return doc;
}

/// `expected`, when given, must match the file's skeleton; the returned motion
/// then shares that skeleton object.
inline Motion motion_from_json(const json &doc, const SkeletonPtr &expected = nullptr) {
  if (!doc.is_object()) throw ValidationError("motion document must be an object");
  for (const char *key : {"skeleton", "frame_dt", "frames"})
    if (!doc.contains(key)) throw ValidationError(std::string("motion document lacks '") + key + "'");
  SkeletonPtr sk = skeleton_from_json(doc["skeleton"]);
  if (expected) {
    if (!(*expected == *sk)) throw StructuralError("motion skeleton does not match the expected skeleton");
    sk = expected;
  }
  const double dt = detail::finite_number(doc["frame_dt"], "frame_dt");
  Frames frames = frames_from_json(doc["frames"], sk->joint_count());
  std::optional<int> label;
  if (doc.contains("label") && !doc["label"].is_null()) {
    if (!doc["label"].is_number_integer()) throw ValidationError("label must be an integer");
    label = doc["label"].get<int>();
  }
  return Motion(std::move(sk), std::move(frames), dt, label);
}

inline void write_text_file(const std::filesystem::path &path, const std::string &text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

inline std::string read_text_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const std::filesystem::path &path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error &e) {
    throw ValidationError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void save_motion(const Motion &mo, const std::filesystem::path &path) {
  write_text_file(path, motion_to_json(mo).dump() + "\n");
}

inline Motion load_motion(const std::filesystem::path &path, const SkeletonPtr &expected = nullptr) {
  try {
    return motion_from_json(read_json_file(path), expected);
  } catch (const json::exception &e) {
    throw ValidationError("malformed motion file '" + path.string() + "': " + e.what());
  }
}

} // namespace gmw
