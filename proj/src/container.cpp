#include "choreo/container.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "choreo/errors.hpp"
#include "json.hpp"

namespace choreo {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'D', 'M'};
constexpr uint32_t kBinaryVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  // explicit little-endian byte order
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoFailure("unexpected end of binary motion file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(std::istream& in) {
  const uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void write_motion_json(const std::string& path, const PackedGroup& g) {
  if (g.data.cols() != kPoseDim) throw BadShape("motion data must have 147 columns");
  nlohmann::json j;
  j["fps"] = static_cast<int>(g.fps);
  j["n_dancers"] = g.n_dancers;
  j["n_frames"] = g.n_frames;
  j["layout"] = "root3+rot6d24";
  auto& data = j["data"] = nlohmann::json::array();
  for (int i = 0; i < g.n_dancers; ++i) {
    nlohmann::json dancer = nlohmann::json::array();
    for (int t = 0; t < g.n_frames; ++t) {
      nlohmann::json frame = nlohmann::json::array();
      for (int k = 0; k < kPoseDim; ++k) frame.push_back(g.data(g.row(i, t), k));
      dancer.push_back(std::move(frame));
    }
    data.push_back(std::move(dancer));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write motion file: " + path);
  out << j.dump() << "\n";
  if (!out) throw IoFailure("write failed: " + path);
}

PackedGroup read_motion_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open motion file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure("motion json parse (" + path + "): " + e.what());
  }
  PackedGroup g;
  try {
    g.fps = j.at("fps").get<double>();
    g.n_dancers = j.at("n_dancers").get<int>();
    g.n_frames = j.at("n_frames").get<int>();
    if (j.at("layout").get<std::string>() != "root3+rot6d24")
      throw BadShape("unknown motion layout");
    const auto& data = j.at("data");
    if (static_cast<int>(data.size()) != g.n_dancers)
      throw BadShape("data size does not match n_dancers");
    g.data.resize(static_cast<Eigen::Index>(g.n_dancers) * g.n_frames, kPoseDim);
    for (int i = 0; i < g.n_dancers; ++i) {
      const auto& dancer = data.at(i);
      if (static_cast<int>(dancer.size()) != g.n_frames)
        throw BadShape("dancer frame count does not match n_frames");
      for (int t = 0; t < g.n_frames; ++t) {
        const auto& frame = dancer.at(t);
        if (static_cast<int>(frame.size()) != kPoseDim)
          throw BadShape("frame length must be 147, got " +
                         std::to_string(frame.size()));
        for (int k = 0; k < kPoseDim; ++k)
          g.data(g.row(i, t), k) = frame.at(k).get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure("motion json fields (" + path + "): " + e.what());
  }
  return g;
}

void write_motion_binary(const std::string& path, const PackedGroup& g) {
  if (g.data.cols() != kPoseDim) throw BadShape("motion data must have 147 columns");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write motion file: " + path);
  out.write(kMagic, 4);
  put_u32(out, kBinaryVersion);
  put_u32(out, static_cast<uint32_t>(g.n_dancers));
  put_u32(out, static_cast<uint32_t>(g.n_frames));
  put_u32(out, kPoseDim);
  for (Eigen::Index r = 0; r < g.data.rows(); ++r)
    for (int k = 0; k < kPoseDim; ++k)
      put_f32(out, static_cast<float>(g.data(r, k)));
  if (!out) throw IoFailure("write failed: " + path);
}

PackedGroup read_motion_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open motion file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoFailure("not a binary motion container: " + path);
  const uint32_t version = get_u32(in);
  if (version != kBinaryVersion)
    throw VersionMismatch("motion container version " + std::to_string(version) +
                          ", expected " + std::to_string(kBinaryVersion));
  PackedGroup g;
  g.n_dancers = static_cast<int>(get_u32(in));
  g.n_frames = static_cast<int>(get_u32(in));
  const uint32_t dim = get_u32(in);
  if (dim != kPoseDim) throw BadShape("motion container pose dim must be 147");
  if (g.n_dancers < 1 || g.n_frames < 1)
    throw BadShape("motion container must hold at least one dancer and frame");
  g.data.resize(static_cast<Eigen::Index>(g.n_dancers) * g.n_frames, kPoseDim);
  for (Eigen::Index r = 0; r < g.data.rows(); ++r)
    for (int k = 0; k < kPoseDim; ++k) g.data(r, k) = get_f32(in);
  // fps is not part of the binary header; synthetic data and samplers run at 30
  g.fps = 30.0;
  return g;
}

void write_motion(const std::string& path, const PackedGroup& g) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
    write_motion_json(path, g);
  else
    write_motion_binary(path, g);
}

PackedGroup read_motion(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open motion file: " + path);
  const int first = in.peek();
  in.close();
  if (first == '{') return read_motion_json(path);
  return read_motion_binary(path);
}

}  // namespace choreo
