#include "choreo/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "choreo/errors.hpp"

namespace choreo {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

uint32_t crc32_ieee(const std::string& data) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (unsigned char ch : data) c = table[(c ^ ch) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32_matrix(std::string& out, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw CorruptCheckpoint("checkpoint truncated at byte " +
                              std::to_string(pos));
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  void f32_matrix(Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        m(r, c) = static_cast<double>(f);
      }
  }
};

void put_named_array(std::string& out, const std::string& name, const Mat& m) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<uint32_t>(m.rows()));
  put_u32(out, static_cast<uint32_t>(m.cols()));
  put_f32_matrix(out, m);
}

}  // namespace

void save_checkpoint(const ParamStore& params, const Adam& opt,
                     const TrainConfig& cfg, int64_t next_iteration,
                     const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  const std::string cfg_json = cfg.to_json_string();
  put_u32(out, static_cast<uint32_t>(cfg_json.size()));
  out.append(cfg_json);
  put_u64(out, static_cast<uint64_t>(next_iteration));
  put_u64(out, static_cast<uint64_t>(opt.step_count()));

  const auto& moments = opt.moments();
  put_u32(out, static_cast<uint32_t>(params.names().size() + 2 * moments.size()));
  for (const auto& name : params.names())
    put_named_array(out, name, params.value(name));
  for (const auto& [name, mv] : moments) {
    put_named_array(out, "adam_m/" + name, mv.first);
    put_named_array(out, "adam_v/" + name, mv.second);
  }
  put_u32(out, crc32_ieee(out));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoFailure("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());

  if (buf.size() < 12) throw CorruptCheckpoint("checkpoint too small");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw CorruptCheckpoint("bad checkpoint magic");

  const std::string body = buf.substr(0, buf.size() - 4);
  Reader tail{buf, buf.size() - 4};
  if (tail.u32() != crc32_ieee(body))
    throw CorruptCheckpoint("checkpoint checksum mismatch");

  Reader r{body, 4};
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw VersionMismatch("checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(kVersion));

  Checkpoint ck;
  const uint32_t json_len = r.u32();
  ck.train = TrainConfig::from_json_string(r.bytes(json_len));
  ck.next_iteration = static_cast<int64_t>(r.u64());
  ck.adam_step = static_cast<int64_t>(r.u64());

  const uint32_t n_arrays = r.u32();
  for (uint32_t i = 0; i < n_arrays; ++i) {
    const uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24))
      throw CorruptCheckpoint("implausible array shape for " + name);

    auto load_into = [&](Mat& m) {
      m.resize(rows, cols);
      r.f32_matrix(m);
    };
    if (name.rfind("adam_m/", 0) == 0) {
      load_into(ck.adam_moments[name.substr(7)].first);
    } else if (name.rfind("adam_v/", 0) == 0) {
      load_into(ck.adam_moments[name.substr(7)].second);
    } else {
      load_into(ck.params.add(name, rows, cols));
    }
  }
  if (r.pos != body.size())
    throw CorruptCheckpoint("trailing bytes in checkpoint");
  return ck;
}

}  // namespace choreo
