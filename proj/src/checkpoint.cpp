#include "refdiff/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "refdiff/mels_format.hpp"

namespace refdiff::denoiser {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  }
  return v;
}

void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

double get_f64(const std::string& s, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  }
  return std::bit_cast<double>(v);
}

nlohmann::json schedule_json(const diffusion::ScheduleConfig& s) {
  return {{"T", s.steps}, {"beta_min", s.beta_min}, {"beta_max", s.beta_max}, {"kind", "linear"}};
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json blocks = nlohmann::json::array();
  for_each_param(ck.params, [&](const std::string& name, const Matrix& m) {
    blocks.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  const nlohmann::json header = {{"architecture", config_to_json(ck.params.config)},
                                 {"schedule", schedule_json(ck.schedule)},
                                 {"norm_stats", synthgen::stats_to_json(ck.stats)},
                                 {"training", ck.training},
                                 {"params", blocks}};
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for_each_param(ck.params, [&](const std::string&, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(out, m.data()[i]);
  });
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw InputError("RDCK: bad magic or truncated header");
  }
  const auto version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) throw InputError("RDCK: unsupported version " + std::to_string(version));
  const std::size_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + header_len) throw InputError("RDCK: truncated JSON header");

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(12, header_len));
    const auto config = config_from_json(header.at("architecture"));
    const auto& sched = header.at("schedule");
    if (sched.value("kind", std::string("linear")) != "linear") {
      throw InputError("RDCK: unsupported schedule kind");
    }
    ck.schedule = {sched.at("T").get<int>(), sched.at("beta_min").get<double>(),
                   sched.at("beta_max").get<double>()};
    ck.stats = synthgen::stats_from_json(header.at("norm_stats"));
    ck.training = header.value("training", nlohmann::json::object());
    ck.params = zeros_like(init_params(config, 0));

    const auto& blocks = header.at("params");
    std::size_t idx = 0;
    std::size_t pos = 12 + header_len;
    for_each_param(ck.params, [&](const std::string& name, Matrix& m) {
      if (idx >= blocks.size()) throw InputError("RDCK: missing parameter block " + name);
      const auto& b = blocks[idx++];
      if (b.at("name").get<std::string>() != name || b.at("rows").get<Eigen::Index>() != m.rows() ||
          b.at("cols").get<Eigen::Index>() != m.cols()) {
        throw InputError("RDCK: parameter layout mismatch at " + name);
      }
      const std::size_t need = static_cast<std::size_t>(m.size()) * 8;
      if (bytes.size() < pos + need) throw InputError("RDCK: truncated parameter data");
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(bytes, pos + 8 * static_cast<std::size_t>(i));
      pos += need;
    });
    if (idx != blocks.size()) throw InputError("RDCK: unexpected extra parameter blocks");
    if (pos != bytes.size()) throw InputError("RDCK: trailing bytes after parameters");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("RDCK: malformed header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("RDCK: invalid header values: ") + e.what());
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_file(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

bool params_identical(const DenoiserParams& a, const DenoiserParams& b) {
  if (!(a.config == b.config)) return false;
  std::vector<const Matrix*> lhs;
  for_each_param(a, [&](const std::string&, const Matrix& m) { lhs.push_back(&m); });
  std::size_t i = 0;
  bool same = true;
  for_each_param(b, [&](const std::string&, const Matrix& m) {
    if (i >= lhs.size()) {
      same = false;
      return;
    }
    const Matrix& l = *lhs[i++];
    same = same && l.rows() == m.rows() && l.cols() == m.cols() &&
           std::memcmp(l.data(), m.data(), static_cast<std::size_t>(m.size()) * sizeof(double)) == 0;
  });
  return same && i == lhs.size();
}

}  // namespace refdiff::denoiser
