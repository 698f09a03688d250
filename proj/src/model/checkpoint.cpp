#include <string>

#include "rwd/binary_io.hpp"
#include "rwd/error.hpp"
#include "rwd/model/reward_model.hpp"

namespace rwd::model {
namespace {

constexpr std::string_view kMagic = "RWDM";

void write_sizes(io::ByteWriter& w, const std::vector<std::size_t>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (std::size_t x : v) w.u32(static_cast<std::uint32_t>(x));
}

std::vector<std::size_t> read_sizes(io::ByteReader& r) {
  const std::uint32_t n = r.u32();
  if (n > 64) r.fail_format("implausible layer count " + std::to_string(n));
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = r.u32();
  return v;
}

}  // namespace

void save_checkpoint(const RewardModel& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  io::ByteWriter w;
  w.magic(kMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.token_dim));
  w.u32(static_cast<std::uint32_t>(c.proj_dim));
  w.u32(static_cast<std::uint32_t>(c.tokens_per_view));
  w.u32(static_cast<std::uint32_t>(c.num_views));
  w.u32(static_cast<std::uint32_t>(c.goal_dim));
  w.u32(static_cast<std::uint32_t>(c.film_layers));
  write_sizes(w, c.head_widths);
  write_sizes(w, c.film_generator_widths);
  w.f64(c.leaky_slope);
  w.f64(c.layernorm_eps);

  RewardModelParams copy = model.params();
  const auto tensors = tensor_views(copy);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  std::vector<float> narrow;
  for (const auto& t : tensors) {
    w.u32(static_cast<std::uint32_t>(t.rows));
    w.u32(static_cast<std::uint32_t>(t.cols));
    narrow.assign(t.data.begin(), t.data.end());
    w.f32_array(narrow);
  }
  io::write_file(path, w.bytes());
}

RewardModel load_checkpoint(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path), path.string());
  r.expect_magic(kMagic);
  const std::uint16_t version = r.u16();
  if (version > kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(version) + " (this build reads up to " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (version == 0) r.fail_format("invalid checkpoint version 0");

  ModelConfig c;
  c.token_dim = r.u32();
  c.proj_dim = r.u32();
  c.tokens_per_view = r.u32();
  c.num_views = r.u32();
  c.goal_dim = r.u32();
  c.film_layers = r.u32();
  c.head_widths = read_sizes(r);
  c.film_generator_widths = read_sizes(r);
  c.leaky_slope = r.f64();
  c.layernorm_eps = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail_format(e.what());
  }

  // A fresh model supplies the expected tensor layout; its values are overwritten.
  RewardModel model(c, 0);
  auto tensors = tensor_views(model.mutable_params());
  const std::uint32_t count = r.u32();
  if (count != tensors.size()) {
    r.fail_format("expected " + std::to_string(tensors.size()) + " tensors, found " +
                  std::to_string(count));
  }
  std::vector<float> buf;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != tensors[i].rows || cols != tensors[i].cols) {
      r.fail_format("tensor " + std::to_string(i) + " has shape " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", expected " + std::to_string(tensors[i].rows) + "x" +
                    std::to_string(tensors[i].cols));
    }
    buf.resize(static_cast<std::size_t>(rows) * cols);
    r.f32_array(buf);
    std::copy(buf.begin(), buf.end(), tensors[i].data.begin());
  }
  if (r.remaining() != 0) r.fail_format("trailing bytes after last tensor");
  return model;
}

}  // namespace rwd::model
