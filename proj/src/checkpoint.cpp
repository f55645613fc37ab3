// Binary checkpoint format:
//   magic "SCRCKPT\0" | u32 version | config (6 x u64, f64 dropout, u64 seed)
//   | u32 meta length | JSON metadata | tensors as LE float32 in visit order
//   | u32 crc32 of all preceding bytes

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "scr/binio.hpp"
#include "scr/encoder.hpp"

namespace scr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'S', 'C', 'R', 'C', 'K', 'P', 'T', '\0'};
}

std::string checkpoint_bytes(const EncoderParams<float>& params, const CheckpointMeta& meta) {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  const auto& c = params.config;
  for (std::size_t v : {c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_len, c.vocab_size}) w.u64(v);
  w.f64(c.dropout_rate);
  w.u64(c.seed);
  const nlohmann::json j{{"model", meta.model},
                         {"fusion", meta.fusion},
                         {"n", meta.n},
                         {"ance", meta.ance},
                         {"epoch", meta.epoch},
                         {"validation_metric", meta.validation_metric},
                         {"negative_provenance", meta.negative_provenance}};
  w.str(j.dump());
  params.visit([&](const std::string&, const Mat<float>& m) { w.raw(m.data(), sizeof(float) * m.size()); });
  w.u32(crc32_of(w.bytes()));
  return w.take();
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& params,
                     const CheckpointMeta& meta) {
  write_file(path, checkpoint_bytes(params, meta));
}

EncoderParams<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  const std::string bytes = read_file(path);
  // Header first, so a version or kind mismatch is reported as such.
  if (bytes.size() < sizeof kMagic + 8) throw CorruptionError(path.string() + ": truncated checkpoint");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw KindError(path.string() + ": not a checkpoint");
  ByteReader r(bytes.data(), bytes.size() - 4);
  char magic[8];
  r.raw(magic, sizeof magic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionError(path.string() + ": checkpoint version " + std::to_string(version) + " unsupported");
  verify_crc32(bytes, path.string());
  EncoderConfig c;
  c.d_model = r.u64();
  c.n_layers = r.u64();
  c.n_heads = r.u64();
  c.d_ff = r.u64();
  c.max_len = r.u64();
  c.vocab_size = r.u64();
  c.dropout_rate = r.f64();
  c.seed = r.u64();
  const auto j = nlohmann::json::parse(r.str());
  if (meta) {
    meta->model = j.at("model").get<std::string>();
    meta->fusion = j.at("fusion").get<std::string>();
    meta->n = j.at("n").get<std::size_t>();
    meta->ance = j.at("ance").get<bool>();
    meta->epoch = j.at("epoch").get<std::size_t>();
    meta->validation_metric = j.at("validation_metric").get<double>();
    meta->negative_provenance = j.at("negative_provenance").get<std::string>();
  }
  auto params = EncoderParams<float>::zeros(c);
  params.visit([&](const std::string&, Mat<float>& m) { r.raw(m.data(), sizeof(float) * m.size()); });
  if (!r.done()) throw CorruptionError(path.string() + ": trailing bytes in checkpoint");
  return params;
}

}  // namespace scr
