#include "bustr/nn/checkpoint.hpp"

#include "bustr/error.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace bustr::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'B', 'U', 'S', 'T', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::istream& in) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) fail(ErrorCode::schema_mismatch, "truncated checkpoint");
    value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, const ParamList& params) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const Parameter* p : params) {
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const float f = static_cast<float>(p->value.data()[i]);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof(bits));
      put_le<std::uint32_t>(out, bits);
    }
  }
  if (!out) fail(ErrorCode::io_failure, "write failed for " + path.string());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_file, "checkpoint not found: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) fail(ErrorCode::schema_mismatch, "not a checkpoint: " + path.string());
  if (get_le<std::uint32_t>(in) != kVersion) fail(ErrorCode::schema_mismatch, "unsupported checkpoint version");
  const auto header_len = get_le<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) fail(ErrorCode::schema_mismatch, "truncated checkpoint header");

  CheckpointFile file;
  try {
    file.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::schema_mismatch, std::string("bad checkpoint header: ") + e.what());
  }
  for (const auto& t : file.header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto bits = get_le<std::uint32_t>(in);
      float f = 0.0F;
      std::memcpy(&f, &bits, sizeof(f));
      m.data()[i] = static_cast<double>(f);
    }
    file.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  return file;
}

void load_parameters(const CheckpointFile& file, const ParamList& params) {
  for (Parameter* p : params) {
    auto it = file.tensors.find(p->name);
    if (it == file.tensors.end()) fail(ErrorCode::schema_mismatch, "checkpoint lacks tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      fail(ErrorCode::schema_mismatch, "shape mismatch for tensor " + p->name);
    }
    p->value = it->second;
  }
}

}  // namespace bustr::nn
