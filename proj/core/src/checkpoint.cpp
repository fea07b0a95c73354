#include "segloc/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <string>

#include <json.hpp>

#include "segloc/errors.hpp"

namespace segloc {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const Parameters& p = ck.params;
  json header;
  header["format"] = "segloc-checkpoint";
  header["version"] = 1;
  header["D"] = p.feature_dim();
  header["N"] = p.num_classes();
  header["seed"] = ck.seed;
  header["step"] = ck.step;
  json tensors = json::array();
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < Parameters::kCount; ++i) {
    tensors.push_back({{"name", Parameters::kNames[i]}, {"rows", ts[i]->rows()}, {"cols", ts[i]->cols()}});
  }
  header["tensors"] = tensors;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const Tensor2* t : ts) {
    for (double v : t->data()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (header.value("format", "") != "segloc-checkpoint") throw DataError(path.string() + ": not a segloc checkpoint");

  Checkpoint ck;
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.step = header.at("step").get<std::uint64_t>();
  const json& tensors = header.at("tensors");
  if (tensors.size() != Parameters::kCount) throw DataError(path.string() + ": unexpected tensor count");
  auto ts = ck.params.tensors();
  for (std::size_t i = 0; i < Parameters::kCount; ++i) {
    const json& t = tensors[i];
    if (t.at("name").get<std::string>() != Parameters::kNames[i]) {
      throw DataError(path.string() + ": tensor " + std::to_string(i) + " should be " +
                      std::string(Parameters::kNames[i]));
    }
    Tensor2 value(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>());
    for (double& v : value.data()) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw DataError(path.string() + ": truncated");
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      v = std::bit_cast<double>(bits);
    }
    *ts[i] = std::move(value);
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw DataError(path.string() + ": trailing bytes");
  const std::size_t D = header.at("D").get<std::size_t>();
  const std::size_t N = header.at("N").get<std::size_t>();
  if (ck.params.feature_dim() != D || ck.params.num_classes() != N || ck.params.sphere_weight.rows() != N) {
    throw DataError(path.string() + ": tensor shapes disagree with D/N");
  }
  return ck;
}

}  // namespace segloc
