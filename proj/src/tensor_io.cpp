#include "lips/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lips {
namespace {

static_assert(std::endian::native == std::endian::little,
              "LTSR I/O assumes a little-endian host");

constexpr std::array<char, 4> kMagic = {'L', 'T', 'S', 'R'};
constexpr uint32_t kMaxRank = 4;

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw InvalidInputError("LTSR: truncated header");
  return v;
}

}  // namespace

void write_ltsr(std::ostream& out, const Tensor& tensor) {
  require_shape(tensor.rank() >= 1, "cannot serialize an empty tensor");
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, static_cast<uint32_t>(tensor.rank()));
  for (int64_t e : tensor.shape()) write_u32(out, static_cast<uint32_t>(e));
  out.write(reinterpret_cast<const char*>(tensor.data().data()),
            static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  if (!out) throw InvalidInputError("LTSR: write failed");
}

Tensor read_ltsr(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidInputError("LTSR: bad magic");
  const uint32_t rank = read_u32(in);
  if (rank < 1 || rank > kMaxRank) {
    throw InvalidInputError("LTSR: unsupported rank " + std::to_string(rank));
  }
  Shape shape;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t e = read_u32(in);
    if (e == 0) throw InvalidInputError("LTSR: zero extent");
    shape.push_back(e);
  }
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw InvalidInputError("LTSR: truncated payload");
  return Tensor(std::move(shape), std::move(data));
}

void save_ltsr(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot open " + path.string() + " for writing");
  write_ltsr(out, tensor);
}

Tensor load_ltsr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open " + path.string());
  return read_ltsr(in);
}

void save_weight_dir(const std::filesystem::path& dir, const NamedTensors& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw InvalidInputError("cannot write manifest in " + dir.string());
  for (size_t i = 0; i < tensors.size(); ++i) {
    const std::string file = std::to_string(i) + ".ltsr";
    save_ltsr(dir / file, tensors[i].second);
    manifest << tensors[i].first << ' ' << file << '\n';
  }
}

NamedTensors load_weight_dir(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw InvalidInputError("no manifest.txt in " + dir.string());
  NamedTensors out;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, file;
    if (!(ls >> name >> file)) {
      throw InvalidInputError("manifest.txt:" + std::to_string(line_no) +
                              ": expected 'name file'");
    }
    out.emplace_back(name, load_ltsr(dir / file));
  }
  return out;
}

}  // namespace lips
