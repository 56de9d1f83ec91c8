#include "hfusion/checkpoint.h"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hfusion/errors.h"

namespace hfusion {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'H', 'F', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw RuntimeFailure("truncated checkpoint: " + path.string());
  }
  return value;
}

std::string get_string(std::istream& in, std::size_t len, const fs::path& path) {
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), static_cast<std::streamsize>(len))) {
    throw RuntimeFailure("truncated checkpoint: " + path.string());
  }
  return s;
}

}  // namespace

const torch::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw RuntimeFailure("checkpoint has no tensor named " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, ckpt.version);
    const std::string config = ckpt.config.dump();
    put<std::uint64_t>(out, config.size());
    out.write(config.data(), static_cast<std::streamsize>(config.size()));
    put<std::uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, tensor] : ckpt.tensors) {
      const torch::Tensor t = tensor.detach().contiguous().cpu();
      std::uint8_t dtype = 0;
      if (t.scalar_type() == torch::kFloat32) {
        dtype = 0;
      } else if (t.scalar_type() == torch::kFloat64) {
        dtype = 1;
      } else {
        throw RuntimeFailure("unsupported tensor dtype for " + name);
      }
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, dtype);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.sizes()) put<std::int64_t>(out, d);
      out.write(static_cast<const char*>(t.data_ptr()),
                static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw RuntimeFailure("failed writing checkpoint: " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IngestError("not a checkpoint file: " + path.string());
  }
  Checkpoint ckpt;
  ckpt.version = get<std::uint32_t>(in, path);
  if (ckpt.version != Checkpoint::kFormatVersion) {
    throw IngestError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const auto config_len = get<std::uint64_t>(in, path);
  ckpt.config = nlohmann::ordered_json::parse(get_string(in, config_len, path));
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name = get_string(in, name_len, path);
    const auto dtype = get<std::uint8_t>(in, path);
    const auto ndim = get<std::uint32_t>(in, path);
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = get<std::int64_t>(in, path);
    const auto type = dtype == 0 ? torch::kFloat32 : torch::kFloat64;
    torch::Tensor t = torch::empty(dims, torch::TensorOptions().dtype(type));
    const auto bytes = static_cast<std::streamsize>(t.numel() * t.element_size());
    if (bytes > 0 && !in.read(static_cast<char*>(t.data_ptr()), bytes)) {
      throw RuntimeFailure("truncated checkpoint: " + path.string());
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

std::vector<std::pair<std::string, torch::Tensor>> module_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

void load_module_state(torch::nn::Module& module, const Checkpoint& ckpt,
                       const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& dst) {
    const torch::Tensor& src = ckpt.tensor(prefix + name);
    if (src.sizes() != dst.sizes()) {
      throw ShapeError("shape mismatch for tensor " + prefix + name);
    }
    dst.copy_(src.to(dst.dtype()));
  };
  for (auto& item : module.named_parameters(true)) copy_into(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) copy_into(item.key(), item.value());
}

torch::Tensor image_to_tensor(const Image& image) {
  auto t = torch::from_blob(const_cast<float*>(image.data.data()),
                            {image.height, image.width, image.channels}, torch::kFloat32);
  // clone: for one channel the permute is already contiguous and would alias.
  return t.permute({2, 0, 1}).clone(torch::MemoryFormat::Contiguous);
}

Image tensor_to_image(const torch::Tensor& chw) {
  const torch::Tensor hwc =
      chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous().cpu();
  Image out(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)),
            static_cast<int>(hwc.size(2)));
  std::memcpy(out.data.data(), hwc.data_ptr<float>(), out.data.size() * sizeof(float));
  return out;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  // FNV-1a, 64 bit.
  std::uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

}  // namespace hfusion
