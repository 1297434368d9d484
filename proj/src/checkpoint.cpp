#include "trajphen/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace trajphen {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'P', 'H', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

uint64_t read_u64(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  uint64_t v;
  std::memcpy(&v, buf, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& params,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["meta"] = meta;
  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& p : params.items()) {
    nlohmann::json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape();
    entry["offset"] = offset;
    index.push_back(entry);
    offset += static_cast<uint64_t>(p.tensor.numel());
  }
  header["tensors"] = index;
  std::string hjson = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  write_u64(os, hjson.size());
  os.write(hjson.data(), static_cast<std::streamsize>(hjson.size()));
  for (const auto& p : params.items()) {
    const auto& d = p.tensor.data();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is not a checkpoint file");
  }
  uint64_t hlen = read_u64(is);
  std::string hjson(hlen, '\0');
  is.read(hjson.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("load_checkpoint: truncated header in '" + path + "'");
  nlohmann::json header = nlohmann::json::parse(hjson);

  std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const double* doubles = reinterpret_cast<const double*>(payload.data());
  uint64_t n_doubles = payload.size() / sizeof(double);

  LoadedCheckpoint out;
  out.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    uint64_t offset = entry.at("offset").get<uint64_t>();
    uint64_t numel = static_cast<uint64_t>(shape_numel(shape));
    if (offset + numel > n_doubles) {
      throw std::runtime_error("load_checkpoint: truncated payload for tensor '" + name + "'");
    }
    std::vector<double> data(doubles + offset, doubles + offset + numel);
    out.tensors.emplace(name, Tensor::from_data(shape, std::move(data)));
  }
  return out;
}

nlohmann::json load_checkpoint(const std::string& path, ParamRegistry& params) {
  LoadedCheckpoint raw = load_checkpoint_raw(path);
  for (auto& item : params.items()) {
    auto it = raw.tensors.find(item.name);
    if (it == raw.tensors.end()) {
      throw std::runtime_error("load_checkpoint: '" + path + "' is missing tensor '" + item.name + "'");
    }
    if (it->second.shape() != item.tensor.shape()) {
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + item.name + "': file has " +
                               shape_str(it->second.shape()) + ", model expects " +
                               shape_str(item.tensor.shape()));
    }
    Tensor* dst = params.find(item.name);
    dst->data() = it->second.data();
  }
  return raw.meta;
}

std::string sha256_bytes(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("sha256: EVP_MD_CTX_new failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("sha256_file: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return sha256_bytes(bytes);
}

}  // namespace trajphen
