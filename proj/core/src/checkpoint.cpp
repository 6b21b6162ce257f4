#include "distillab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace distillab {

using nlohmann::json;

namespace {
constexpr char kBinaryMagic[8] = {'d', 'l', 'c', 'k', 'p', 't', '0', '1'};
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

std::string checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["format_version"] = c.format_version;
  j["kind"] = c.kind;
  j["step"] = c.step;
  j["meta"] = json::parse(c.meta_json);
  json tensors = json::object();
  for (const auto& [name, t] : c.tensors) {
    json entry;
    entry["shape"] = t.shape();
    entry["data"] = t.values();
    tensors[name] = std::move(entry);
  }
  j["tensors"] = std::move(tensors);
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: corrupt payload: ") + e.what());
  }
  Checkpoint c;
  c.format_version = j.at("format_version").get<int>();
  if (c.format_version != 1)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(c.format_version));
  c.kind = j.at("kind").get<std::string>();
  c.step = j.at("step").get<int64_t>();
  c.meta_json = j.at("meta").dump();
  for (auto& [name, entry] : j.at("tensors").items()) {
    auto shape = entry.at("shape").get<std::vector<int>>();
    auto data = entry.at("data").get<std::vector<double>>();
    c.tensors.emplace_back(name, Tensor(shape, std::move(data)));
  }
  return c;
}

std::vector<uint8_t> checkpoint_to_binary(const Checkpoint& c) {
  json header;
  header["format_version"] = c.format_version;
  header["kind"] = c.kind;
  header["step"] = c.step;
  header["meta"] = json::parse(c.meta_json);
  json table = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["count"] = t.size();
    table.push_back(std::move(entry));
    offset += static_cast<uint64_t>(t.size()) * sizeof(double);
  }
  header["tensors"] = std::move(table);
  std::string htext = header.dump();

  std::vector<uint8_t> out;
  out.reserve(sizeof(kBinaryMagic) + 8 + htext.size() + offset);
  out.insert(out.end(), kBinaryMagic, kBinaryMagic + sizeof(kBinaryMagic));
  uint64_t hlen = htext.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((hlen >> (8 * i)) & 0xff));
  out.insert(out.end(), htext.begin(), htext.end());
  for (const auto& [name, t] : c.tensors) {
    size_t pos = out.size();
    out.resize(pos + static_cast<size_t>(t.size()) * sizeof(double));
    std::memcpy(out.data() + pos, t.data(), static_cast<size_t>(t.size()) * sizeof(double));
  }
  return out;
}

Checkpoint checkpoint_from_binary(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < sizeof(kBinaryMagic) + 8 ||
      std::memcmp(bytes.data(), kBinaryMagic, sizeof(kBinaryMagic)) != 0)
    throw std::runtime_error("checkpoint: corrupt payload: bad magic");
  uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i)
    hlen |= static_cast<uint64_t>(bytes[sizeof(kBinaryMagic) + static_cast<size_t>(i)]) << (8 * i);
  size_t hstart = sizeof(kBinaryMagic) + 8;
  if (bytes.size() < hstart + hlen)
    throw std::runtime_error("checkpoint: corrupt payload: truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<long>(hstart),
                         bytes.begin() + static_cast<long>(hstart + hlen));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: corrupt payload: ") + e.what());
  }
  Checkpoint c;
  c.format_version = header.at("format_version").get<int>();
  if (c.format_version != 1)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(c.format_version));
  c.kind = header.at("kind").get<std::string>();
  c.step = header.at("step").get<int64_t>();
  c.meta_json = header.at("meta").dump();
  size_t payload = hstart + hlen;
  for (const auto& entry : header.at("tensors")) {
    auto name = entry.at("name").get<std::string>();
    auto shape = entry.at("shape").get<std::vector<int>>();
    uint64_t offset = entry.at("offset").get<uint64_t>();
    uint64_t count = entry.at("count").get<uint64_t>();
    if (payload + offset + count * sizeof(double) > bytes.size())
      throw std::runtime_error("checkpoint: corrupt payload: truncated tensor '" + name + "'");
    std::vector<double> data(count);
    std::memcpy(data.data(), bytes.data() + payload + offset, count * sizeof(double));
    c.tensors.emplace_back(name, Tensor(shape, std::move(data)));
  }
  return c;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    f << checkpoint_to_json(c);
  } else {
    auto bytes = checkpoint_to_binary(c);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
  }
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
    return checkpoint_from_json(std::string(bytes.begin(), bytes.end()));
  return checkpoint_from_binary(bytes);
}

}  // namespace distillab
