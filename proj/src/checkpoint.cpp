#include "phaseforge/checkpoint.hpp"

#include <fstream>

#include "phaseforge/errors.hpp"

namespace phaseforge {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const fs::path& path, const CheckpointBlob& blob) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("cannot write checkpoint " + path.string());

  json header = blob.header;
  json table = json::array();
  for (const auto& [name, t] : blob.params)
    table.push_back({{"name", name}, {"shape", t.shape()}});
  header["params"] = std::move(table);

  const std::string head = header.dump();
  const std::uint64_t len = head.size();
  f << kCheckpointMagic << '\n';
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& [name, t] : blob.params)
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!f) throw io_error("short write to checkpoint " + path.string());
}

CheckpointBlob load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot read checkpoint " + path.string());
  std::string magic;
  std::getline(f, magic);
  if (magic != kCheckpointMagic)
    throw io_error("bad checkpoint magic in " + path.string());
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string head(len, '\0');
  f.read(head.data(), static_cast<std::streamsize>(len));
  if (!f) throw io_error("truncated checkpoint header in " + path.string());

  CheckpointBlob blob;
  blob.header = json::parse(head);
  for (const auto& entry : blob.header.at("params")) {
    Tensor t(entry.at("shape").get<std::vector<std::size_t>>());
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    blob.params.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  if (!f) throw io_error("truncated checkpoint payload in " + path.string());
  blob.header.erase("params");
  return blob;
}

}  // namespace phaseforge
