#pragma once

// Line-delimited record files (*.rljson): one JSON object per line, each
// tagged with a versioned schema. The first line of a file written through
// RecordWriter is a header carrying the producing stage and config hash.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskroute/domain.hpp"

namespace riskroute {

using json = nlohmann::json;

/// 0-based offset of the byte a json parse error points at.
inline std::size_t json_error_offset(const json::parse_error& e) { return e.byte > 0 ? e.byte - 1 : 0; }

inline constexpr std::string_view kEpisodeSchema = "riskroute.episode/v1";
inline constexpr std::string_view kRoutingSchema = "riskroute.routing/v1";
inline constexpr std::string_view kHeaderSchema = "riskroute.header/v1";

/// Malformed record. `offset` is the byte position within the record (or
/// within the file, for errors raised by the file readers).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : std::runtime_error("parse error at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

std::string serialize_episode(const PerturbedEpisode& episode);
PerturbedEpisode deserialize_episode(std::string_view record);

std::string serialize_routing_example(const RoutingExample& example);
RoutingExample deserialize_routing_example(std::string_view record);

json split_to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const json& j);

/// Provenance header stored as the first record of every artifact.
struct ArtifactHeader {
  std::string stage;
  std::string config_hash;
  json extra = json::object();
};

json header_to_json(const ArtifactHeader& h);
ArtifactHeader header_from_json(const json& j);

class RecordWriter {
 public:
  RecordWriter(const std::filesystem::path& path, const ArtifactHeader& header);
  void write(std::string_view record);

 private:
  std::ofstream out_;
};

/// Reads a record file. Parse failures are rethrown with the absolute byte
/// offset of the failing record's first byte plus the in-record offset.
struct RecordFile {
  std::optional<ArtifactHeader> header;
  std::vector<std::string> records;
  /// Byte offset of each record's first byte within the file.
  std::vector<std::size_t> offsets;
};
RecordFile read_record_file(const std::filesystem::path& path);

void write_episodes(const std::filesystem::path& path, const ArtifactHeader& header,
                    const std::vector<PerturbedEpisode>& episodes);
std::vector<PerturbedEpisode> read_episodes(const std::filesystem::path& path,
                                            ArtifactHeader* header_out = nullptr);

void write_routing_examples(const std::filesystem::path& path, const ArtifactHeader& header,
                            const std::vector<RoutingExample>& examples);
std::vector<RoutingExample> read_routing_examples(const std::filesystem::path& path,
                                                  ArtifactHeader* header_out = nullptr);

}  // namespace riskroute
