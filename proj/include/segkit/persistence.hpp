#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "segkit/architectures.hpp"

namespace segkit {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'G', 'K', 'C', 'K', 'P', 'T'};

struct NamedArray {
  std::string name;
  ParamRole role = ParamRole::kTrainable;
  Tensorf values;
};

// Resumable optimizer/loop state stored next to the parameters.
struct TrainingState {
  nlohmann::json meta = nlohmann::json::object();  // epochs, optimizer kind, best metric, ...
  std::map<std::string, Tensorf> optimizer_slots;
};

// In-memory image of a checkpoint file. `spec` is empty for bare parameter
// archives (foreign weights awaiting import).
struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::optional<ModelSpec> spec;
  std::vector<NamedArray> parameters;
  std::optional<TrainingState> training;
};

// Serializes to bytes; identical contents give identical bytes.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
// Throws CheckpointError on malformed input and ChecksumError on a CRC
// mismatch.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Atomic write (temp file + rename).
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const SegmentationModel& model, const TrainingState* training = nullptr);

void save_checkpoint(const SegmentationModel& model, const std::filesystem::path& path,
                     const TrainingState* training = nullptr);

// Rebuilds the model. With `expected_spec`, every field except
// pretrained_source must match. The parameter manifest must match the
// assembled architecture exactly: missing, unexpected or mis-shaped arrays
// are reported by name.
SegmentationModel load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<ModelSpec>& expected_spec = std::nullopt,
                                  TrainingState* training = nullptr);
SegmentationModel model_from_checkpoint(const Checkpoint& checkpoint,
                                        const std::optional<ModelSpec>& expected_spec = std::nullopt);

// Copies every array of `checkpoint` into an existing model with the same
// manifest.
void restore_parameters(SegmentationModel& model, const Checkpoint& checkpoint);

// Two-column text table: `<foreign name> <canonical name>` per line;
// blank lines and lines starting with '#' are ignored.
using TranslationTable = std::vector<std::pair<std::string, std::string>>;
TranslationTable parse_translation_table(const std::string& text);
TranslationTable read_translation_table(const std::filesystem::path& path);

// Copies foreign arrays into `model` under their canonical names and marks
// the spec with `source`. Returns the number of arrays imported. Unknown
// names or differing shapes throw CheckpointError; nothing is reshaped.
std::size_t import_pretrained(SegmentationModel& model, const Checkpoint& foreign,
                              const TranslationTable& table, const std::string& source);

}  // namespace segkit
