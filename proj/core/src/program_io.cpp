#include "flight/program_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace flight::pio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'F', 'L', 'I', 'S'};

std::string program_filename(isa::Stage stage, uint32_t bucket) {
  std::ostringstream os;
  os << isa::to_string(stage) << "_" << std::setw(4) << std::setfill('0') << bucket << ".flis";
  return os.str();
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_program(const isa::Program& p, const std::string& path) {
  std::vector<uint8_t> bytes(64, 0);
  std::memcpy(bytes.data(), kMagic, 4);
  uint16_t ver = kProgramVersion;
  std::memcpy(bytes.data() + 4, &ver, 2);
  bytes[6] = static_cast<uint8_t>(p.stage);
  bytes[7] = 0;
  uint32_t bucket = p.bucket_len;
  std::memcpy(bytes.data() + 8, &bucket, 4);
  std::memcpy(bytes.data() + 12, &p.layer_lo, 2);
  std::memcpy(bytes.data() + 14, &p.layer_hi, 2);
  uint32_t count = static_cast<uint32_t>(p.code.size());
  std::memcpy(bytes.data() + 16, &count, 4);

  bytes.reserve(p.binary_size());
  for (const isa::Instruction& inst : p.code) {
    isa::Word w = isa::encode_instruction(inst);
    bytes.insert(bytes.end(), w.begin(), w.end());
  }
  write_file(path, bytes);
}

isa::Program read_program(const std::string& path) {
  std::vector<uint8_t> bytes = read_file(path);
  if (bytes.size() < 64 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::Format, "not a FLIS program: " + path);
  uint16_t ver;
  std::memcpy(&ver, bytes.data() + 4, 2);
  if (ver != kProgramVersion) fail(ErrorKind::Format, "unsupported program version");

  isa::Program p;
  p.stage = static_cast<isa::Stage>(bytes[6]);
  uint32_t bucket, count;
  std::memcpy(&bucket, bytes.data() + 8, 4);
  std::memcpy(&p.layer_lo, bytes.data() + 12, 2);
  std::memcpy(&p.layer_hi, bytes.data() + 14, 2);
  std::memcpy(&count, bytes.data() + 16, 4);
  p.bucket_len = bucket;
  if (bytes.size() != 64 + 16ull * count) fail(ErrorKind::Format, "program size mismatch");
  p.code.reserve(count);
  for (uint32_t i = 0; i < count; i++) {
    isa::Word w;
    std::memcpy(w.data(), bytes.data() + 64 + 16ull * i, 16);
    p.code.push_back(isa::decode_instruction(w));
  }
  return p;
}

const isa::Program& LoadedLibrary::find(isa::Stage stage, uint32_t bucket) const {
  for (const isa::Program& p : programs)
    if (p.stage == stage && p.bucket_len == bucket) return p;
  fail(ErrorKind::Format, std::string("library has no ") + isa::to_string(stage) +
                              " program for bucket " + std::to_string(bucket));
}

void write_library(const comp::ProgramLibrary& lib, const compress::Container& container,
                   const std::string& dir) {
  fs::create_directories(dir);

  json manifest;
  manifest["model"] = {
      {"num_layers", lib.model.num_layers},
      {"hidden_dim", lib.model.hidden_dim},
      {"num_heads", lib.model.num_heads},
      {"head_dim", lib.model.head_dim},
      {"ffn_dim", lib.model.ffn_dim},
      {"activation", lib.model.activation == ir::Activation::Relu   ? "relu"
                     : lib.model.activation == ir::Activation::Gelu ? "gelu"
                                                                    : "silu"},
      {"norm", "layernorm"},
      {"max_seq_len", lib.model.max_seq_len},
      {"has_lm_head", lib.model.has_lm_head},
  };
  manifest["hardware"] = json::parse(hw::hw_config_to_json(lib.hw));
  manifest["schedule"] = json::parse(hw::schedule_to_json(lib.sched));
  manifest["params_file"] = "params.bin";
  manifest["container_file"] = "weights.flcm";
  manifest["seed"] = container.seed;

  json progs = json::array();
  for (const comp::CompiledProgram& cp : lib.programs) {
    const isa::Program& p = cp.program;
    std::string fname = program_filename(p.stage, p.bucket_len);
    write_program(p, (fs::path(dir) / fname).string());
    json tables = json::array();
    for (const isa::BaseTable& t : p.slr_bases) tables.push_back(t);
    progs.push_back({{"stage", isa::to_string(p.stage)},
                     {"bucket", p.bucket_len},
                     {"file", fname},
                     {"instructions", p.code.size()},
                     {"base_tables", tables}});
  }
  manifest["programs"] = progs;

  std::vector<uint8_t> params = comp::encode_params(lib.params);
  write_file((fs::path(dir) / "params.bin").string(), params);
  compress::write_container(container, (fs::path(dir) / "weights.flcm").string());

  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) fail(ErrorKind::Io, "cannot write manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

LoadedLibrary read_library(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) fail(ErrorKind::Io, "cannot open manifest in " + dir);
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const std::exception& e) {
    fail(ErrorKind::Format, std::string("manifest parse: ") + e.what());
  }

  LoadedLibrary lib;
  lib.model = ir::model_config_from_json_text(manifest.at("model").dump());
  lib.hw = hw::hw_config_from_json_text(manifest.at("hardware").dump());
  lib.sched = hw::schedule_from_json_text(manifest.at("schedule").dump());
  lib.container = compress::read_container(
      (fs::path(dir) / manifest.at("container_file").get<std::string>()).string());
  std::vector<uint8_t> pbytes =
      read_file((fs::path(dir) / manifest.at("params_file").get<std::string>()).string());
  lib.params = comp::decode_params(pbytes);

  for (const json& pj : manifest.at("programs")) {
    isa::Program p = read_program((fs::path(dir) / pj.at("file").get<std::string>()).string());
    for (const json& tj : pj.at("base_tables")) {
      isa::BaseTable t{};
      for (int r = 0; r < isa::kNumRegions; r++) t[r] = tj.at(r).get<uint32_t>();
      p.slr_bases.push_back(t);
    }
    lib.programs.push_back(std::move(p));
  }
  return lib;
}

}  // namespace flight::pio
