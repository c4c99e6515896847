#include "calib/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace calib {

namespace {

constexpr std::string_view kMagic = "calib-checkpoint";

std::string hex_encode(std::string_view bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 15]);
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

/// Walks the text line by line, remembering where each line starts for error messages.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  std::string_view next(std::string_view expected_what) {
    if (pos_ >= text_.size()) fail("unexpected end of file, expected " + std::string(expected_what));
    line_start_ = pos_;
    ++line_no_;
    const auto nl = text_.find('\n', pos_);
    if (nl == std::string_view::npos) fail("unterminated line, expected " + std::string(expected_what));
    auto line = text_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return line;
  }

  bool at_end() const { return pos_ >= text_.size(); }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError("checkpoint: " + what, line_no_, line_start_); }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
  std::size_t line_no_ = 0;
};

template <class Int>
bool parse_int(std::string_view text, Int& out) {
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && !text.empty();
}

std::string_view expect_key(LineReader& in, std::string_view key) {
  auto line = in.next(key);
  if (line.substr(0, key.size()) != key || line.size() <= key.size() || line[key.size()] != ' ')
    in.fail("expected '" + std::string(key) + " <value>'");
  return line.substr(key.size() + 1);
}

template <class Int>
Int expect_int(LineReader& in, std::string_view key) {
  Int v{};
  if (!parse_int(expect_key(in, key), v)) in.fail("malformed integer for '" + std::string(key) + "'");
  return v;
}

void append_list(std::string& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(',');
    out += format_real(values[i]);
  }
}

}  // namespace

std::string format_checkpoint(const CalibrationState& state, std::string_view scheduler_state) {
  std::string out;
  out += std::string(kMagic) + "\n";
  out += "version " + std::to_string(kCheckpointVersion) + "\n";
  out += "master_seed " + std::to_string(state.master_seed()) + "\n";
  out += "batch_count " + std::to_string(state.batch_count()) + "\n";
  const auto& space = state.space();
  out += "dims " + std::to_string(space.size()) + "\n";
  for (const auto& d : space.dims()) {
    if (d.name.find_first_of(" \t\n,") != std::string::npos)
      throw DomainError("parameter name '" + d.name + "' contains whitespace or a comma");
    out += "dim " + d.name + " " + format_real(d.lower) + " " + format_real(d.upper) + " " + format_real(d.step) + "\n";
  }
  out += "records " + std::to_string(state.size()) + "\n";
  for (const auto& r : state.records()) {
    out += std::to_string(r.batch_index);
    out += ' ';
    out += to_string(r.sampler);
    out += ' ';
    append_list(out, r.params.coords);
    out += ' ';
    append_list(out, r.ensemble_losses);
    out += ' ';
    out += format_real(r.loss);
    out += '\n';
  }
  out += "scheduler_state " + (scheduler_state.empty() ? std::string("-") : hex_encode(scheduler_state)) + "\n";
  out += "end\n";
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  LineReader in(text);
  if (in.next("header") != kMagic) in.fail("missing checkpoint header");
  const int version = expect_int<int>(in, "version");
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  const auto master_seed = expect_int<std::uint64_t>(in, "master_seed");
  const auto batch_count = expect_int<std::int64_t>(in, "batch_count");
  const auto n_dims = expect_int<std::size_t>(in, "dims");
  if (n_dims == 0) in.fail("space needs at least one dimension");

  std::vector<ParameterDim> dims;
  for (std::size_t i = 0; i < n_dims; ++i) {
    const auto fields = split(expect_key(in, "dim"), ' ');
    ParameterDim d;
    if (fields.size() != 4 || !parse_real(fields[1], d.lower) || !parse_real(fields[2], d.upper) ||
        !parse_real(fields[3], d.step))
      in.fail("malformed dimension line");
    d.name = std::string(fields[0]);
    dims.push_back(std::move(d));
  }
  ParameterSpace space;
  try {
    space = ParameterSpace(std::move(dims));
  } catch (const DomainError& e) {
    in.fail(e.what());
  }

  const auto n_records = expect_int<std::size_t>(in, "records");
  CalibrationState state(space, master_seed);
  std::int64_t last_batch = -1;
  for (std::size_t i = 0; i < n_records; ++i) {
    const auto fields = split(in.next("record"), ' ');
    if (fields.size() != 5) in.fail("record needs 5 fields");
    EvaluationRecord r;
    if (!parse_int(fields[0], r.batch_index)) in.fail("malformed batch index");
    try {
      r.sampler = sampler_id_from_string(fields[1]);
    } catch (const ConfigError& e) {
      in.fail(e.what());
    }
    for (auto tok : split(fields[2], ',')) {
      double v;
      if (!parse_real(tok, v)) in.fail("malformed coordinate");
      r.params.coords.push_back(v);
    }
    for (auto tok : split(fields[3], ',')) {
      double v;
      if (!parse_real(tok, v)) in.fail("malformed ensemble loss");
      r.ensemble_losses.push_back(v);
    }
    if (!parse_real(fields[4], r.loss)) in.fail("malformed loss");
    if (r.batch_index < last_batch || r.batch_index >= batch_count) in.fail("record batch index out of order");
    last_batch = r.batch_index;
    try {
      state.append(std::move(r));
    } catch (const DomainError& e) {
      in.fail(e.what());
    }
  }
  for (std::int64_t b = 0; b < batch_count; ++b) state.close_batch();

  const auto hex = expect_key(in, "scheduler_state");
  std::string blob;
  if (hex != "-") {
    if (hex.size() % 2 != 0) in.fail("odd-length scheduler state");
    blob.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
      const int hi = hex_value(hex[i]);
      const int lo = hex_value(hex[i + 1]);
      if (hi < 0 || lo < 0) in.fail("non-hex scheduler state");
      blob.push_back(static_cast<char>(hi * 16 + lo));
    }
  }
  if (in.next("end marker") != "end") in.fail("missing end marker");
  if (!in.at_end()) in.fail("trailing data after end marker");
  return {std::move(state), std::move(blob)};
}

void checkpoint_save(const CalibrationState& state, std::string_view scheduler_state,
                     const std::filesystem::path& path) {
  const auto text = format_checkpoint(state, scheduler_state);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string(), 0, 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace calib
