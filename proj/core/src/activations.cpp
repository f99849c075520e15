#include "vlab/activations.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

#include "vlab/error.hpp"

namespace vlab {

namespace {

constexpr std::string_view kMagic = "vlab-activations 1";

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
  }
}

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view buf) : buf_(buf) {}

  std::size_t offset() const { return pos_; }

  // Next line without its newline; throws when the buffer ends first.
  std::string_view line() {
    const auto nl = buf_.find('\n', pos_);
    if (nl == std::string_view::npos) throw ParseError("activation dump: truncated header", buf_.size());
    std::string_view out = buf_.substr(pos_, nl - pos_);
    line_start_ = pos_;
    pos_ = nl + 1;
    return out;
  }

  // Value after "key " on the next line.
  std::string_view field(std::string_view key) {
    std::string_view l = line();
    if (l.size() <= key.size() || l.substr(0, key.size()) != key || l[key.size()] != ' ') {
      throw ParseError(fmt::format("activation dump: expected '{}'", key), line_start_);
    }
    return l.substr(key.size() + 1);
  }

  long long integer(std::string_view text) const {
    long long v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || v < 0) {
      throw ParseError(fmt::format("activation dump: bad integer '{}'", text), line_start_);
    }
    return v;
  }

  std::size_t line_start() const { return line_start_; }

 private:
  std::string_view buf_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

}  // namespace

std::vector<Matrix> collect_activations(const Model& model, std::span<const PromptRecord> records,
                                        std::span<const HookSite> sites) {
  if (records.empty()) throw DomainError("collect_activations: no records");
  std::vector<Matrix> out;
  out.reserve(sites.size());
  for (const HookSite& s : sites) {
    validate_site(model.config(), s, 0);
    out.emplace_back(records.size(), site_width(model.config(), s));
  }
  parallel_for(records.size(), [&](std::size_t r) {
    const ForwardResult fr = model.forward_cached(records[r].tokens);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      auto v = fr.cache.at(sites[i]);
      std::copy(v.begin(), v.end(), out[i].row(r).begin());
    }
  });
  return out;
}

std::size_t ActivationDump::width(std::size_t site_index) const {
  if (prompt_ids.empty()) return 0;
  return blocks.at(site_index).size() / prompt_ids.size();
}

Matrix ActivationDump::rows(std::size_t site_index) const {
  const std::vector<float>& b = blocks.at(site_index);
  Matrix m(prompt_ids.size(), width(site_index));
  auto d = m.data();
  for (std::size_t i = 0; i < b.size(); ++i) d[i] = static_cast<double>(b[i]);
  return m;
}

std::size_t ActivationDump::find(const HookSite& site) const {
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (sites[i] == site) return i;
  }
  throw DomainError(fmt::format("dump has no site {}", site.label()));
}

ActivationDump make_dump(const Model& model, std::span<const PromptRecord> records,
                         std::span<const HookSite> sites) {
  ActivationDump dump;
  dump.config_hash = model.config_hash();
  for (const PromptRecord& r : records) dump.prompt_ids.push_back(r.id);
  dump.sites.assign(sites.begin(), sites.end());
  for (const Matrix& m : collect_activations(model, records, sites)) {
    std::vector<float> block;
    block.reserve(m.data().size());
    for (double v : m.data()) block.push_back(static_cast<float>(v));
    dump.blocks.push_back(std::move(block));
  }
  return dump;
}

void write_dump(std::ostream& os, const ActivationDump& dump) {
  if (dump.blocks.size() != dump.sites.size()) throw DomainError("write_dump: site/block count mismatch");
  std::string header = fmt::format("{}\nconfig_hash {}\ndtype f32le\nprompts {}\nids", kMagic, dump.config_hash,
                                   dump.prompt_ids.size());
  for (int id : dump.prompt_ids) header += fmt::format(" {}", id);
  header += fmt::format("\nsites {}\n", dump.sites.size());
  for (std::size_t i = 0; i < dump.sites.size(); ++i) {
    if (dump.prompt_ids.empty() || dump.blocks[i].size() % dump.prompt_ids.size() != 0) {
      throw DomainError("write_dump: block size is not a multiple of the prompt count");
    }
    header += fmt::format("site {} {}\n", dump.sites[i].label(), dump.width(i));
  }
  header += "end\n";
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const std::vector<float>& block : dump.blocks) {
    for (float f : block) {
      const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(f));
      char bytes[4];
      std::memcpy(bytes, &le, 4);
      os.write(bytes, 4);
    }
  }
  if (!os) throw Error("write_dump: stream write failed");
}

ActivationDump read_dump(std::istream& is, const std::optional<std::string>& expected_hash) {
  const std::string buf{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  HeaderReader rd(buf);
  if (rd.line() != kMagic) throw ParseError("activation dump: bad magic", 0);

  ActivationDump dump;
  dump.config_hash = std::string(rd.field("config_hash"));
  if (expected_hash && *expected_hash != dump.config_hash) {
    throw DomainError(fmt::format("activation dump was produced by model {}, expected {}", dump.config_hash,
                                  *expected_hash));
  }
  if (rd.field("dtype") != "f32le") throw ParseError("activation dump: unsupported dtype", rd.line_start());
  const auto n_prompts = static_cast<std::size_t>(rd.integer(rd.field("prompts")));

  std::string_view ids = rd.line();
  if (ids.substr(0, 3) != "ids") throw ParseError("activation dump: expected 'ids'", rd.line_start());
  ids.remove_prefix(3);
  while (!ids.empty()) {
    if (ids.front() != ' ') throw ParseError("activation dump: malformed id list", rd.line_start());
    ids.remove_prefix(1);
    const auto sp = ids.find(' ');
    dump.prompt_ids.push_back(static_cast<int>(rd.integer(ids.substr(0, sp))));
    ids.remove_prefix(sp == std::string_view::npos ? ids.size() : sp);
  }
  if (dump.prompt_ids.size() != n_prompts) throw ParseError("activation dump: id count mismatch", rd.line_start());

  const auto n_sites = static_cast<std::size_t>(rd.integer(rd.field("sites")));
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i < n_sites; ++i) {
    std::string_view s = rd.field("site");
    const auto sp = s.rfind(' ');
    if (sp == std::string_view::npos) throw ParseError("activation dump: malformed site line", rd.line_start());
    try {
      dump.sites.push_back(HookSite::parse(s.substr(0, sp)));
    } catch (const Error& e) {
      throw ParseError(fmt::format("activation dump: {}", e.what()), rd.line_start());
    }
    widths.push_back(static_cast<std::size_t>(rd.integer(s.substr(sp + 1))));
  }
  if (rd.line() != "end") throw ParseError("activation dump: expected 'end'", rd.line_start());

  std::size_t off = rd.offset();
  for (std::size_t i = 0; i < n_sites; ++i) {
    const std::size_t count = n_prompts * widths[i];
    if (buf.size() - off < count * 4) {
      throw ParseError(fmt::format("activation dump: truncated payload for site {}", dump.sites[i].label()),
                       buf.size());
    }
    std::vector<float> block(count);
    for (std::size_t k = 0; k < count; ++k) {
      std::uint32_t le;
      std::memcpy(&le, buf.data() + off + 4 * k, 4);
      block[k] = std::bit_cast<float>(to_le(le));
    }
    off += count * 4;
    dump.blocks.push_back(std::move(block));
  }
  if (off != buf.size()) throw ParseError("activation dump: trailing bytes after payload", off);
  return dump;
}

void save_dump(const std::filesystem::path& path, const ActivationDump& dump) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(fmt::format("cannot open {} for writing", path.string()));
  write_dump(os, dump);
}

ActivationDump load_dump(const std::filesystem::path& path, const std::optional<std::string>& expected_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(fmt::format("cannot open {}", path.string()));
  return read_dump(is, expected_hash);
}

Matrix round_to_float(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace vlab
