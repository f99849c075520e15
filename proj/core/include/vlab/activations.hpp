#pragma once

// Site activations gathered from cached forwards, and a binary dump format so
// probes can be rerun without touching the model.
//
// Dump layout: a text header of "key value" lines ending with "end\n",
// followed by float32 little-endian payload, site-major, each site a
// row-major [prompts x width] block.
//
//   vlab-activations 1
//   config_hash <hex>
//   dtype f32le
//   prompts <n>
//   ids <id> <id> ...
//   sites <m>
//   site <label> <width>        (m lines)
//   end

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlab/numkit.hpp"
#include "vlab/taskgen.hpp"
#include "vlab/toymodel.hpp"

namespace vlab {

// One [records x width] matrix per site, rows in record order.
std::vector<Matrix> collect_activations(const Model& model, std::span<const PromptRecord> records,
                                        std::span<const HookSite> sites);

struct ActivationDump {
  std::string config_hash;
  std::vector<int> prompt_ids;
  std::vector<HookSite> sites;
  std::vector<std::vector<float>> blocks;  // per site, prompts * width values

  std::size_t width(std::size_t site_index) const;
  // Block widened to double; identical to the live values rounded to float.
  Matrix rows(std::size_t site_index) const;
  std::size_t find(const HookSite& site) const;  // throws DomainError if absent
};

ActivationDump make_dump(const Model& model, std::span<const PromptRecord> records,
                         std::span<const HookSite> sites);

void write_dump(std::ostream& os, const ActivationDump& dump);
// Throws ParseError (with byte offset) on malformed or truncated input and
// DomainError when expected_hash is given and does not match.
ActivationDump read_dump(std::istream& is, const std::optional<std::string>& expected_hash = {});

void save_dump(const std::filesystem::path& path, const ActivationDump& dump);
ActivationDump load_dump(const std::filesystem::path& path,
                         const std::optional<std::string>& expected_hash = {});

// Rounds each value through float, the precision dumps store.
Matrix round_to_float(const Matrix& m);

}  // namespace vlab
