// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "ofa/error.hpp"

namespace ofa {

namespace {

constexpr const char* kMagic = "OFACKPT1";

struct Entry {
  std::string name;
  const Tensor* tensor;
};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad(const std::filesystem::path& path, const std::string& what) {
  throw Error(ErrorKind::BadHeader, path.string() + ": " + what);
}

std::string expect_line(std::istream& in, const std::filesystem::path& path, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) bad(path, "missing '" + key + "' line");
  if (line.rfind(key, 0) != 0) bad(path, "expected '" + key + "', got '" + line + "'");
  return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VitParams& params, const AdamState* optimizer,
                     const nlohmann::json& meta) {
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < params.tensors.size(); ++k) entries.push_back({params.names[k], &params.tensors[k]});
  if (optimizer) {
    for (std::size_t k = 0; k < params.tensors.size(); ++k) entries.push_back({"adam.m." + params.names[k], &optimizer->m[k]});
    for (std::size_t k = 0; k < params.tensors.size(); ++k) entries.push_back({"adam.v." + params.names[k], &optimizer->v[k]});
  }

  std::ostringstream header;
  header << kMagic << '\n';
  header << "config " << nlohmann::json(params.config).dump() << '\n';
  header << "meta " << meta.dump() << '\n';
  if (optimizer) {
    const auto& h = optimizer->hyper;
    header << "adam " << optimizer->t << ' ' << fmt_double(h.lr) << ' ' << fmt_double(h.beta1) << ' '
           << fmt_double(h.beta2) << ' ' << fmt_double(h.eps) << '\n';
  }
  header << "tensors " << entries.size() << '\n';
  std::size_t offset = 0;
  for (const auto& e : entries) {
    header << e.name << ' ' << e.tensor->rows() << ' ' << e.tensor->cols() << ' ' << offset << '\n';
    offset += e.tensor->size() * sizeof(double);
  }
  header << "payload\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  const auto text = header.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries) {
    out.write(reinterpret_cast<const char*>(e.tensor->data()),
              static_cast<std::streamsize>(e.tensor->size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) bad(path, "not a checkpoint");

  Checkpoint ck;
  try {
    ck.params.config = nlohmann::json::parse(expect_line(in, path, "config")).get<VitConfig>();
    ck.meta = nlohmann::json::parse(expect_line(in, path, "meta"));
  } catch (const nlohmann::json::exception& e) {
    bad(path, e.what());
  }
  ck.params.config.validate();

  if (!std::getline(in, line)) bad(path, "truncated manifest");
  if (line.rfind("adam ", 0) == 0) {
    std::istringstream ss(line.substr(5));
    AdamState s;
    ss >> s.t >> s.hyper.lr >> s.hyper.beta1 >> s.hyper.beta2 >> s.hyper.eps;
    if (!ss) bad(path, "cannot parse '" + line + "'");
    ck.optimizer = std::move(s);
    if (!std::getline(in, line)) bad(path, "truncated manifest");
  }
  if (line.rfind("tensors ", 0) != 0) bad(path, "expected 'tensors', got '" + line + "'");
  const std::size_t count = std::stoul(line.substr(8));

  struct Dir {
    std::string name;
    std::size_t rows, cols, offset;
  };
  std::vector<Dir> dir(count);
  for (auto& d : dir) {
    if (!std::getline(in, line)) bad(path, "truncated tensor directory");
    std::istringstream ss(line);
    if (!(ss >> d.name >> d.rows >> d.cols >> d.offset)) bad(path, "cannot parse '" + line + "'");
  }
  expect_line(in, path, "payload");

  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<std::size_t>(in.tellg() - payload_start);
  std::size_t expected = 0;
  for (const auto& d : dir) {
    if (d.offset != expected) bad(path, "tensor " + d.name + " has a non-contiguous offset");
    expected += d.rows * d.cols * sizeof(double);
  }
  if (payload_bytes != expected) {
    throw Error(ErrorKind::PayloadMismatch, path.string() + ": payload is " + std::to_string(payload_bytes) +
                                                " bytes, directory describes " + std::to_string(expected));
  }
  in.seekg(payload_start);

  const auto layout = param_layout(ck.params.config);
  const std::size_t n_params = layout.size();
  const std::size_t want = ck.optimizer ? 3 * n_params : n_params;
  if (count != want) bad(path, "expected " + std::to_string(want) + " tensors, found " + std::to_string(count));

  std::vector<Tensor> tensors;
  for (const auto& d : dir) {
    Tensor t(d.rows, d.cols);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw Error(ErrorKind::PayloadMismatch, path.string() + ": short read in " + d.name);
    tensors.push_back(std::move(t));
  }
  for (std::size_t k = 0; k < n_params; ++k) {
    if (dir[k].name != layout[k].name || dir[k].rows != layout[k].rows || dir[k].cols != layout[k].cols) {
      bad(path, "tensor " + dir[k].name + " does not match the configured layout");
    }
    ck.params.names.push_back(dir[k].name);
    ck.params.tensors.push_back(std::move(tensors[k]));
  }
  if (ck.optimizer) {
    for (std::size_t k = 0; k < n_params; ++k) {
      if (dir[n_params + k].name != "adam.m." + layout[k].name || dir[2 * n_params + k].name != "adam.v." + layout[k].name) {
        bad(path, "optimizer tensors out of order");
      }
      ck.optimizer->m.push_back(std::move(tensors[n_params + k]));
      ck.optimizer->v.push_back(std::move(tensors[2 * n_params + k]));
    }
  }
  return ck;
}

}  // namespace ofa
