#include "sparsephase/io.hpp"

#include <bit>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sparsephase::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("truncated feature file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += 4;
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  return cells;
}

int parse_int(const std::string& s, const fs::path& path, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                             ": expected an integer, got '" + s + "'");
  }
}

template <typename RowFn>
void for_each_csv_row(const fs::path& path, std::size_t expected_cols, RowFn&& fn) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (header) {
      header = false;
      continue;
    }
    auto cells = split_csv_line(line);
    if (cells.size() != expected_cols) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(expected_cols) + " columns");
    }
    fn(cells, line_no);
  }
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_features(const fs::path& path, const FeatureSequence& feats) {
  std::string out = "PSEQ";
  put_u32(out, kFeatureFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(feats.length()));
  put_u32(out, static_cast<std::uint32_t>(feats.dim()));
  out.reserve(out.size() + 4 * static_cast<std::size_t>(feats.length() * feats.dim()));
  const Matrix& m = feats.frames();
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    for (Eigen::Index d = 0; d < m.cols(); ++d) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(t, d))));
    }
  }
  write_file_atomic(path, out);
}

FeatureSequence read_features(const fs::path& path, const std::string& video_id, double fps) {
  const std::string in = read_file(path);
  if (in.size() < 16 || in.compare(0, 4, "PSEQ") != 0) {
    throw std::runtime_error(path.string() + ": missing PSEQ magic");
  }
  std::size_t pos = 4;
  const std::uint32_t version = get_u32(in, pos);
  if (version != kFeatureFormatVersion) {
    throw std::runtime_error(path.string() + ": unsupported feature version " +
                             std::to_string(version));
  }
  const std::uint32_t T = get_u32(in, pos);
  const std::uint32_t D = get_u32(in, pos);
  if (in.size() != 16 + 4ull * T * D) {
    throw std::runtime_error(path.string() + ": payload size does not match header");
  }
  Matrix frames(T, D);
  for (std::uint32_t t = 0; t < T; ++t) {
    for (std::uint32_t d = 0; d < D; ++d) {
      frames(t, d) = static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
    }
  }
  return FeatureSequence(std::move(frames), video_id, fps);
}

void write_labels(const fs::path& path, const PhaseLabelSequence& labels) {
  std::ostringstream out;
  out << "frame_index,phase_index\n";
  for (int t = 0; t < labels.length(); ++t) out << t << ',' << labels[t] << '\n';
  write_file_atomic(path, out.str());
}

PhaseLabelSequence read_labels(const fs::path& path, int num_phases) {
  std::vector<std::pair<int, int>> rows;
  for_each_csv_row(path, 2, [&](const std::vector<std::string>& cells, std::size_t line_no) {
    rows.emplace_back(parse_int(cells[0], path, line_no), parse_int(cells[1], path, line_no));
  });
  std::sort(rows.begin(), rows.end());
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<int>(i)) {
      throw std::runtime_error(path.string() + ": frame indices must cover 0..T-1 exactly once");
    }
    labels.push_back(rows[i].second);
  }
  return PhaseLabelSequence(std::move(labels), num_phases);
}

void write_annotations(const fs::path& path, const std::map<std::string, AnnotationSet>& sets) {
  std::ostringstream out;
  out << "video_id,frame_index,phase_index\n";
  for (const auto& [vid, set] : sets) {
    for (const auto& e : set.entries()) {
      if (e.provenance != Provenance::ground_truth) continue;
      out << vid << ',' << e.frame << ',' << e.label << '\n';
    }
  }
  write_file_atomic(path, out.str());
}

std::map<std::string, std::vector<Annotation>> read_annotations(const fs::path& path) {
  std::map<std::string, std::vector<Annotation>> out;
  for_each_csv_row(path, 3, [&](const std::vector<std::string>& cells, std::size_t line_no) {
    out[cells[0]].push_back(Annotation{parse_int(cells[1], path, line_no),
                                       parse_int(cells[2], path, line_no),
                                       Provenance::ground_truth});
  });
  return out;
}

void write_pseudo_labels(const fs::path& path, const std::map<std::string, AnnotationSet>& sets) {
  std::ostringstream out;
  out << "video_id,frame_index,label,provenance\n";
  for (const auto& [vid, set] : sets) {
    for (const auto& e : set.entries()) {
      out << vid << ',' << e.frame << ',' << e.label << ',' << to_string(e.provenance) << '\n';
    }
  }
  write_file_atomic(path, out.str());
}

std::map<std::string, std::vector<Annotation>> read_pseudo_labels(const fs::path& path) {
  std::map<std::string, std::vector<Annotation>> out;
  for_each_csv_row(path, 4, [&](const std::vector<std::string>& cells, std::size_t line_no) {
    out[cells[0]].push_back(Annotation{parse_int(cells[1], path, line_no),
                                       parse_int(cells[2], path, line_no),
                                       provenance_from_string(cells[3])});
  });
  return out;
}

}  // namespace sparsephase::io
