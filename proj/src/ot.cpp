#include "domlm/ot.hpp"

#include "domlm/ops.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace domlm {

Tensor cost_matrix(const Tensor& x, const Tensor& y, bool* degenerate) {
  Tensor cos = cosine_similarity(x, y, degenerate);
  return add(scale(cos, -1.0), Tensor::full(cos.shape(), 1.0));
}

CeaLoss cea_loss(const Tensor& x, const Tensor& y, const IpotOptions& options) {
  CeaLoss out;
  Tensor cost = cost_matrix(x, y, &out.degenerate);
  const Eigen::MatrixXd c = cost.matrix();
  out.plan = ipot(c, options);
  const RowMatrix frozen = out.plan.values;
  out.loss = sum(mul(cost, Tensor::from_matrix(frozen)));
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

void write_alignment_csv(const std::filesystem::path& path, const std::vector<std::string>& row_tokens,
                         const std::vector<std::string>& col_tokens, const Eigen::Ref<const Eigen::MatrixXd>& values) {
  if (static_cast<Index>(row_tokens.size()) != values.rows() || static_cast<Index>(col_tokens.size()) != values.cols()) {
    throw DimensionError("alignment labels do not match the matrix");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& c : col_tokens) out << ',' << csv_field(c);
  out << '\n';
  for (Index i = 0; i < values.rows(); ++i) {
    out << csv_field(row_tokens[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < values.cols(); ++j) out << ',' << values(i, j);
    out << '\n';
  }
}

AlignmentTable read_alignment_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  AlignmentTable table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "missing header");
  auto header = parse_csv_line(line);
  table.col_tokens.assign(header.begin() + 1, header.end());
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = parse_csv_line(line);
    if (fields.size() != table.col_tokens.size() + 1) throw ParseError(path.string(), lineno, "ragged row");
    table.row_tokens.push_back(fields[0]);
    std::vector<double> vals;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      try {
        vals.push_back(std::stod(fields[k]));
      } catch (const std::exception&) {
        throw ParseError(path.string(), lineno, "non-numeric cell '" + fields[k] + "'");
      }
    }
    rows.push_back(std::move(vals));
  }
  table.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(table.col_tokens.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) table.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return table;
}

}  // namespace domlm
