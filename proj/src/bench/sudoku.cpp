#include "redge/bench/sudoku.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "redge/rng.hpp"

namespace redge {

const std::array<std::array<int, 9>, 27>& sudoku_groups() {
  static const std::array<std::array<int, 9>, 27> groups = [] {
    std::array<std::array<int, 9>, 27> g{};
    for (int r = 0; r < 9; ++r) {
      for (int c = 0; c < 9; ++c) {
        g[r][c] = r * 9 + c;
        g[9 + c][r] = r * 9 + c;
        const int box = (r / 3) * 3 + c / 3;
        g[18 + box][(r % 3) * 3 + c % 3] = r * 9 + c;
      }
    }
    return g;
  }();
  return groups;
}

SudokuProblem::SudokuProblem(const std::array<int, 81>& cells) : cells_(cells) {
  std::array<int, 81> slot{};
  for (int i = 0; i < 81; ++i) {
    if (cells_[i] < 0 || cells_[i] > 9) throw std::invalid_argument("sudoku: cell values must be 0..9");
    slot[i] = -1;
    if (cells_[i] == 0) {
      slot[i] = static_cast<int>(free_.size());
      free_.push_back(i);
    }
  }
  A_ = Matrix::Zero(27, static_cast<Eigen::Index>(free_.size()));
  B_ = Matrix::Constant(27, 9, -1.0);
  const auto& groups = sudoku_groups();
  for (int g = 0; g < 27; ++g) {
    for (int cell : groups[g]) {
      if (cells_[cell] == 0) {
        A_(g, slot[cell]) = 1.0;
      } else {
        B_(g, cells_[cell] - 1) += 1.0;
      }
    }
  }
}

Var SudokuProblem::group_excess(const Var& x_free) const {
  if (x_free.rows() != free_count() || x_free.cols() != 9) {
    throw std::invalid_argument("sudoku: free-cell matrix must be F x 9");
  }
  Tape& tape = x_free.tape();
  return matmul(tape.constant(A_), x_free) + tape.constant(B_);
}

double SudokuProblem::penalty(const Matrix& x_free) const {
  if (x_free.rows() != free_count() || x_free.cols() != 9) {
    throw std::invalid_argument("sudoku: free-cell matrix must be F x 9");
  }
  return (A_ * x_free + B_).squaredNorm();
}

Matrix SudokuProblem::full_grid(const Matrix& x_free) const {
  if (x_free.rows() != free_count() || x_free.cols() != 9) {
    throw std::invalid_argument("sudoku: free-cell matrix must be F x 9");
  }
  Matrix grid = Matrix::Zero(81, 9);
  for (int i = 0; i < 81; ++i) {
    if (cells_[i] != 0) grid(i, cells_[i] - 1) = 1.0;
  }
  for (std::size_t f = 0; f < free_.size(); ++f) grid.row(free_[f]) = x_free.row(static_cast<Eigen::Index>(f));
  return grid;
}

SudokuProblem parse_sudoku(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
  if (line.size() != 81) throw std::invalid_argument("sudoku: expected 81 characters, got " + std::to_string(line.size()));
  std::array<int, 81> cells{};
  for (int i = 0; i < 81; ++i) {
    const char ch = line[i];
    if (ch == '.' || ch == '0') {
      cells[i] = 0;
    } else if (ch >= '1' && ch <= '9') {
      cells[i] = ch - '0';
    } else {
      throw std::invalid_argument(std::string("sudoku: invalid character '") + ch + "'");
    }
  }
  return SudokuProblem(cells);
}

std::vector<SudokuProblem> load_puzzles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open puzzle file " + path);
  std::vector<SudokuProblem> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    out.push_back(parse_sudoku(line));
  }
  return out;
}

double sudoku_penalty(const Matrix& grid) {
  if (grid.rows() != 81 || grid.cols() != 9) throw std::invalid_argument("sudoku_penalty: grid must be 81 x 9");
  double total = 0.0;
  for (const auto& group : sudoku_groups()) {
    RowVector s = RowVector::Constant(9, -1.0);
    for (int cell : group) s += grid.row(cell);
    total += s.squaredNorm();
  }
  return total;
}

Var sudoku_penalty(const Var& x_free, const SudokuProblem& problem) {
  return sum(square(problem.group_excess(x_free)));
}

bool sudoku_valid(const std::array<int, 81>& digits) {
  for (const auto& group : sudoku_groups()) {
    std::array<bool, 10> seen{};
    for (int cell : group) {
      const int d = digits[cell];
      if (d < 1 || d > 9 || seen[d]) return false;
      seen[d] = true;
    }
  }
  return true;
}

std::array<int, 81> digits_of(const Matrix& grid) {
  if (grid.rows() != 81 || grid.cols() != 9) throw std::invalid_argument("digits_of: grid must be 81 x 9");
  std::array<int, 81> out{};
  for (int i = 0; i < 81; ++i) {
    Eigen::Index k = 0;
    grid.row(i).maxCoeff(&k);
    out[i] = static_cast<int>(k) + 1;
  }
  return out;
}

std::vector<SudokuProblem> generate_puzzles(int count, std::uint64_t seed, int blanks) {
  if (count < 0 || blanks < 0 || blanks > 81) throw std::invalid_argument("generate_puzzles: bad arguments");
  std::vector<SudokuProblem> out;
  out.reserve(count);
  for (int n = 0; n < count; ++n) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(n)));
    auto perm3 = [&] {
      std::array<int, 3> p{0, 1, 2};
      std::shuffle(p.begin(), p.end(), rng);
      return p;
    };
    std::array<int, 9> digit{};
    std::iota(digit.begin(), digit.end(), 1);
    std::shuffle(digit.begin(), digit.end(), rng);
    std::array<int, 9> rows{}, cols{};
    const auto bands = perm3();
    const auto stacks = perm3();
    for (int b = 0; b < 3; ++b) {
      const auto inner_r = perm3();
      const auto inner_c = perm3();
      for (int k = 0; k < 3; ++k) {
        rows[b * 3 + k] = bands[b] * 3 + inner_r[k];
        cols[b * 3 + k] = stacks[b] * 3 + inner_c[k];
      }
    }
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    std::array<int, 81> cells{};
    for (int r = 0; r < 9; ++r) {
      for (int c = 0; c < 9; ++c) {
        const int rr = rows[r];
        const int cc = cols[c];
        const int pattern = (3 * (rr % 3) + rr / 3 + cc) % 9;
        cells[flip ? c * 9 + r : r * 9 + c] = digit[pattern];
      }
    }
    std::array<int, 81> order{};
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < blanks; ++k) cells[order[k]] = 0;
    out.emplace_back(cells);
  }
  return out;
}

}  // namespace redge
