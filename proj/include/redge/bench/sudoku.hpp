#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "redge/tensor.hpp"

namespace redge {

/// Clue cells are fixed one-hot rows; only the free cells carry logits.
class SudokuProblem {
 public:
  /// 81 cells, 0 for blank, 1..9 for clues.
  explicit SudokuProblem(const std::array<int, 81>& cells);

  const std::array<int, 81>& cells() const { return cells_; }
  const std::vector<int>& free_cells() const { return free_; }
  Eigen::Index free_count() const { return static_cast<Eigen::Index>(free_.size()); }

  /// Digit counts minus one per group, A x_free + B, as a 27 x 9 node.
  Var group_excess(const Var& x_free) const;
  /// Penalty of a plain free-cell matrix, same value as sudoku_penalty.
  double penalty(const Matrix& x_free) const;
  /// 81 x 9 one-hot grid with the free rows taken from x_free.
  Matrix full_grid(const Matrix& x_free) const;

 private:
  std::array<int, 81> cells_{};
  std::vector<int> free_;
  Matrix A_;  ///< 27 x F membership of free cells in groups
  Matrix B_;  ///< 27 x 9 clue digit counts minus one
};

/// Parses 81 characters: digits 1-9, '.' or '0' for blanks.
SudokuProblem parse_sudoku(std::string_view line);
std::vector<SudokuProblem> load_puzzles(const std::string& path);

/// The 27 groups (rows, columns, boxes) as cell index lists.
const std::array<std::array<int, 9>, 27>& sudoku_groups();

/// sum over groups of ||s_g(x) - 1||^2 for a full 81 x 9 grid.
double sudoku_penalty(const Matrix& grid);
/// sum over groups of ||s_g - 1||^2 with s_g built from the free-cell rows.
Var sudoku_penalty(const Var& x_free, const SudokuProblem& problem);
/// Direct rule check on digits 1..9.
bool sudoku_valid(const std::array<int, 81>& digits);
std::array<int, 81> digits_of(const Matrix& grid);

/// Deterministic puzzles: a shuffled valid grid with `blanks` cells removed.
std::vector<SudokuProblem> generate_puzzles(int count, std::uint64_t seed, int blanks);

}  // namespace redge
