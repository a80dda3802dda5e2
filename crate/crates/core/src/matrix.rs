use alloc::vec;
use alloc::vec::Vec;

/// Row-major `rows x cols` matrix whose cells may be missing.
///
/// A missing cell is `None`; it is never represented as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<Option<f64>>,
}

impl CellMatrix {
    pub fn missing(rows: usize, cols: usize) -> Self {
        Self { rows, cols, cells: vec![None; rows * cols] }
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<Option<f64>>) -> Option<Self> {
        (cells.len() == rows * cols).then_some(Self { rows, cols, cells })
    }

    /// Fully populated matrix from nested rows. Returns `None` if ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        let cells = rows.iter().flatten().map(|&x| Some(x)).collect();
        Some(Self { rows: rows.len(), cols, cells })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Option<f64>) {
        self.cells[row * self.cols + col] = value;
    }

    pub fn cells(&self) -> &[Option<f64>] {
        &self.cells
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        &self.cells[row * self.cols..(row + 1) * self.cols]
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    /// Fraction of cells carrying a value.
    pub fn coverage(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        1.0 - self.missing_count() as f64 / self.cells.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.iter().map(|c| c.map(&f)).collect(),
        }
    }

    /// Column `col` as a length-`rows` vector.
    pub fn column(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }
}
