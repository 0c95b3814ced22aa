//! Learnable relative position bias for windowed attention.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, Session};
use crate::scalar::Scalar;
use crate::tape::Var;

/// Table of `(2·window_side−1)²` rows × `num_heads`, indexed by the 2-D
/// offset between a query token and a key token of one window.
#[derive(Clone, Debug)]
pub struct RelPosBias {
    pub window_side: usize,
    pub num_heads: usize,
    pub table: ParamId,
}

impl RelPosBias {
    pub fn table_rows(window_side: usize) -> usize {
        (2 * window_side - 1).pow(2)
    }

    /// Row index for every (query, key) pair of a `grid_side × grid_side`
    /// token grid, flattened as `[grid², grid²]`. `grid_side ≤ window_side`.
    pub fn index_map(window_side: usize, grid_side: usize) -> Vec<usize> {
        assert!(grid_side <= window_side && grid_side > 0);
        let span = 2 * window_side - 1;
        let n = grid_side * grid_side;
        let mut map = Vec::with_capacity(n * n);
        for q in 0..n {
            let (qy, qx) = (q / grid_side, q % grid_side);
            for k in 0..n {
                let (ky, kx) = (k / grid_side, k % grid_side);
                let dy = qy + window_side - 1 - ky;
                let dx = qx + window_side - 1 - kx;
                map.push(dy * span + dx);
            }
        }
        map
    }

    /// Bias tensor `[heads, grid², grid²]` for the current session.
    pub fn bias<T: Scalar>(&self, s: &mut Session<'_, T>, grid_side: usize) -> Result<Var> {
        if grid_side == 0 || grid_side > self.window_side {
            return Err(TensorError::InvalidArgument {
                op: "relpos",
                msg: format!(
                    "grid side {grid_side} exceeds bias window {}",
                    self.window_side
                ),
            });
        }
        let n = grid_side * grid_side;
        let table = s.param(self.table);
        let index = Arc::new(Self::index_map(self.window_side, grid_side));
        let rows = s.gather_rows(table, index)?;
        let rows = s.reshape(rows, &[n, n, self.num_heads])?;
        s.permute(rows, &[2, 0, 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_map_range_and_symmetry() {
        for w in [1, 2, 3, 8] {
            let rows = RelPosBias::table_rows(w);
            let map = RelPosBias::index_map(w, w);
            let n = w * w;
            assert_eq!(map.len(), n * n);
            assert!(map.iter().all(|&i| i < rows));
            for q in 0..n {
                // zero offset sits in the centre row of the table
                assert_eq!(map[q * n + q], rows / 2);
                for k in 0..n {
                    assert_eq!(map[k * n + q], rows - 1 - map[q * n + k]);
                }
            }
        }
    }

    #[test]
    fn smaller_grid_reuses_table_offsets() {
        let full = RelPosBias::index_map(8, 8);
        let small = RelPosBias::index_map(8, 4);
        // token (1,2) vs (3,0) on both grids has the same offset
        let (q8, k8) = (8 + 2, 3 * 8);
        let (q4, k4) = (4 + 2, 3 * 4);
        assert_eq!(full[q8 * 64 + k8], small[q4 * 16 + k4]);
    }
}
