use serde::{Deserialize, Serialize};

use super::metrics::{tolerance_metrics, MetricsReport};
use crate::error::{config, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RegionCell {
    /// Neither ground truth nor prediction holds a crack pixel.
    NoCracks,
    Metrics(MetricsReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major cells.
    pub cells: Vec<RegionCell>,
}

/// `[start, end)` of cell `i` of `n` along `extent`; the last cell takes the remainder.
pub fn cell_span(extent: usize, n: usize, i: usize) -> (usize, usize) {
    let size = extent / n;
    let start = i * size;
    (start, if i + 1 == n { extent } else { start + size })
}

pub fn region_grid(pred: &BinaryMask, gt: &BinaryMask, rows: usize, cols: usize, tol: f64) -> Result<RegionGrid> {
    pred.check_same_size(gt)?;
    if rows == 0 || cols == 0 || rows > gt.height() || cols > gt.width() {
        return config(format!("a {rows}×{cols} grid does not fit a {}×{} image", gt.height(), gt.width()));
    }
    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (y0, y1) = cell_span(gt.height(), rows, r);
        for c in 0..cols {
            let (x0, x1) = cell_span(gt.width(), cols, c);
            let p = pred.crop(y0, x0, y1 - y0, x1 - x0)?;
            let g = gt.crop(y0, x0, y1 - y0, x1 - x0)?;
            cells.push(if p.is_empty() && g.is_empty() {
                RegionCell::NoCracks
            } else {
                RegionCell::Metrics(tolerance_metrics(&p, &g, tol)?)
            });
        }
    }
    Ok(RegionGrid { rows, cols, cells })
}

impl RegionGrid {
    pub fn cell(&self, row: usize, col: usize) -> &RegionCell {
        &self.cells[row * self.cols + col]
    }

    /// Cellwise sum of counts over images.
    pub fn accumulate(&mut self, other: &RegionGrid) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return config("cannot accumulate grids of different shapes");
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a = match (*a, b) {
                (RegionCell::NoCracks, RegionCell::NoCracks) => RegionCell::NoCracks,
                (RegionCell::Metrics(m), RegionCell::NoCracks) | (RegionCell::NoCracks, &RegionCell::Metrics(m)) => {
                    RegionCell::Metrics(m)
                }
                (RegionCell::Metrics(m), RegionCell::Metrics(n)) => RegionCell::Metrics(m.merge(n)),
            };
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,status,tp,fp,fn,precision,recall,f1\n");
        for r in 0..self.rows {
            for c in 0..self.cols {
                match self.cell(r, c) {
                    RegionCell::NoCracks => s.push_str(&format!("{r},{c},no_cracks,,,,,,\n")),
                    RegionCell::Metrics(m) => s.push_str(&format!(
                        "{r},{c},metrics,{},{},{},{},{},{}\n",
                        m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1
                    )),
                }
            }
        }
        s
    }
}
