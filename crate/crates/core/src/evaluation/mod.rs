//! Tolerance-based precision/recall/F1, region heat-grids, edge baselines
//! and report tables.

mod baselines;
mod grid;
mod metrics;
mod report;

pub use baselines::{canny_baseline, luminance, sobel_baseline, sobel_gradients, sobel_magnitude};
pub use grid::{cell_span, region_grid, RegionCell, RegionGrid};
pub use metrics::{squared_distance_transform, tolerance_metrics, MetricsReport, NO_FEATURE};
pub use report::{parse_report_table, report_table, ReportRecord, ReportRow};
