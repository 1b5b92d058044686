//! Shape-distribution metrics over point sets sampled from surfaces.
//!
//! Pairwise distances are Chamfer (squared nearest-neighbour, both
//! directions) and EMD (mean Euclidean cost of the optimal perfect
//! matching). Set metrics compare a generated set `G` with a reference set
//! `R`: MMD and COV are directional (min over `G`, averaged or covered over
//! `R`), 1-NNA and ECD are symmetric two-sample statistics.

mod distance;
mod frechet;
mod report;
mod sets;

pub use distance::{chamfer, emd, emd_auction, emd_exact, Distance, AUCTION_GAP, EXACT_EMD_LIMIT};
pub use frechet::{frechet, NEG_EIG_TOL};
pub use report::{evaluate_sets, EvaluationReport, MetricReport, ECD_NOTE};
pub use sets::{cov, ecd, mmd, one_nna, tmd, tmd_over_conditions, DistanceMatrices, ECD_K};
