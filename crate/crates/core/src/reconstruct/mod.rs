//! Patient-level data from published curves, and its tabulation on the
//! shared analysis grid.

mod grid;
mod ipd;
mod km;

pub use grid::{
    choose_grid, choose_grid_with_follow_up, discretize, tabulate_events, EventTable, TimeGrid,
};
pub use ipd::{reconstruct_ipd, FEASIBILITY_SLACK};
pub use km::{km_estimator, number_at_risk, KMEstimate};
