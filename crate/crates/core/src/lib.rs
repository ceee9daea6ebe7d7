pub mod bench;
pub mod geometry;
pub mod milp;
pub mod par;
pub mod plan;
pub mod solver;
pub mod tamp;
