pub mod error;
pub mod potential;
pub mod spectral;
pub mod landscape;
pub mod kramers;
pub mod montecarlo;
pub mod cli;
