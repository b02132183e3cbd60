pub mod brownian;
pub mod chaos;
pub mod error;
pub mod grids;
pub mod hermite;
pub mod multiindex;
pub mod oracles;
pub mod problems;
pub mod schemes;
