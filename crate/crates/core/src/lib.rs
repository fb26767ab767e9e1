pub mod cli;
pub mod dynamics;
pub mod extract;
pub mod geometry;
pub mod io;
pub mod mcmc;
pub mod model;
pub mod mosaic;
pub mod oracle;
