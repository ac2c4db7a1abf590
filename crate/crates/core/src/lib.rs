pub mod autodiff;
pub mod cli;
pub mod experiments;
pub mod network;
pub mod geometry;
pub mod optimize;
pub mod pinn;
pub mod pullback;
