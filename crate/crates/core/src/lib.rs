pub mod linalg;
pub mod model;
pub mod noise;
pub mod risk;
pub mod tightening;
pub mod qp;
pub mod ocp;
pub mod controller;
pub mod sim;
pub mod config;
pub mod cli;
