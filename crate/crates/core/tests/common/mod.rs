pub mod linear;
pub mod oracles;
pub mod scenarios;
