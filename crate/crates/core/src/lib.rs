pub mod constraints;
pub mod ddp;
pub mod error;
pub mod hybrid;
pub mod primitives;
pub mod qp;
pub mod sim;
pub mod trajectory;
