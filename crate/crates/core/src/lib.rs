pub mod channel;
pub mod error;
pub mod linalg;
pub mod precoder;
pub mod scheduler;
pub mod protocol;
pub mod dof;
pub mod rate;
pub mod cli;
