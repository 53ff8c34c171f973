pub mod ckks;
pub mod cli;
pub mod extraction;
pub mod inference;
pub mod protocol;
pub mod ring;
