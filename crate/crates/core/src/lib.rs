pub mod agent;
pub mod dynamics;
pub mod harness;
pub mod meta;
pub mod nn;
pub mod sim;
