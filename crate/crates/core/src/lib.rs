pub mod dsm;
pub mod kira;
pub mod sim;
pub mod subnet;
pub mod testbed;
