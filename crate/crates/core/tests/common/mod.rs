#![allow(dead_code)]

pub mod dd;
pub mod fixtures;
pub mod oracles;
