#![allow(dead_code)]

pub mod bpe_oracle;
pub mod fixtures;
pub mod reference;
pub mod split_check;
