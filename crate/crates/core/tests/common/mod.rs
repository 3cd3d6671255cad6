#![allow(dead_code)]

pub mod suites;
pub mod synth;
