#![allow(dead_code)]

pub mod datalog;
pub mod syntax;
