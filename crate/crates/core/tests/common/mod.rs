//! Independent oracles shared by the integration tests. Everything here is
//! deliberately naive: nested loops over raw records, no indexes.
#![allow(dead_code)]

pub mod gradcheck;
pub mod popularity;
pub mod selection;
