//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod gaussian;
pub mod lstm;
