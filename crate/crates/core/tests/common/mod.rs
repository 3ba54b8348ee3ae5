#![allow(dead_code)]

pub mod criteria;
pub mod fd;
pub mod oracle;

#[allow(unused_imports)]
pub use fd::{max_fd_error, random_tensor, relative_error};
