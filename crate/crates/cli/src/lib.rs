//! The `rgma` command-line tool and the site simulation harness.

pub mod render;
pub mod session;
pub mod simulate;
pub mod topology;
