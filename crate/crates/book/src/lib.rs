//! The guide under `book/src`, compiled so its code blocks run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/evidence.md")]
pub mod evidence {}

#[doc = include_str!("../../../book/src/oracles.md")]
pub mod oracles {}

#[doc = include_str!("../../../book/src/sphere-walk.md")]
pub mod sphere_walk {}

#[doc = include_str!("../../../book/src/inner-sampling.md")]
pub mod inner_sampling {}

#[doc = include_str!("../../../book/src/dirichlet.md")]
pub mod dirichlet {}

#[doc = include_str!("../../../book/src/model-selection.md")]
pub mod model_selection {}

#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
