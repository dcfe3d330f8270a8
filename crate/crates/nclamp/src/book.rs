// Binds the mdbook chapters into rustdoc so `cargo test --doc` runs every
// fenced Rust block in the book. One module per chapter keeps test failures
// attributable to a chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/networks.md")]
mod networks {}
#[doc = include_str!("../../../book/src/metrics.md")]
mod metrics {}
#[doc = include_str!("../../../book/src/calibrators.md")]
mod calibrators {}
#[doc = include_str!("../../../book/src/clamping.md")]
mod clamping {}
#[doc = include_str!("../../../book/src/theory.md")]
mod theory {}
#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
