//! Exploit reachability and migration testbed over the Vex mini-language.

pub mod analysis;
pub mod corpus;
pub mod extract;
pub mod genetic;
pub mod instrument;
pub mod interp;
pub mod migration;
pub mod pipeline;
pub mod similarity;
pub mod test_case;
pub mod vex;

pub use test_case::TestCase;
