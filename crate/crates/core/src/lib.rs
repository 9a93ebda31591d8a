//! Multi-period SOCP relaxation of the branch-flow optimal power flow on
//! radial distribution networks, distribution locational marginal prices
//! (DLMPs) read from its duals, decentralized coordination between a system
//! operator and load aggregators, and settlement mechanisms.

// `!(a <= b)` is used on purpose so that NaN fails validation; index loops
// mirror the (bus, period) notation of the model
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod conic;
pub mod coordination;
pub mod mechanism;
pub mod network;
pub mod opf;
pub mod report;
pub mod scenario;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/prices.md")]
    mod prices {}
    #[doc = include_str!("../../../book/src/coordination.md")]
    mod coordination {}
    #[doc = include_str!("../../../book/src/mechanisms.md")]
    mod mechanisms {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
