pub mod error;
pub mod experiment;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod propagation;
pub mod reproduce;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod units;
pub mod vdsa;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenario.md")]
    mod scenario {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/mac.md")]
    mod mac {}
    #[doc = include_str!("../../../book/src/mobility.md")]
    mod mobility {}
    #[doc = include_str!("../../../book/src/duty-cycle.md")]
    mod duty_cycle {}
    #[doc = include_str!("../../../book/src/channel-selection.md")]
    mod channel_selection {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
