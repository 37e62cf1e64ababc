//! Joint minimum-BER power allocation and linear receiver adaptation for a
//! two-hop amplify-and-forward cooperative MIMO relay network with
//! distributed Alamouti space-time coding at the relays.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: complex matrices, Gaussian Q-function, BPSK mapping and
//!   constellation enumeration.
//! * [`channel`]: Rayleigh block fading and AWGN generation.
//! * [`dstc`]: Alamouti / randomized Alamouti encoding and the equivalent
//!   channel that linearizes the code.
//! * [`coopsys`]: the broadcast and relay phases, receive-vector assembly and
//!   linear detection.
//! * [`mber`]: the exact BER objective, its gradients, the joint SG
//!   adaptation with power projection, and the kernel-density variant.
//! * [`chanest`]: SG estimation of the direct and equivalent relay channels.
//! * [`baselines`]: equal power allocation and the MMSE receiver.
//! * [`harness`]: configuration, seeded Monte Carlo BER sweeps and CSV/JSON
//!   output.
// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod chanest;
pub mod channel;
pub mod coopsys;
pub mod dstc;
pub mod error;
pub mod harness;
pub mod mber;
pub mod numerics;

pub use baselines::{epa_allocation, mmse_filter, EffectiveSystem};
pub use chanest::ChannelEstimate;
pub use channel::{ChannelSet, NoiseSpec};
pub use coopsys::{LinkChannels, PowerAllocation, ReceiveFilterBank, ReceiveVector, Topology};
pub use dstc::{CodeKind, CodeScheme};
pub use error::{Error, Result};
pub use harness::{BerRecord, ExperimentConfig, Scheme};
pub use mber::{AdaptiveState, MberConfig};
pub use numerics::{ComplexMatrix, ComplexVector, ConstellationTable};
