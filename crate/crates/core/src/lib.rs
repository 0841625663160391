//! Bit-stream level stochastic computing (SC) simulator.
//!
//! The crate is organised bottom-up:
//!
//! * [`bitstream`]: the stream value type and its unipolar/bipolar readings.
//! * [`sources`]: comparator number sources (LFSR, van der Corput, ramp,
//!   SplitMix64) and the stochastic number generator built on them.
//! * [`arith`]: AND/OR/MUX operators, the toggle flip-flop halver and adder,
//!   and balanced adder trees.
//! * [`harness`]: exhaustive mean-squared-error sweeps of the multipliers and
//!   adders.
//! * [`conv`]: the stochastic first convolution layer with ternary sign
//!   activation.
//! * [`nn`]: the binary-domain remainder of the hybrid network and evaluation.
//! * [`mnist`] and [`weights`]: IDX dataset parsing and the SBNN weights file.

pub mod arith;
pub mod bitstream;
pub mod conv;
pub mod error;
pub mod harness;
pub mod mnist;
pub mod nn;
pub mod sources;
pub mod weights;

pub use arith::{
    and_multiply, mux_add, or_add, tff_add, tff_add_tree, tff_halve, tff_step, to_binary,
    AdderTreeResult, S0Policy, TffState,
};
pub use bitstream::{Bitstream, Precision};
pub use conv::{
    sc_conv_layer, sign_activation, ConvConfig, PixelImage, QuantizedKernel, ScConvEngine,
    TernaryFeatureMap,
};
pub use error::{Error, Result};
pub use harness::{
    mse_adder, mse_multiplier, table_sweep, AdderConfig, MseReport, MultiplierScheme, Operator,
    SchemeSettings, Table,
};
pub use mnist::{parse_idx_images, parse_idx_labels, ImageSet};
pub use nn::{
    evaluate, infer, Activation, EvalReport, InferenceConfig, Layer, NetworkSpec, Tensor,
};
pub use sources::{
    lfsr_next, prng_next, ramp_next, sng, vdc_next, LfsrConfig, SourceKind, SourceSequence, VdcBase,
};
pub use weights::{load_weights, save_weights};
