//! Gradient compression for rate-limited federated training.
//!
//! The pipeline has three stages applied by every user before upload:
//!
//! ```text
//! g_t ──► correct (g + γ·m) ──► convert (fp grid) ──► compress (Huffman) ──► PS
//!              ▲                        │
//!              └──── m_t = γ·m + g − ĝ ◄┘
//! ```
//!
//! * [`fpquant`] — low-precision floating-point grids and the scale that
//!   minimizes the expected squared quantization error.
//! * [`entropy`] — symbol probabilities induced by a generalized normal
//!   model, canonical Huffman codes, the wire frame and bit accounting.
//! * [`feedback`] — the decayed error-feedback memory.
//! * [`distfit`] — generalized normal densities, fitting and Wasserstein
//!   diagnostics, plus the comparison families.
//! * [`fedsim`] — a deterministic parameter-server simulator with baselines.
//! * [`theory`] — numerical checks of the quantization-error bound and the
//!   strongly convex convergence bound.

pub mod distfit;
pub mod entropy;
pub mod error;
pub mod fedsim;
pub mod feedback;
pub mod fpquant;
pub mod seed;
pub mod special;
pub mod theory;

pub use distfit::{Family, FamilyFit, FamilyParams, GenNormParams, SampleStats};
pub use entropy::{CommLedger, Frame, HuffmanCode, LevelPmf};
pub use error::{Error, Result};
pub use fedsim::{ExperimentConfig, RoundRecord, SchemeConfig, SimConfig, TaskSpec};
pub use feedback::FeedbackState;
pub use fpquant::{FpFormat, QuantizedBlock, Quantizer};
