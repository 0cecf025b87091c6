//! Inference runtime for lightweight real-time monocular depth networks.
//!
//! The crate covers the whole pipeline from weights to numbers:
//!
//! - [`tensor`]: NCHW tensors and the conv / activation / upsample / fusion kernels.
//! - [`config`] and [`network`]: a configurable pyramid encoder + NNConv3
//!   decoder with add/concat/no skip fusion and removable per-scale heads.
//! - [`weights`]: deterministic initialisation, the `RTMD` binary format and
//!   slot binding.
//! - [`eval`]: KITTI-style 16-bit depth PNGs and the standard six metrics.
//! - [`loss`]: forward-only self-supervised photometric objective.
//! - [`bench`]: warm-up + timed-iteration latency reports.
//!
//! ```no_run
//! use rtmd::{bind, init_random, ArchConfig, BindOptions, Network, Tensor};
//!
//! let cfg = ArchConfig::rt_monodepth();
//! let store = init_random(&cfg, 42).unwrap();
//! let net = bind(Network::build(&cfg).unwrap(), &store, BindOptions::default())
//!     .unwrap()
//!     .inference_only();
//! let image = Tensor::full(net.input_dims(1), 0.5).unwrap();
//! let disp = net.forward(&image).unwrap().into_d0();
//! assert_eq!(disp.dims().h, 192);
//! ```

pub mod bench;
pub mod config;
pub mod error;
pub mod eval;
pub mod image_io;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod weights;

pub use config::{ArchConfig, Fusion, FusionPattern, Resolution, Variant};
pub use error::{
    BenchError, BindError, ConfigError, EvalError, LossError, NetError, TensorError, WeightsError,
};
pub use network::{count_flops, count_params, disp_to_depth, DepthOutputs, DepthRange, Network};
pub use tensor::{Dims, Tensor};
pub use weights::{bind, init_random, load_weights, save_weights, BindOptions, WeightStore};
