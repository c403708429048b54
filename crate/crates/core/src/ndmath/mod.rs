//! Small differentiable numerics: parameter storage, MLPs with hand-written
//! reverse passes, stable reductions, PSD log-determinants and Adam.

mod adam;
mod gradcheck;
mod linalg;
mod mlp;
mod params;
mod reduce;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use linalg::{
    from_row_major, logdet_psd, logdet_psd_with_grad, orthonormalize_columns, to_row_major,
    PSD_JITTER,
};
pub use mlp::{Activation, Mlp, MlpSpec, MlpTrace, OutputTransform};
pub use params::{Init, Param, ParamId, ParamStore};
pub(crate) use reduce::logsumexp_unchecked;
pub use reduce::{logsumexp, logsumexp_with_grad, sigmoid, softplus, softplus_inv};
