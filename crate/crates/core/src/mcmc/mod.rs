pub mod pg;
pub mod sampler;

pub use pg::{polya_gamma_mean, sample_polya_gamma};
pub use sampler::{Block, ChainState, Sampler, SurfaceId, SurfaceState};
pub mod chain;

pub use chain::{
    run_chain, run_chains, ChainLayout, ParamInfo, ParamKind, PosteriorChain, Provenance,
    UnitLabel,
};
