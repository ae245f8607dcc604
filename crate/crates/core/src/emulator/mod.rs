//! Gaussian-process emulation of an expensive simulator: correlation families,
//! response-surface basis selection, reference-prior conjugate fits and MAP
//! search for the residual hyperparameters.

pub mod basis;
pub mod correlation;
pub mod fit;
pub mod map;

pub use basis::{select_basis, BasisPolicy, BasisSelection, BasisSpec, Monomial};
pub use correlation::{correlation, half_length_to_kappa, kappa_to_half_length, CorrelationFamily, CorrelationSpec};
pub use fit::{fit_emulator, log_marginal_likelihood, Design, EmulatorPosterior, EmulatorState};
pub use map::{log_marginal_posterior, map_hyperparameters, AnnealConfig, BetaPrior, HyperPriors, MapEstimate, NuggetScenarioTable};
