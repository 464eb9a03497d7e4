//! Traffic-signal surrogate modelling.
//!
//! The crate covers the full loop: road networks ([`roadnet`]), fixed-time
//! signal plans ([`signalplan`]), a Nagel-Schreckenberg simulator measuring
//! time spent waiting at red lights ([`microsim`]), dataset generation
//! ([`datasetgen`]), a small reverse-mode autodiff engine ([`autodiff`]),
//! surrogate models ([`surrogates`]), training and metrics ([`trainer`]) and a
//! genetic optimizer over signal settings ([`gaopt`]).

pub mod autodiff;
pub mod datasetgen;
pub mod gaopt;
pub mod microsim;
pub mod roadnet;
pub mod seed;
pub mod signalplan;
pub mod surrogates;
pub mod trainer;
