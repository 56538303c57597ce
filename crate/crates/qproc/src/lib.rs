//! Numerical toolkit for quantum stochastic processes.
//!
//! The crate provides, bottom up:
//! * [`qmath`] — dense complex linear algebra and state primitives,
//! * [`haar`] — Haar-random unitary sampling and Monte Carlo twirl/typicality estimators,
//! * [`weingarten`] — exact unitary-group moments and constant-interaction averages,
//! * [`channels`] — Kraus/Choi representations of quantum operations,
//! * [`process`] — process tensors (multitime Choi states): sampling, contraction, marginals,
//! * [`nonmarkov`] — non-Markovianity measures and concentration bounds,
//! * [`designs`] — unitary-design large-deviation bounds and random diagonal circuits,
//! * [`equilibration`] — single-time and multitime equilibration bounds with fuzzy clocks.

pub mod channels;
pub mod designs;
pub mod equilibration;
pub mod haar;
pub mod nonmarkov;
pub mod process;
pub mod qmath;
pub mod weingarten;
