//! Behavioral model of a tapped-delay-line time-to-digital converter with
//! code-density and sliding-window calibration, analysis metrics, and a
//! record streaming service.

pub mod analysis;
pub mod calib;
pub mod decoder;
pub mod delayline;
pub mod experiment;
pub mod sources;
pub mod stats;
pub mod stream;
