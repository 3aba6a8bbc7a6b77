//! Discrete-event simulator for star-shaped, entanglement-based QKD networks
//! using phase-time (time-bin) coding and detector time multiplexing (DTM).
//!
//! The crate models the whole chain from the central photon-pair source to the
//! key-rate report:
//!
//! * [`timebase`]: integer-picosecond frame arithmetic and arrival histograms,
//! * [`source`]: pair statistics, the two-photon joint outcome table and WDM
//!   channel pairing,
//! * [`link`]: fibre loss, group delay and dispersion jitter,
//! * [`detect`]: detector efficiency, dark counts, dead time and the DTM
//!   combiner,
//! * [`demux`]: time-bin classification and virtual-detector assignment,
//! * [`keyproc`]: clock-offset recovery, coincidence matching, sifting, QBER,
//!   secure-rate estimate and the DTM penalty decomposition,
//! * [`scenario`], [`pipeline`] and [`export`]: configuration, orchestration
//!   and result files.

pub mod demux;
pub mod detect;
pub mod error;
pub mod export;
pub mod keyproc;
pub mod link;
pub mod pipeline;
pub(crate) mod rng;
pub mod scenario;
pub mod source;
pub mod timebase;

pub use error::{Error, Result};
