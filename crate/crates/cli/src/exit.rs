use std::error::Error;
use std::fmt;

use lazyblock_core::blockdev::BlockError;
use lazyblock_core::cache::FetchError;
use lazyblock_core::crypto::CryptoError;
use lazyblock_core::gc::GcError;
use lazyblock_core::origin::{LifecycleError, OriginError};
use lazyblock_sim::{ConfigError, SimError};

pub const VALIDATION: u8 = 2;
pub const INTEGRITY: u8 = 3;
pub const LIFECYCLE: u8 = 4;

/// Bad input from the operator: config, keyfile, arguments, trace.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Error for Invalid {}

fn classify(e: &(dyn Error + 'static)) -> Option<u8> {
    if e.is::<Invalid>() || e.is::<ConfigError>() {
        return Some(VALIDATION);
    }
    if e.is::<LifecycleError>() {
        return Some(LIFECYCLE);
    }
    if let Some(c) = e.downcast_ref::<CryptoError>() {
        return Some(if matches!(c, CryptoError::SaltTooLong(_)) { VALIDATION } else { INTEGRITY });
    }
    if let Some(g) = e.downcast_ref::<GcError>() {
        return match g {
            GcError::Lifecycle(_)
            | GcError::LiveManifests { .. }
            | GcError::AlarmsPending(_)
            | GcError::QuietPeriod { .. }
            | GcError::NoActiveRoot => Some(LIFECYCLE),
            GcError::BadManifest { .. } | GcError::MissingChunk { .. } => Some(INTEGRITY),
            GcError::Config(_) => Some(VALIDATION),
            _ => None,
        };
    }
    if let Some(o) = e.downcast_ref::<OriginError>() {
        return match o {
            OriginError::Lifecycle(_) => Some(LIFECYCLE),
            OriginError::ContentMismatch { .. } | OriginError::NameCollision { .. } => Some(INTEGRITY),
            _ => None,
        };
    }
    if let Some(FetchError::Integrity { .. }) = e.downcast_ref::<FetchError>() {
        return Some(INTEGRITY);
    }
    if let Some(BlockError::Fetch(FetchError::Integrity { .. })) = e.downcast_ref::<BlockError>() {
        return Some(INTEGRITY);
    }
    if let Some(SimError::Config(_)) = e.downcast_ref::<SimError>() {
        return Some(VALIDATION);
    }
    None
}

/// Exit status for a failed command: the first classifiable cause wins.
pub fn code_for(err: &anyhow::Error) -> u8 {
    err.chain().find_map(classify).unwrap_or(1)
}
