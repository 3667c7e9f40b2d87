//! The EEGD trial container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "EEGD" | version = 1 | n_trials | C | T | L
//! per trial: label | subject_id | session_id | C·T f32 samples, channel-major
//! ```

use std::path::Path;

use csanet_core::data::{EegTrial, TrialSet};

use crate::bytes::{put_f32s, put_u32, read_file, write_atomic, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EEGD";
pub const VERSION: u32 = 1;

pub fn encode(set: &TrialSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut out = Vec::with_capacity(24 + set.len() * (12 + 4 * set.trial_len()));
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    for v in [set.len(), set.channels, set.time_steps, set.n_classes] {
        put_u32(&mut out, v);
    }
    for t in &set.trials {
        put_u32(&mut out, t.label);
        put_u32(&mut out, t.subject_id as usize);
        put_u32(&mut out, t.session_id as usize);
        put_f32s(&mut out, &t.samples);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TrialSet> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let at = r.pos();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let n = r.count("trial count")?;
    let at = r.pos();
    let (c, t, l) = (r.count("channels")?, r.count("time steps")?, r.count("classes")?);
    if c == 0 || t == 0 || l == 0 {
        return Err(Error::format(at, format!("zero dimension in C={c} T={t} L={l}")));
    }
    let mut set = TrialSet::new(c, t, l);
    set.trials.reserve(n.min(bytes.len() / (12 + 4 * c * t)));
    for i in 0..n {
        let at = r.pos();
        let label = r.count("label")?;
        let subject_id = r.u32("subject id")?;
        let session_id = r.u32("session id")?;
        let samples = r.f32s(c * t, "samples")?;
        set.push(EegTrial { samples, label, subject_id, session_id })
            .map_err(|e| Error::format(at, format!("trial {i}: {e}")))?;
    }
    r.finish()?;
    Ok(set)
}

pub fn write(set: &TrialSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode(set)?)
}

pub fn read(path: &Path) -> Result<TrialSet> {
    decode(&read_file(path)?)
}
