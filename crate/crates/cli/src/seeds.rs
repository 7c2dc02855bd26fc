//! Stage seeds derived from one master seed.
//!
//! `stage_seed(m, s) = splitmix64(m ^ splitmix64(s))` with `s` the stage tag
//! below; instance `i` of a stage uses `splitmix64(stage_seed + i)`.

/// One step of the SplitMix64 generator from state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Initial = 1,
    Targets = 2,
    Leaders = 3,
    Sources = 4,
    Verification = 5,
    Observability = 6,
    Carleman = 7,
}

pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    splitmix64(master ^ splitmix64(stage as u64))
}

pub fn instance_seed(master: u64, stage: Stage, instance: u64) -> u64 {
    splitmix64(stage_seed(master, stage).wrapping_add(instance))
}
