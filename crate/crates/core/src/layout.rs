//! Joint state layout (0-based):
//!
//! | rows        | content                       |
//! |-------------|-------------------------------|
//! | 0..2        | agent position                |
//! | 2..4        | agent velocity                |
//! | 4           | agent orientation             |
//! | 5+2(s-1)..  | surface `s` MVA point (2 each)|
//!
//! Surface ids `s` are 1-based as in the external interfaces.

pub const POSITION: usize = 0;
pub const VELOCITY: usize = 2;
pub const ORIENTATION: usize = 4;
pub const AGENT_DIM: usize = 5;

/// Total joint state dimension `5 + 2S`.
pub const fn state_dim(surface_count: usize) -> usize {
    AGENT_DIM + 2 * surface_count
}

/// First row of the 2-block of surface `s` (1-based).
pub const fn surface_offset(s: usize) -> usize {
    AGENT_DIM + 2 * (s - 1)
}

/// Human-readable name of the block owning state index `i`.
pub fn block_name(i: usize) -> String {
    match i {
        0 | 1 => "position".to_string(),
        2 | 3 => "velocity".to_string(),
        4 => "orientation".to_string(),
        _ => format!("surface {}", (i - AGENT_DIM) / 2 + 1),
    }
}
