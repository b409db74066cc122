use crate::error::{HeError, Result};
use crate::slotvec::OpTally;

use super::model::ModelSpec;

pub const BUILTIN_NAMES: [&str; 3] = ["cryptonets-hs", "me", "ce"];

const CRYPTONETS_HS: &str = include_str!("../../models/cryptonets-hs.json");
const ME: &str = include_str!("../../models/me.json");
const CE: &str = include_str!("../../models/ce.json");

pub fn builtin_json(name: &str) -> Option<&'static str> {
    match name {
        "cryptonets-hs" => Some(CRYPTONETS_HS),
        "me" => Some(ME),
        "ce" => Some(CE),
        _ => None,
    }
}

pub fn builtin(name: &str) -> Result<ModelSpec> {
    let text = builtin_json(name).ok_or_else(|| {
        HeError::Model(format!("unknown model {name:?} (builtins: {})", BUILTIN_NAMES.join(", ")))
    })?;
    ModelSpec::from_json(text)
}

/// One published row: `(label, [total, add_pc, add_cc, mul_pc, mul_cc, rot])`.
pub type PublishedRow = (&'static str, [u64; 6]);

/// Published counts for the diagonal-method MNIST network (column M).
pub const PUBLISHED_ME: &[PublishedRow] = &[
    ("Conv1", [90, 5, 40, 45, 0, 0]),
    ("Flat1", [8, 0, 4, 0, 0, 4]),
    ("Square1", [1, 0, 0, 0, 1, 0]),
    ("Conv2-Dense1", [110, 1, 38, 32, 0, 39]),
    ("Square2", [1, 0, 0, 0, 1, 0]),
    ("Dense2", [36, 1, 12, 10, 0, 13]),
    ("Total", [246, 7, 94, 87, 2, 56]),
];

/// Published counts for the LoLa-MNIST network lowered with the diagonal method (column L′).
pub const PUBLISHED_CRYPTONETS_HS: &[PublishedRow] = &[
    ("Conv1", [250, 5, 120, 125, 0, 0]),
    ("Flat1", [8, 0, 4, 0, 0, 4]),
    ("Square1", [1, 0, 0, 0, 1, 0]),
    ("Conv2-Dense1", [308, 1, 103, 100, 0, 104]),
    ("Square2", [1, 0, 0, 0, 1, 0]),
    ("Dense2", [38, 1, 13, 10, 0, 14]),
    ("Total", [606, 7, 240, 235, 2, 122]),
];

/// LoLa-MNIST reference counts with the row-major kernels (column L), as printed.
pub const LOLA_MNIST_REFERENCE: &[PublishedRow] = &[
    ("Conv1", [250, 5, 120, 125, 0, 0]),
    ("Flat1", [8, 0, 4, 0, 0, 4]),
    ("Square1", [1, 0, 0, 0, 1, 0]),
    ("Conv2-Dense1", [492, 0, 246, 13, 0, 246]),
    ("Square2", [1, 0, 0, 0, 1, 0]),
    ("Dense2", [279, 0, 139, 10, 0, 130]),
    ("Total", [1031, 5, 509, 148, 2, 380]),
];

/// Published counts for the CIFAR network.
pub const PUBLISHED_CE: &[PublishedRow] = &[
    ("Conv1", [972, 18, 468, 486, 0, 0]),
    ("Flat1", [30, 0, 15, 0, 0, 15]),
    ("Square1", [3, 0, 0, 0, 3, 0]),
    ("Pool1-Conv2", [7506, 1, 2504, 2496, 0, 2505]),
    ("Conv3", [1677, 64, 768, 832, 0, 13]),
    ("Flat2", [126, 0, 63, 0, 0, 63]),
    ("Square2", [1, 0, 0, 0, 1, 0]),
    ("Pool2-Dense1", [778, 1, 260, 256, 0, 261]),
    ("Square", [1, 0, 0, 0, 1, 0]),
    ("Dense2", [40, 1, 14, 10, 0, 15]),
    ("Total", [11134, 85, 4092, 4080, 5, 2872]),
];

/// Published reference tables for a builtin, each with a caption.
pub fn published(name: &str) -> Vec<(&'static str, &'static [PublishedRow])> {
    match name {
        "me" => vec![("published, diagonal method", PUBLISHED_ME)],
        "cryptonets-hs" => vec![
            ("published, diagonal method", PUBLISHED_CRYPTONETS_HS),
            ("LoLa-MNIST reference, row-major kernels", LOLA_MNIST_REFERENCE),
        ],
        "ce" => vec![("published, diagonal method", PUBLISHED_CE)],
        _ => Vec::new(),
    }
}

pub fn published_total(name: &str) -> Option<OpTally> {
    published(name).first().and_then(|(_, rows)| rows.last()).map(|(_, r)| tally(r))
}

pub fn tally(r: &[u64; 6]) -> OpTally {
    OpTally { add_pc: r[1], add_cc: r[2], mul_pc: r[3], mul_cc: r[4], rot: r[5] }
}

/// Published reference rotation counts for `(m, n, N) = (64, 4096, 16384)`; the
/// closed-form predictors give 70 and 255 at this point.
pub const REFERENCE_HS_ROTATIONS: u64 = 77;
pub const REFERENCE_LOLA_STACKED_ROTATIONS: u64 = 1023;
