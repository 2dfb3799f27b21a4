//! Gray-code Sobol sequence over up to 16 dimensions, with an optional
//! seeded digital shift for randomized but still low-discrepancy draws.

use crate::error::{contract, Result};
use crate::seeding;
use rand::Rng;

/// Largest supported dimensionality (the direction-number table below).
pub const MAX_DIMENSION: usize = 16;

const BITS: usize = 31;

/// Primitive-polynomial degree, encoded middle coefficients, and initial
/// direction values for dimensions 2..=16 (dimension 1 is the van der
/// Corput sequence). Standard Joe and Kuo direction numbers.
const TABLE: [(u32, u32, &[u32]); 15] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

fn direction_integers(dim_index: usize) -> [u32; BITS] {
    let mut m = [0u64; BITS];
    if dim_index == 0 {
        m = [1; BITS];
    } else {
        let (s, a, init) = TABLE[dim_index - 1];
        let s = s as usize;
        for (k, &mi) in init.iter().enumerate() {
            m[k] = mi as u64;
        }
        for k in s..BITS {
            let mut val = (m[k - s] << s) ^ m[k - s];
            for i in 1..s {
                if (a >> (s - 1 - i)) & 1 == 1 {
                    val ^= m[k - i] << i;
                }
            }
            m[k] = val;
        }
    }
    let mut v = [0u32; BITS];
    for k in 0..BITS {
        v[k] = (m[k] << (BITS - 1 - k)) as u32;
    }
    v
}

/// Incremental Sobol generator; `next_point` yields the sequence starting
/// at (0.5, 0.5, ...), skipping the initial all-zeros point.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    emitted: u64,
}

impl SobolSequence {
    /// The deterministic base sequence.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(contract(format!(
                "sobol supports 1..={MAX_DIMENSION} dimensions, got {dim}"
            )));
        }
        Ok(SobolSequence {
            directions: (0..dim).map(direction_integers).collect(),
            state: vec![0; dim],
            shift: vec![0; dim],
            emitted: 0,
        })
    }

    /// Base sequence XORed with a seeded per-dimension digital shift;
    /// randomizes the points while keeping their stratification.
    pub fn shifted(dim: usize, seed: u64) -> Result<Self> {
        let mut seq = SobolSequence::new(dim)?;
        let mut rng = seeding::substream(seed, "sobol-shift", 0);
        for r in seq.shift.iter_mut() {
            *r = rng.random::<u32>() & ((1 << BITS) - 1);
        }
        Ok(seq)
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }

    /// Next point in [0, 1)^dim.
    pub fn next_point(&mut self) -> Vec<f64> {
        let c = self.emitted.trailing_ones() as usize;
        assert!(c < BITS, "sobol sequence exhausted after 2^31 - 1 points");
        self.emitted += 1;
        let scale = (1u64 << BITS) as f64;
        self.state
            .iter_mut()
            .zip(&self.directions)
            .zip(&self.shift)
            .map(|((s, v), r)| {
                *s ^= v[c];
                (*s ^ r) as f64 / scale
            })
            .collect()
    }

    /// First `n` points as rows.
    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}
