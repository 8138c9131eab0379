//! Sobol low-discrepancy sequence with Joe–Kuo direction numbers.

use crate::error::{Error, Result};

const BITS: usize = 32;

/// `(degree s, coefficient bits a, initial m_1..m_s)` for dimensions 2 and up.
/// Dimension 1 is the van der Corput sequence.
const DIRECTIONS: &[(u32, u32, &[u32])] = &[
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
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
    (7, 21, &[1, 1, 5, 11, 19, 41, 61]),
    (7, 28, &[1, 3, 5, 3, 3, 13, 69]),
    (7, 31, &[1, 1, 7, 13, 1, 19, 1]),
    (7, 32, &[1, 3, 7, 5, 13, 19, 59]),
    (7, 37, &[1, 1, 3, 9, 25, 29, 41]),
    (7, 41, &[1, 3, 5, 13, 23, 1, 55]),
    (7, 42, &[1, 3, 7, 3, 13, 59, 17]),
    (7, 50, &[1, 3, 1, 3, 5, 53, 69]),
    (7, 55, &[1, 1, 5, 5, 23, 33, 13]),
    (7, 56, &[1, 1, 7, 7, 1, 61, 123]),
    (7, 59, &[1, 1, 7, 9, 13, 61, 49]),
    (7, 62, &[1, 3, 3, 5, 3, 55, 33]),
    (8, 14, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (8, 21, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (8, 22, &[1, 3, 1, 11, 11, 11, 77, 249]),
];

/// Largest dimension the shipped table supports.
pub const MAX_DIM: usize = DIRECTIONS.len() + 1;

/// Direction integers scaled to 32 bits for each dimension.
#[derive(Debug, Clone)]
pub struct Sobol {
    v: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim > MAX_DIM {
            return Err(Error::InvalidSamplerConfig(format!(
                "Sobol dimension {dim} exceeds the supported maximum {MAX_DIM}"
            )));
        }
        let mut v = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut row = [0u32; BITS];
            if d == 0 {
                for (k, r) in row.iter_mut().enumerate() {
                    *r = 1 << (BITS - 1 - k);
                }
            } else {
                let (s, a, m) = DIRECTIONS[d - 1];
                let s = s as usize;
                for k in 0..s.min(BITS) {
                    row[k] = m[k] << (BITS - 1 - k);
                }
                for k in s..BITS {
                    let mut x = row[k - s] ^ (row[k - s] >> s);
                    for j in 1..s {
                        if (a >> (s - 1 - j)) & 1 == 1 {
                            x ^= row[k - j];
                        }
                    }
                    row[k] = x;
                }
            }
            v.push(row);
        }
        Ok(Self { v })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Point with sequence index `n` (index 0 is the origin).
    pub fn point(&self, n: u64, out: &mut [f64]) {
        let gray = n ^ (n >> 1);
        for (d, row) in self.v.iter().enumerate() {
            let mut x = 0u32;
            let mut g = gray;
            let mut k = 0;
            while g != 0 && k < BITS {
                if g & 1 == 1 {
                    x ^= row[k];
                }
                g >>= 1;
                k += 1;
            }
            out[d] = x as f64 / 4294967296.0;
        }
    }
}

/// Sobol sequence under a seed-derived random shift modulo one.
#[derive(Debug, Clone)]
pub struct ShiftedSobol {
    seq: Sobol,
    shift: Vec<f64>,
}

impl ShiftedSobol {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = super::stream_rng(seed, u64::MAX);
        let shift = (0..dim).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        Ok(Self { seq: Sobol::new(dim)?, shift })
    }

    pub fn point(&self, index: u64) -> Vec<f64> {
        let mut p = vec![0.0; self.seq.dim()];
        self.seq.point(index, &mut p);
        for (x, s) in p.iter_mut().zip(&self.shift) {
            *x = (*x + s).fract();
        }
        p
    }
}

/// First `n` points after skipping `skip`, as rows.
pub fn sobol(dim: usize, n: usize, skip: u64) -> Result<Vec<Vec<f64>>> {
    let s = Sobol::new(dim)?;
    Ok((0..n as u64)
        .map(|k| {
            let mut p = vec![0.0; dim];
            s.point(skip + k, &mut p);
            p
        })
        .collect())
}
