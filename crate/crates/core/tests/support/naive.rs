//! Naive evaluators of the texture operators, written straight from their
//! definitions on row/column-indexed patches.

use printid::texture::{
    direction_code, lbp, ltp, ltrp, ltrp_binary_split, magnitude_pattern, NeighborhoodOrder, Plane,
};
use rand::Rng;

/// Neighbours of (row, col), clockwise from the top-left.
pub fn ring(r: usize, c: usize) -> [(usize, usize); 8] {
    [
        (r - 1, c - 1),
        (r - 1, c),
        (r - 1, c + 1),
        (r, c + 1),
        (r + 1, c + 1),
        (r + 1, c),
        (r + 1, c - 1),
        (r, c - 1),
    ]
}

pub struct Patch {
    pub rows: Vec<Vec<f64>>,
}

impl Patch {
    pub fn random(rng: &mut impl Rng, n: usize, levels: i32) -> Self {
        Patch {
            rows: (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(0..levels) as f64).collect())
                .collect(),
        }
    }

    pub fn plane(&self) -> Plane {
        let n = self.rows.len();
        Plane::new(n, self.rows[0].len(), self.rows.iter().flatten().copied().collect()).unwrap()
    }

    pub fn at(&self, (r, c): (usize, usize)) -> f64 {
        self.rows[r][c]
    }

    pub fn naive_lbp(&self, r: usize, c: usize) -> u8 {
        let mut v = 0u32;
        for (n, q) in ring(r, c).into_iter().enumerate() {
            if self.at(q) - self.at((r, c)) >= 0.0 {
                v += 1 << n;
            }
        }
        v as u8
    }

    pub fn naive_ltp(&self, r: usize, c: usize, t: f64) -> (u8, u8) {
        let (mut up, mut lo) = (0u32, 0u32);
        for (n, q) in ring(r, c).into_iter().enumerate() {
            let x = self.at(q) - self.at((r, c));
            let w = if x >= t {
                1
            } else if x.abs() < t {
                0
            } else {
                -1
            };
            if w == 1 {
                up += 1 << n;
            }
            if w == -1 {
                lo += 1 << n;
            }
        }
        (up as u8, lo as u8)
    }

    pub fn naive_dir(&self, r: usize, c: usize) -> u8 {
        let gh = self.at((r, c + 1)) - self.at((r, c));
        let gv = self.at((r + 1, c)) - self.at((r, c));
        if gh >= 0.0 && gv >= 0.0 {
            1
        } else if gh < 0.0 && gv >= 0.0 {
            2
        } else if gh < 0.0 && gv < 0.0 {
            3
        } else {
            4
        }
    }

    pub fn naive_ltrp(&self, r: usize, c: usize) -> [u8; 8] {
        let centre = self.naive_dir(r, c);
        let mut out = [0; 8];
        for (n, (qr, qc)) in ring(r, c).into_iter().enumerate() {
            let d = self.naive_dir(qr, qc);
            out[n] = if d == centre { 0 } else { d };
        }
        out
    }

    pub fn naive_split(tetra: &[u8; 8], centre: u8) -> [u8; 3] {
        let mut out = [0u8; 3];
        let mut k = 0;
        for d in 1..=4u8 {
            if d == centre {
                continue;
            }
            for (n, &t) in tetra.iter().enumerate() {
                if t == d {
                    out[k] += 1 << n;
                }
            }
            k += 1;
        }
        out
    }

    pub fn naive_magnitude(&self, r: usize, c: usize) -> u8 {
        let mag = |r: usize, c: usize| {
            let gh = self.at((r, c + 1)) - self.at((r, c));
            let gv = self.at((r + 1, c)) - self.at((r, c));
            (gh * gh + gv * gv).sqrt()
        };
        let mut v = 0u32;
        for (n, (qr, qc)) in ring(r, c).into_iter().enumerate() {
            if mag(r, c) - mag(qr, qc) >= 0.0 {
                v += 1 << n;
            }
        }
        v as u8
    }
}

/// Compares every operator with its naive evaluator on one random 3×3 and
/// one random 5×5 patch; odd trials use few gray levels so ties are common.
pub fn check_trial(rng: &mut impl Rng, trial: usize) -> Result<(), String> {
    let order = NeighborhoodOrder::default();
    let levels = if trial % 2 == 0 { 4 } else { 256 };
    let small = Patch::random(rng, 3, levels);
    let p = small.plane();
    let t = rng.random_range(1..6) as f64;
    let mut mismatches = Vec::new();
    if lbp(&p, 1, 1, &order).unwrap() != small.naive_lbp(1, 1) {
        mismatches.push("lbp");
    }
    if ltp(&p, 1, 1, t, &order).unwrap() != small.naive_ltp(1, 1, t) {
        mismatches.push("ltp");
    }

    let big = Patch::random(rng, 5, levels);
    let p = big.plane();
    if direction_code(&p, 2, 2).unwrap().value() != big.naive_dir(2, 2) {
        mismatches.push("direction_code");
    }
    let tetra = ltrp(&p, 1, 1, &order).unwrap();
    if tetra != big.naive_ltrp(1, 1) {
        mismatches.push("ltrp");
    }
    let centre = direction_code(&p, 1, 1).unwrap();
    if ltrp_binary_split(&tetra, centre) != Patch::naive_split(&tetra, centre.value()) {
        mismatches.push("ltrp_binary_split");
    }
    if magnitude_pattern(&p, 1, 1, &order).unwrap() != big.naive_magnitude(1, 1) {
        mismatches.push("magnitude_pattern");
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(format!("trial {trial}: {}", mismatches.join(", ")))
    }
}
