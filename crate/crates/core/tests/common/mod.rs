//! Helpers shared by the CNN and acceptance suites.
#![allow(dead_code)]

use qcnn_core::cnn::{backward, forward_with_pattern, loss, NetworkSpec, Parameters};
use qcnn_core::datasets::{ContaminationPattern, PositionMask, TupleRecord};
use qcnn_core::numerics::RngState;
use rayon::prelude::*;

pub fn record(x: &[f64], label: bool) -> TupleRecord<f64> {
    let pattern = if label {
        ContaminationPattern::new(x.len(), PositionMask::from_bits(1), 1.0, 1.0).unwrap()
    } else {
        ContaminationPattern::in_control(x.len()).unwrap()
    };
    TupleRecord::new(x, pattern).unwrap()
}

/// Random weights plus small random biases so every parameter path is exercised.
pub fn random_params(spec: &NetworkSpec, rng: &mut RngState) -> Parameters<f64> {
    let mut p = Parameters::init(spec, rng);
    for v in p.as_mut_slice() {
        if *v == 0.0 {
            *v = rng.normal(0.0, 0.1);
        }
    }
    p
}

/// `||g - fd|| / (||g|| + ||fd||)` with central differences of step `h`,
/// plus the number of coordinates skipped because `+h` and `-h` land in
/// different ReLU/pooling regions.
pub fn gradient_check(spec: &NetworkSpec, p: &Parameters<f64>, r: &TupleRecord<f64>, h: f64) -> (f64, usize) {
    let g = backward(spec, p, std::slice::from_ref(r)).unwrap().values;
    let fd: Vec<Option<f64>> = (0..p.len())
        .into_par_iter()
        .map(|i| {
            let mut q = p.clone();
            q.as_mut_slice()[i] = p.as_slice()[i] + h;
            let (up, up_pattern) = forward_with_pattern(spec, &q, r.values()).unwrap();
            q.as_mut_slice()[i] = p.as_slice()[i] - h;
            let (down, down_pattern) = forward_with_pattern(spec, &q, r.values()).unwrap();
            let (up, down) = (loss(up, r.label), loss(down, r.label));
            let smooth = down_pattern == up_pattern;
            smooth.then(|| (up - down) / (2.0 * h))
        })
        .collect();
    let (mut diff, mut gn, mut fdn, mut skipped) = (0.0, 0.0, 0.0, 0);
    for (a, b) in g.iter().zip(&fd) {
        match b {
            Some(b) => {
                diff += (a - b) * (a - b);
                gn += a * a;
                fdn += b * b;
            }
            None => skipped += 1,
        }
    }
    let denom = gn.sqrt() + fdn.sqrt();
    let rel = if denom < 1e-12 { 0.0 } else { diff.sqrt() / denom };
    (rel, skipped)
}
