use rayon::prelude::*;

use super::network::{NetworkSpec, Op, Parameters, Plan};
use crate::datasets::TupleRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability floor applied before taking the log in the loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Samples per gradient partial sum. Partial sums are added in chunk order,
/// so the result does not depend on the number of workers.
pub const GRAD_CHUNK: usize = 64;

#[inline]
fn relu<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        v
    } else {
        S::zero()
    }
}

/// Runs all ops on `act`, whose first `n` entries hold the input.
pub(crate) fn run_forward<S: Scalar>(plan: &Plan, p: &[S], act: &mut [S]) {
    for op in &plan.ops {
        match *op {
            Op::Conv {
                src,
                dst,
                cin,
                cout,
                len,
                w,
                ..
            } => {
                let (lo, hi) = act.split_at_mut(dst);
                let x = &lo[src..src + cin * len];
                let y = &mut hi[..cout * len];
                let (wm, b) = p[w..w + cout * (cin + 1)].split_at(cout * cin);
                for o in 0..cout {
                    let row = &wm[o * cin..(o + 1) * cin];
                    for t in 0..len {
                        let mut s = b[o];
                        for (i, &wi) in row.iter().enumerate() {
                            s += wi * x[i * len + t];
                        }
                        y[o * len + t] = relu(s);
                    }
                }
            }
            Op::Pool {
                src,
                src_len,
                dst,
                dst_len,
            } => {
                let (lo, hi) = act.split_at_mut(dst);
                let x = &lo[src..src + src_len];
                for (i, y) in hi[..dst_len].iter_mut().enumerate() {
                    *y = match x.get(2 * i + 1) {
                        Some(&b) if b > x[2 * i] => b,
                        _ => x[2 * i],
                    };
                }
            }
            Op::Linear {
                src,
                nin,
                nout,
                dst,
                w,
                relu: r,
            } => {
                let (lo, hi) = act.split_at_mut(dst);
                let x = &lo[src..src + nin];
                let (wm, b) = p[w..w + nout * (nin + 1)].split_at(nout * nin);
                for (o, y) in hi[..nout].iter_mut().enumerate() {
                    let mut s = b[o];
                    for (&wi, &xi) in wm[o * nin..(o + 1) * nin].iter().zip(x) {
                        s += wi * xi;
                    }
                    *y = if r { relu(s) } else { s };
                }
            }
        }
    }
}

fn softmax2<S: Scalar>(z: &[S]) -> [S; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Forward pass into a caller-owned activation buffer (resized as needed).
pub(crate) fn probs_into<S: Scalar>(plan: &Plan, p: &[S], x: &[S], act: &mut Vec<S>) -> [S; 2] {
    act.resize(plan.act_len, S::zero());
    act[..x.len()].copy_from_slice(x);
    run_forward(plan, p, act);
    softmax2(&act[plan.logits..plan.logits + 2])
}

/// Class probabilities `[in control, out of control]`.
pub fn forward<S: Scalar>(spec: &NetworkSpec, params: &Parameters<S>, x: &[S]) -> Result<[S; 2]> {
    spec.check_input(x)?;
    Ok(probs_into(spec.plan(), params.as_slice(), x, &mut Vec::new()))
}

/// Number of records classified out of control.
pub fn count_rejections<S: Scalar>(spec: &NetworkSpec, params: &Parameters<S>, records: &[TupleRecord<S>]) -> Result<u64> {
    let mut act = Vec::new();
    let half = S::lit(0.5);
    let mut count = 0;
    for r in records {
        spec.check_input(r.values())?;
        count += u64::from(probs_into(spec.plan(), params.as_slice(), r.values(), &mut act)[1] > half);
    }
    Ok(count)
}

/// ReLU on/off states and max-pool choices for input `x`, in op order.
///
/// The network is affine in the parameters between points that share this
/// pattern, so finite differences are only meaningful within one pattern.
pub fn activation_pattern<S: Scalar>(spec: &NetworkSpec, params: &Parameters<S>, x: &[S]) -> Result<Vec<bool>> {
    Ok(forward_with_pattern(spec, params, x)?.1)
}

/// [`forward`] and [`activation_pattern`] from a single pass.
pub fn forward_with_pattern<S: Scalar>(spec: &NetworkSpec, params: &Parameters<S>, x: &[S]) -> Result<([S; 2], Vec<bool>)> {
    spec.check_input(x)?;
    let plan = spec.plan();
    let mut act = Vec::new();
    let probs = probs_into(plan, params.as_slice(), x, &mut act);
    let mut out = Vec::new();
    for op in &plan.ops {
        match *op {
            Op::Conv { dst, cout, len, .. } => out.extend(act[dst..dst + cout * len].iter().map(|&v| v > S::zero())),
            Op::Linear { dst, nout, relu: true, .. } => out.extend(act[dst..dst + nout].iter().map(|&v| v > S::zero())),
            Op::Linear { .. } => {}
            Op::Pool { src, src_len, dst_len, .. } => {
                out.extend((0..dst_len).map(|i| 2 * i + 1 < src_len && act[src + 2 * i + 1] > act[src + 2 * i]))
            }
        }
    }
    Ok((probs, out))
}

/// Cross-entropy `-ln p[label]` with the probability clamped at 1e-12.
pub fn loss<S: Scalar>(probs: [S; 2], label: bool) -> S {
    -probs[usize::from(label)].max(S::lit(PROB_CLAMP)).ln()
}

/// Out of control iff its probability is strictly above one half.
pub fn classify<S: Scalar>(spec: &NetworkSpec, params: &Parameters<S>, x: &[S]) -> Result<bool> {
    let p = forward(spec, params, x)?;
    Ok(p[1] > S::lit(0.5))
}

/// Fraction of records whose classification differs from the label.
pub fn misclassification_rate<S: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<S>,
    dataset: &[TupleRecord<S>],
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let wrong = dataset
        .par_chunks(4096)
        .map(|chunk| {
            let mut act = Vec::new();
            chunk.iter().try_fold(0u64, |acc, r| {
                spec.check_input(r.values())?;
                let p = probs_into(spec.plan(), params.as_slice(), r.values(), &mut act);
                Ok::<_, Error>(acc + u64::from((p[1] > S::lit(0.5)) != r.label))
            })
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Adds one sample's loss gradient to `grad`; returns its loss.
fn backprop_one<S: Scalar>(
    plan: &Plan,
    p: &[S],
    x: &[S],
    label: bool,
    act: &mut [S],
    g: &mut [S],
    grad: &mut [S],
) -> S {
    act[..x.len()].copy_from_slice(x);
    run_forward(plan, p, act);
    let probs = softmax2(&act[plan.logits..plan.logits + 2]);
    let y = usize::from(label);
    let l = loss(probs, label);
    g.iter_mut().for_each(|v| *v = S::zero());
    if probs[y] >= S::lit(PROB_CLAMP) {
        g[plan.logits] = probs[0] - if y == 0 { S::one() } else { S::zero() };
        g[plan.logits + 1] = probs[1] - if y == 1 { S::one() } else { S::zero() };
    }
    for op in plan.ops.iter().rev() {
        match *op {
            Op::Conv {
                src,
                dst,
                cin,
                cout,
                len,
                w,
                input_grad,
            } => {
                let (wg, bg) = grad[w..w + cout * (cin + 1)].split_at_mut(cout * cin);
                let wm = &p[w..w + cout * cin];
                let (glo, ghi) = g.split_at_mut(dst);
                for o in 0..cout {
                    for t in 0..len {
                        if act[dst + o * len + t] <= S::zero() {
                            continue;
                        }
                        let d = ghi[o * len + t];
                        bg[o] += d;
                        for i in 0..cin {
                            wg[o * cin + i] += d * act[src + i * len + t];
                            if input_grad {
                                glo[src + i * len + t] += wm[o * cin + i] * d;
                            }
                        }
                    }
                }
            }
            Op::Pool {
                src,
                src_len,
                dst,
                dst_len,
            } => {
                for i in 0..dst_len {
                    let j = if 2 * i + 1 < src_len && act[src + 2 * i + 1] > act[src + 2 * i] {
                        2 * i + 1
                    } else {
                        2 * i
                    };
                    let d = g[dst + i];
                    g[src + j] += d;
                }
            }
            Op::Linear {
                src,
                nin,
                nout,
                dst,
                w,
                relu: r,
            } => {
                let (wg, bg) = grad[w..w + nout * (nin + 1)].split_at_mut(nout * nin);
                let wm = &p[w..w + nout * nin];
                let (glo, ghi) = g.split_at_mut(dst);
                for o in 0..nout {
                    if r && act[dst + o] <= S::zero() {
                        continue;
                    }
                    let d = ghi[o];
                    bg[o] += d;
                    let xs = &act[src..src + nin];
                    for (i, (gw, &xi)) in wg[o * nin..(o + 1) * nin].iter_mut().zip(xs).enumerate() {
                        *gw += d * xi;
                        glo[src + i] += wm[o * nin + i] * d;
                    }
                }
            }
        }
    }
    l
}

/// Sum of losses and of gradients over `items`, accumulated in fixed-size
/// chunks whose partial sums are combined in order.
pub(crate) fn gradient_sum<'a, S, I>(
    plan: &Plan,
    p: &[S],
    items: &'a [I],
    get: impl Fn(&'a I) -> (&'a [S], bool) + Sync,
) -> (S, Vec<S>)
where
    S: Scalar + 'a,
    I: Sync,
{
    let partials: Vec<(S, Vec<S>)> = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut act = vec![S::zero(); plan.act_len];
            let mut g = vec![S::zero(); plan.act_len];
            let mut grad = vec![S::zero(); p.len()];
            let mut loss_sum = S::zero();
            for item in chunk {
                let (x, label) = get(item);
                loss_sum += backprop_one(plan, p, x, label, &mut act, &mut g, &mut grad);
            }
            (loss_sum, grad)
        })
        .collect();
    let mut total = vec![S::zero(); p.len()];
    let mut loss_sum = S::zero();
    for (l, grad) in partials {
        loss_sum += l;
        for (t, v) in total.iter_mut().zip(grad) {
            *t += v;
        }
    }
    (loss_sum, total)
}

/// Mean loss over the batch and its gradient with respect to every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    pub loss: S,
    pub values: Vec<S>,
}

pub fn backward<S: Scalar>(spec: &NetworkSpec, params: &Parameters<S>, batch: &[TupleRecord<S>]) -> Result<Gradients<S>> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for r in batch {
        spec.check_input(r.values())?;
    }
    let (loss_sum, mut values) = gradient_sum(spec.plan(), params.as_slice(), batch, |r| (r.values(), r.label));
    let scale = S::one() / S::lit(batch.len() as f64);
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(Gradients {
        loss: loss_sum * scale,
        values,
    })
}
