//! Finite-difference verification of tape gradients.
//!
//! Central differences around a point, compared against the analytic
//! gradient with relative error `|a - n| / max(1, |a|)`. The function under
//! check is evaluated twice at the base point first; any disagreement is a
//! determinism error, since a noisy loss makes the comparison meaningless.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sc, Mask, Scalar, Tape, TensorId, IGNORE_INDEX};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Compare `analytic` against central differences of `eval` at `point`.
pub fn central_difference<F: Scalar>(
    eval: &mut dyn FnMut(&[F]) -> Result<F>,
    point: &[F],
    analytic: &[F],
    epsilon: F,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if analytic.len() != point.len() {
        return Err(Error::contract(format!(
            "gradient check: analytic gradient has {} coords, point has {}",
            analytic.len(),
            point.len()
        )));
    }
    let base0 = eval(point)?;
    let base1 = eval(point)?;
    if !base0.to_f64v().is_finite() {
        return Err(Error::contract("gradient check: non-finite loss at base point"));
    }
    if base0 != base1 {
        return Err(Error::NonDeterministic(format!(
            "loss {} vs {} at identical input",
            base0, base1
        )));
    }
    let mut buf = point.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    let two_eps = 2.0 * epsilon.to_f64v();
    for i in 0..point.len() {
        let orig = buf[i];
        buf[i] = orig + epsilon;
        let fp = eval(&buf)?;
        buf[i] = orig - epsilon;
        let fm = eval(&buf)?;
        buf[i] = orig;
        let numeric = (fp.to_f64v() - fm.to_f64v()) / two_eps;
        let a = analytic[i].to_f64v();
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    Ok(GradCheckReport {
        coords: point.len(),
        max_rel_err: max_rel,
        worst_coord: worst,
        tolerance,
    })
}

/// Rebuild `build`'s loss graph around one trainable leaf and verify the
/// leaf's gradient by central differences.
pub fn finite_difference_check<F: Scalar>(
    build: &mut dyn FnMut(&mut Tape<F>, TensorId) -> Result<TensorId>,
    rows: usize,
    cols: usize,
    point: &[F],
    epsilon: F,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.leaf(rows, cols, point.to_vec(), true)?;
        let loss = build(&mut tape, x)?;
        tape.scalar(loss)?;
        let grads = tape.backward(loss)?;
        grads
            .get(x)
            .ok_or_else(|| Error::contract("gradient check: leaf missing from gradient map"))?
            .to_vec()
    };
    let mut eval = |vals: &[F]| -> Result<F> {
        let mut tape = Tape::new();
        let x = tape.leaf(rows, cols, vals.to_vec(), true)?;
        let loss = build(&mut tape, x)?;
        tape.scalar(loss)
    };
    central_difference(&mut eval, point, &analytic, epsilon, tolerance)
}

fn randn<F: Scalar>(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<F> {
    (0..n)
        .map(|_| sc::<F>((rng.gen::<f64>() * 2.0 - 1.0) * scale))
        .collect()
}

/// Gradient-check every kernel the tape exposes. Returns one named report
/// per kernel; used by the `ops` scope of the gradcheck command and by the
/// acceptance suite.
pub fn check_all_ops<F: Scalar>(
    seed: u64,
    epsilon: F,
    tolerance: f64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(&'static str, GradCheckReport)> = Vec::new();

    // matmul, both operand roles, both transposition modes
    {
        let w = randn::<F>(&mut rng, 12, 1.0);
        let point = randn::<F>(&mut rng, 6, 1.0);
        let wc = w.clone();
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let w = t.constant(3, 4, wc.clone())?;
            let y = t.matmul(x, w)?; // (2,3)*(3,4)
            t.mean(y)
        };
        out.push((
            "matmul",
            finite_difference_check(&mut build, 2, 3, &point, epsilon, tolerance)?,
        ));
        let a = randn::<F>(&mut rng, 6, 1.0);
        let point = randn::<F>(&mut rng, 12, 1.0);
        let ac = a.clone();
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let a = t.constant(2, 3, ac.clone())?;
            let y = t.matmul_t(a, x, true)?; // (2,3)*(4,3)^T
            t.mean(y)
        };
        out.push((
            "matmul-transposed",
            finite_difference_check(&mut build, 4, 3, &point, epsilon, tolerance)?,
        ));
    }

    // add and scale
    {
        let b = randn::<F>(&mut rng, 8, 1.0);
        let point = randn::<F>(&mut rng, 8, 1.0);
        let bc = b.clone();
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let b = t.constant(2, 4, bc.clone())?;
            let s = t.add(x, b)?;
            let s = t.scale(s, sc::<F>(-1.7))?;
            t.mean(s)
        };
        out.push((
            "add-scale",
            finite_difference_check(&mut build, 2, 4, &point, epsilon, tolerance)?,
        ));
    }

    // concat both dims, then slice both dims
    {
        let point = randn::<F>(&mut rng, 12, 1.0);
        let side = randn::<F>(&mut rng, 8, 1.0);
        let sidec = side.clone();
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let side = t.constant(4, 2, sidec.clone())?;
            let wide = t.concat(&[x, side], 1)?; // (4,3)+(4,2) -> (4,5)
            let tall = t.concat(&[wide, wide], 0)?; // (8,5)
            let cut = t.slice(tall, 0, 2, 5)?;
            let cut = t.slice(cut, 1, 1, 3)?;
            t.mean(cut)
        };
        out.push((
            "concat-slice",
            finite_difference_check(&mut build, 4, 3, &point, epsilon, tolerance)?,
        ));
    }

    // embedding lookup, gradient wrt the table
    {
        let point = randn::<F>(&mut rng, 15, 1.0);
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let rows = t.embed(x, &[4, 0, 4, 2])?;
            t.mean(rows)
        };
        out.push((
            "embedding-lookup",
            finite_difference_check(&mut build, 5, 3, &point, epsilon, tolerance)?,
        ));
    }

    // layer-norm wrt input, gain, and bias
    {
        let point = randn::<F>(&mut rng, 12, 2.0);
        let g = randn::<F>(&mut rng, 4, 1.0);
        let b = randn::<F>(&mut rng, 4, 1.0);
        let (gc, bc) = (g.clone(), b.clone());
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let g = t.constant(1, 4, gc.clone())?;
            let b = t.constant(1, 4, bc.clone())?;
            let y = t.layer_norm(x, g, b)?;
            let y = t.gelu(y)?;
            t.mean(y)
        };
        out.push((
            "layer-norm",
            finite_difference_check(&mut build, 3, 4, &point, epsilon, tolerance)?,
        ));
        let x = randn::<F>(&mut rng, 12, 2.0);
        let point = randn::<F>(&mut rng, 8, 1.0);
        let xc = x.clone();
        let mut build = move |t: &mut Tape<F>, p: TensorId| {
            let x = t.constant(3, 4, xc.clone())?;
            let g = t.slice(p, 1, 0, 4)?;
            let b = t.slice(p, 1, 4, 4)?;
            let y = t.layer_norm(x, g, b)?;
            t.mean(y)
        };
        out.push((
            "layer-norm-params",
            finite_difference_check(&mut build, 1, 8, &point, epsilon, tolerance)?,
        ));
    }

    // gelu alone
    {
        let point = randn::<F>(&mut rng, 10, 3.0);
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let y = t.gelu(x)?;
            t.mean(y)
        };
        out.push((
            "gelu",
            finite_difference_check(&mut build, 2, 5, &point, epsilon, tolerance)?,
        ));
    }

    // masked softmax composed with a constant readout
    {
        let point = randn::<F>(&mut rng, 12, 1.5);
        let w = randn::<F>(&mut rng, 4, 1.0);
        let mask = Mask::from_fn(3, 4, |r, c| (r + c) % 3 != 0 || c == 1);
        let wc = w.clone();
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let p = t.masked_softmax(x, &mask)?;
            let w = t.constant(4, 1, wc.clone())?;
            let y = t.matmul(p, w)?;
            t.mean(y)
        };
        out.push((
            "masked-softmax-last-dim",
            finite_difference_check(&mut build, 3, 4, &point, epsilon, tolerance)?,
        ));
    }

    // cross-entropy with an ignored row
    {
        let point = randn::<F>(&mut rng, 15, 2.0);
        let targets = vec![2, IGNORE_INDEX, 0];
        let mut build = move |t: &mut Tape<F>, x: TensorId| t.cross_entropy(x, &targets);
        out.push((
            "cross-entropy-from-logits",
            finite_difference_check(&mut build, 3, 5, &point, epsilon, tolerance)?,
        ));
    }

    // mean
    {
        let point = randn::<F>(&mut rng, 6, 1.0);
        let mut build = move |t: &mut Tape<F>, x: TensorId| t.mean(x);
        out.push((
            "mean",
            finite_difference_check(&mut build, 2, 3, &point, epsilon, tolerance)?,
        ));
    }

    // sigmoid-bce with mixed labels
    {
        let point = randn::<F>(&mut rng, 6, 2.0);
        let labels: Vec<F> = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0]
            .iter()
            .map(|&v| sc::<F>(v))
            .collect();
        let mut build = move |t: &mut Tape<F>, x: TensorId| t.sigmoid_bce(x, &labels);
        out.push((
            "sigmoid-bce",
            finite_difference_check(&mut build, 6, 1, &point, epsilon, tolerance)?,
        ));
    }

    // row normalization composed with a constant readout
    {
        let mut point = randn::<F>(&mut rng, 12, 1.0);
        // keep rows far from the clamp threshold so the branch is stable
        for v in point.iter_mut() {
            *v = *v + sc::<F>(if v.to_f64v() >= 0.0 { 0.5 } else { -0.5 });
        }
        let w = randn::<F>(&mut rng, 4, 1.0);
        let wc = w.clone();
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let y = t.l2_normalize_rows(x, sc::<F>(1e-8))?;
            let w = t.constant(4, 1, wc.clone())?;
            let y = t.matmul(y, w)?;
            t.mean(y)
        };
        out.push((
            "l2-normalize-rows",
            finite_difference_check(&mut build, 3, 4, &point, epsilon, tolerance)?,
        ));
    }

    // row max with well-separated entries so the argmax is stable under +-eps
    {
        let mut point = randn::<F>(&mut rng, 12, 0.1);
        for (i, v) in point.iter_mut().enumerate() {
            *v = *v + sc::<F>(i as f64);
        }
        let mut build = move |t: &mut Tape<F>, x: TensorId| {
            let m = t.max_last_dim(x)?;
            t.mean(m)
        };
        out.push((
            "max-last-dim",
            finite_difference_check(&mut build, 3, 4, &point, epsilon, tolerance)?,
        ));
    }

    Ok(out)
}
