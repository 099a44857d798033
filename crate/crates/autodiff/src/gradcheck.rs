//! Central finite-difference oracle for the tape primitives.
//!
//! The checked function is `f(x) = <r, g(x)>` for a fixed random cotangent
//! `r`, so the analytic side is a single seeded reverse sweep and the numeric
//! side only ever re-runs forward passes.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that gradients that are
/// zero in exact arithmetic are compared absolutely.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compare the tape gradient of `<cotangent, build(inputs)>` with respect to
/// every element of every input against central differences with step `h`.
///
/// `build` must be deterministic (reseed any dropout generator inside it).
pub fn check<F>(inputs: &[Tensor<f64>], cotangent_seed: u64, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(inputs)?;
    let cotangent = pseudo_random(cotangent_seed, tape.value(out).len());
    let dot = |t: &Tensor<f64>| t.data().iter().zip(&cotangent).map(|(a, b)| a * b).sum::<f64>();
    tape.backward_seeded(out, cotangent.clone())?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]))
        .collect();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let (t_plus, _, o_plus) = eval(&probe)?;
            let f_plus = dot(t_plus.value(o_plus));
            probe[i].data_mut()[j] = orig - h;
            let (t_minus, _, o_minus) = eval(&probe)?;
            let f_minus = dot(t_minus.value(o_minus));
            probe[i].data_mut()[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            worst = worst.max(rel_error(grads[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked,
    })
}

/// Deterministic values in `[-1, 1)` from a 64-bit mix of `(seed, index)`.
pub fn pseudo_random(seed: u64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut z = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Small deterministic integer source for drawing shapes.
struct ShapeDraw(u64);

impl ShapeDraw {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + (self.next() % (hi_inclusive - lo + 1) as u64) as usize
    }
}

fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, pseudo_random(seed, n)).expect("length matches shape")
}

/// Values in `[-1, -0.05] U [0.05, 1]` so central differences never straddle a ReLU kink.
fn kink_free(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = pseudo_random(seed, n)
        .into_iter()
        .map(|v| v.signum() * (0.05 + 0.95 * v.abs()))
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Names of the primitives covered by [`primitive_suite`].
pub const PRIMITIVES: &[&str] = &[
    "conv2d",
    "batch_norm/batch",
    "batch_norm/fixed",
    "relu",
    "add",
    "global_avg_pool",
    "dense",
    "dropout",
    "softmax_xent",
];

/// Run `cases` randomized small-shape gradient checks per primitive and
/// return the worst report for each primitive.
pub fn primitive_suite(cases: usize, seed: u64, h: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use crate::tape::{BatchNormMode, Conv2dSpec};
    use rand::SeedableRng;

    let mut draw = ShapeDraw(seed);
    let mut out = Vec::new();
    for &name in PRIMITIVES {
        let mut worst = GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
        };
        for case in 0..cases {
            let s = draw.next();
            let report = match name {
                "conv2d" => {
                    let (n, cin, cout) = (draw.range(1, 2), draw.range(1, 3), draw.range(1, 3));
                    let (kh, kw) = (draw.range(1, 3), draw.range(1, 3));
                    let (sy, sx) = (draw.range(1, 2), draw.range(1, 3));
                    let (py, px) = (draw.range(0, 1), draw.range(0, 1));
                    let h_in = draw.range(kh.max(3), 5);
                    let w_in = draw.range(kw.max(3), 5);
                    let x = rand_tensor(vec![n, cin, h_in, w_in], s);
                    let k = rand_tensor(vec![cout, cin, kh, kw], s ^ 1);
                    check(&[x, k], s ^ 2, h, |t, v| t.conv2d(v[0], v[1], Conv2dSpec::new((sy, sx), (py, px))))?
                }
                "batch_norm/batch" | "batch_norm/fixed" => {
                    let (n, c) = (draw.range(2, 3), draw.range(1, 3));
                    let (hh, ww) = (draw.range(1, 3), draw.range(1, 3));
                    let x = rand_tensor(vec![n, c, hh, ww], s);
                    let gamma = rand_tensor(vec![c], s ^ 1);
                    let beta = rand_tensor(vec![c], s ^ 2);
                    let mean = pseudo_random(s ^ 3, c);
                    let var: Vec<f64> = pseudo_random(s ^ 4, c).iter().map(|v| 0.2 + v.abs()).collect();
                    let batch = name == "batch_norm/batch";
                    check(&[x, gamma, beta], s ^ 5, h, |t, v| {
                        let mode = if batch {
                            BatchNormMode::Batch { eps: 1e-5 }
                        } else {
                            BatchNormMode::Fixed {
                                mean: &mean,
                                var: &var,
                                eps: 1e-5,
                            }
                        };
                        Ok(t.batch_norm(v[0], v[1], v[2], mode)?.0)
                    })?
                }
                "relu" => {
                    let shape = vec![draw.range(1, 3), draw.range(1, 3), draw.range(1, 4), draw.range(1, 4)];
                    check(&[kink_free(shape, s)], s ^ 1, h, |t, v| Ok(t.relu(v[0])))?
                }
                "add" => {
                    let shape = vec![draw.range(1, 3), draw.range(1, 3), draw.range(1, 4), draw.range(1, 4)];
                    let a = rand_tensor(shape.clone(), s);
                    let b = rand_tensor(shape, s ^ 1);
                    check(&[a, b], s ^ 2, h, |t, v| t.add(v[0], v[1]))?
                }
                "global_avg_pool" => {
                    let shape = vec![draw.range(1, 3), draw.range(1, 3), draw.range(1, 4), draw.range(1, 4)];
                    check(&[rand_tensor(shape, s)], s ^ 1, h, |t, v| t.global_avg_pool(v[0]))?
                }
                "dense" => {
                    let (n, fin, fout) = (draw.range(1, 4), draw.range(1, 5), draw.range(1, 5));
                    let x = rand_tensor(vec![n, fin], s);
                    let w = rand_tensor(vec![fout, fin], s ^ 1);
                    let b = rand_tensor(vec![fout], s ^ 2);
                    check(&[x, w, b], s ^ 3, h, |t, v| t.dense(v[0], v[1], v[2]))?
                }
                "dropout" => {
                    let shape = vec![draw.range(1, 3), draw.range(1, 3), draw.range(1, 4), draw.range(1, 4)];
                    let rate = 0.1 + 0.4 * (case as f64 / cases.max(1) as f64);
                    check(&[rand_tensor(shape, s)], s ^ 1, h, |t, v| {
                        let mut rng = rand::rngs::StdRng::seed_from_u64(s);
                        t.dropout(v[0], rate, &mut rng)
                    })?
                }
                "softmax_xent" => {
                    let (n, c) = (draw.range(1, 4), draw.range(2, 6));
                    let labels: Vec<usize> = (0..n).map(|_| draw.range(0, c - 1)).collect();
                    let z = rand_tensor(vec![n, c], s).cast::<f64>();
                    let scaled = Tensor::new(vec![n, c], z.data().iter().map(|v| 3.0 * v).collect())?;
                    check(&[scaled], s ^ 1, h, |t, v| t.softmax_xent(v[0], &labels))?
                }
                _ => unreachable!("unknown primitive {name}"),
            };
            worst.max_rel_error = worst.max_rel_error.max(report.max_rel_error);
            worst.checked += report.checked;
        }
        out.push((name, worst));
    }
    Ok(out)
}
