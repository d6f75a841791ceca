//! Row-wise building blocks with hand-written backward passes.

use crate::rng::CounterRng;
use crate::scalar::Scalar;

/// sqrt(2 / pi)
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    let half = F::lit(0.5);
    let u = F::lit(GELU_C) * (x + F::lit(GELU_K) * x * x * x);
    half * x * (F::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = F::lit(0.5);
    let x2 = x * x;
    let u = F::lit(GELU_C) * (x + F::lit(GELU_K) * x2 * x);
    let t = u.tanh();
    let du = F::lit(GELU_C) * (F::one() + F::lit(3.0 * GELU_K) * x2);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

/// Adds `bias` to every `width`-wide row.
pub fn add_bias<F: Scalar>(x: &mut [F], bias: &[F]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Accumulates column sums of `dy` into `db`.
pub fn accumulate_bias_grad<F: Scalar>(dy: &[F], db: &mut [F]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

/// Cached statistics of a layer-norm application.
#[derive(Debug, Clone, Default)]
pub struct NormCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

pub fn layer_norm<F: Scalar>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    eps: f64,
) -> (Vec<F>, NormCache<F>) {
    let w = gamma.len();
    let rows = x.len() / w;
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    let inv_w = F::lit(1.0 / w as f64);
    for r in 0..rows {
        let xr = &x[r * w..(r + 1) * w];
        let mean = xr.iter().copied().sum::<F>() * inv_w;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_w;
        let rs = F::one() / (var + F::lit(eps)).sqrt();
        rstd.push(rs);
        for c in 0..w {
            let h = (xr[c] - mean) * rs;
            xhat[r * w + c] = h;
            y[r * w + c] = h * gamma[c] + beta[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns `dx` and accumulates into `dgamma` / `dbeta`.
pub fn layer_norm_backward<F: Scalar>(
    dy: &[F],
    cache: &NormCache<F>,
    gamma: &[F],
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Vec<F> {
    let w = gamma.len();
    let mut dx = vec![F::zero(); dy.len()];
    let inv_w = F::lit(1.0 / w as f64);
    let mut dxhat = vec![F::zero(); w];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * w..(r + 1) * w];
        let xh = &cache.xhat[r * w..(r + 1) * w];
        let mut mean_d = F::zero();
        let mut mean_dx = F::zero();
        for c in 0..w {
            dgamma[c] += dyr[c] * xh[c];
            dbeta[c] += dyr[c];
            dxhat[c] = dyr[c] * gamma[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d *= inv_w;
        mean_dx *= inv_w;
        for c in 0..w {
            dx[r * w + c] = rs * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

/// Inverted dropout scale factors: `0` with probability `rate`, otherwise
/// `1 / (1 - rate)`. Returns `None` when dropout is inactive.
pub fn dropout_mask<F: Scalar>(len: usize, rate: f64, rng: Option<&mut CounterRng>) -> Option<Vec<F>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = F::lit(1.0 / (1.0 - rate));
    Some(
        (0..len)
            .map(|_| if rng.uniform_f64() < rate { F::zero() } else { keep })
            .collect(),
    )
}

pub fn apply_mask_in_place<F: Scalar>(x: &mut [F], mask: &Option<Vec<F>>) {
    if let Some(m) = mask {
        for (v, &s) in x.iter_mut().zip(m) {
            *v *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        // 0.5 * (1 + tanh(0.7978845608 * 1.044715))
        assert!((gelu(1.0f64) - 0.841_191_990_608_276_8).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.158_808_009_391_723_24).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_central_difference() {
        let x: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3 + i as f64 * 0.01).collect();
        let gamma: Vec<f64> = (0..4).map(|i| 1.0 + 0.1 * i as f64).collect();
        let beta = vec![0.05; 4];
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin()).collect();
        let loss = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, &gamma, &beta, 1e-5);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, &gamma, &beta, 1e-5);
        let mut dg = vec![0.0; 4];
        let mut db = vec![0.0; 4];
        let dx = layer_norm_backward(&w, &cache, &gamma, &mut dg, &mut db);
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn dropout_mask_rate() {
        let mut rng = CounterRng::new(1);
        let m: Vec<f32> = dropout_mask(10_000, 0.1, Some(&mut rng)).unwrap();
        let dropped = m.iter().filter(|&&v| v == 0.0).count();
        assert!((800..1200).contains(&dropped));
        assert!(dropout_mask::<f32>(10, 0.1, None).is_none());
        assert!(dropout_mask::<f32>(10, 0.0, Some(&mut rng)).is_none());
    }
}
