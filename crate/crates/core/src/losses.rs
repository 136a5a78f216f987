//! Training objective: windowed NCC similarity, smoothness and folding
//! penalties, combined over pyramid levels with weights `2^-(L-i)`.
//!
//! Every spatial reduction is a mean over voxels, so the weights keep their
//! meaning across grid sizes. Each term has a matching analytic gradient with
//! respect to the displacement field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{cofactors, det3, jacobian_at, stencil, warp_field_gradient, warp_slices, DisplacementField};
use crate::sampling::{box_count, box_sum};
use crate::volumes::{numel, offset, ImagePyramid, Real, Shape, Volume};

/// Stabiliser added to the NCC denominator.
pub const NCC_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NccMode {
    /// Squared local correlation coefficient, in `[0, 1]`.
    #[default]
    Squared,
    /// Signed local correlation coefficient, in `[-1, 1]`.
    Signed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the regularisation term.
    pub sigma: f64,
    /// Weight of the folding penalty inside the regularisation term.
    pub lambda: f64,
    /// Side length of the cubic NCC window; odd and at least 3.
    pub ncc_window: usize,
    pub ncc_mode: NccMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            sigma: 1.0,
            lambda: 1e-4,
            ncc_window: 9,
            ncc_mode: NccMode::Squared,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be ≥ 0, got {}", self.sigma)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        check_window(self.ncc_window)
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Config(format!("NCC window must be odd and ≥ 3, got {window}")));
    }
    Ok(())
}

/// Mean local correlation of `a` against `b` and its gradient with respect to `a`.
pub(crate) fn ncc_value_and_grad<T: Real>(
    a: &[T],
    b: &[T],
    shape: Shape,
    window: usize,
    mode: NccMode,
    want_grad: bool,
) -> (T, Option<Vec<T>>) {
    let n = numel(shape);
    let r = window / 2;
    let count = box_count(shape, r);
    let sq = |x: &[T]| x.iter().map(|&v| v * v).collect::<Vec<T>>();
    let ab: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
    let sa = box_sum(a, shape, r);
    let sb = box_sum(b, shape, r);
    let saa = box_sum(&sq(a), shape, r);
    let sbb = box_sum(&sq(b), shape, r);
    let sab = box_sum(&ab, shape, r);
    let eps = T::lit(NCC_EPS);
    let two = T::lit(2.0);

    let mut total = T::zero();
    let (mut alpha, mut alpha_mb, mut beta, mut beta_ma) = if want_grad {
        (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n])
    } else {
        (Vec::new(), Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let cnt = T::from_usize(count[p]).unwrap();
        let mu_a = sa[p] / cnt;
        let mu_b = sb[p] / cnt;
        let cross = sab[p] - sa[p] * mu_b;
        let var_a = saa[p] - sa[p] * mu_a;
        let var_b = sbb[p] - sb[p] * mu_b;
        let denom = var_a * var_b + eps;
        let (cc, al, be) = match mode {
            NccMode::Squared => (
                cross * cross / denom,
                two * cross / denom,
                two * cross * cross * var_b / (denom * denom),
            ),
            NccMode::Signed => {
                let root = denom.sqrt();
                (cross / root, T::one() / root, cross * var_b / (denom * root))
            }
        };
        total += cc;
        if want_grad {
            alpha[p] = al;
            alpha_mb[p] = al * mu_b;
            beta[p] = be;
            beta_ma[p] = be * mu_a;
        }
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let value = total * inv_n;
    if !want_grad {
        return (value, None);
    }
    let box_alpha = box_sum(&alpha, shape, r);
    let box_alpha_mb = box_sum(&alpha_mb, shape, r);
    let box_beta = box_sum(&beta, shape, r);
    let box_beta_ma = box_sum(&beta_ma, shape, r);
    let grad = (0..n)
        .map(|q| (b[q] * box_alpha[q] - box_alpha_mb[q] - a[q] * box_beta[q] + box_beta_ma[q]) * inv_n)
        .collect();
    (value, Some(grad))
}

/// Mean squared local correlation coefficient over `window³` neighbourhoods,
/// truncated at the border. Symmetric in its arguments; `1` for `a == b` up to
/// the stabiliser.
pub fn local_ncc<T: Real>(a: &Volume<T>, b: &Volume<T>, window: usize) -> Result<T> {
    local_ncc_with(a, b, window, NccMode::Squared)
}

pub fn local_ncc_with<T: Real>(a: &Volume<T>, b: &Volume<T>, window: usize, mode: NccMode) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("local_ncc: {:?} vs {:?}", a.shape(), b.shape())));
    }
    check_window(window)?;
    Ok(ncc_value_and_grad(a.data(), b.data(), a.shape(), window, mode, false).0)
}

fn check_diff(shape: Shape) -> Result<()> {
    if shape.iter().any(|&n| n < 2) {
        return Err(Error::Shape(format!("finite differences need every axis ≥ 2, got {shape:?}")));
    }
    Ok(())
}

fn grad_l2_impl<T: Real>(field: &DisplacementField<T>, want_grad: bool) -> Result<(T, Option<Vec<T>>)> {
    let shape = field.shape();
    check_diff(shape)?;
    let n = numel(shape);
    let u = field.data();
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let two = T::lit(2.0);
    let mut acc = T::zero();
    let mut grad = want_grad.then(|| vec![T::zero(); 3 * n]);
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let st = stencil(shape, x, y, z);
                for c in 0..3 {
                    for &(lo, hi) in &st {
                        let d = u[c * n + hi] - u[c * n + lo];
                        acc += d * d;
                        if let Some(g) = grad.as_mut() {
                            let s = two * d * inv_n;
                            g[c * n + hi] += s;
                            g[c * n + lo] -= s;
                        }
                    }
                }
            }
        }
    }
    Ok((acc * inv_n, grad))
}

/// Mean over voxels of the squared one-sided differences of all three
/// components along all three axes.
pub fn grad_l2<T: Real>(field: &DisplacementField<T>) -> Result<T> {
    Ok(grad_l2_impl(field, false)?.0)
}

pub fn grad_l2_gradient<T: Real>(field: &DisplacementField<T>) -> Result<(T, DisplacementField<T>)> {
    let (v, g) = grad_l2_impl(field, true)?;
    Ok((v, DisplacementField::from_vec_unchecked(field.shape(), g.unwrap())))
}

fn neg_jac_impl<T: Real>(field: &DisplacementField<T>, want_grad: bool) -> Result<(T, Option<Vec<T>>)> {
    let shape = field.shape();
    check_diff(shape)?;
    let n = numel(shape);
    let u = field.data();
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut acc = T::zero();
    let mut grad = want_grad.then(|| vec![T::zero(); 3 * n]);
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let st = stencil(shape, x, y, z);
                let jac = jacobian_at(u, n, &st);
                let det = det3(&jac);
                if det >= T::zero() {
                    continue;
                }
                acc -= det;
                if let Some(g) = grad.as_mut() {
                    let cof = cofactors(&jac);
                    for c in 0..3 {
                        for (a, &(lo, hi)) in st.iter().enumerate() {
                            let s = cof[c][a] * inv_n;
                            g[c * n + hi] -= s;
                            g[c * n + lo] += s;
                        }
                    }
                }
            }
        }
    }
    Ok((acc * inv_n, grad))
}

/// Mean of `max(0, −det J)`, with the same difference stencil as
/// [`crate::field_ops::jacobian_determinants`].
pub fn neg_jac_penalty<T: Real>(field: &DisplacementField<T>) -> Result<T> {
    Ok(neg_jac_impl(field, false)?.0)
}

pub fn neg_jac_penalty_gradient<T: Real>(field: &DisplacementField<T>) -> Result<(T, DisplacementField<T>)> {
    let (v, g) = neg_jac_impl(field, true)?;
    Ok((v, DisplacementField::from_vec_unchecked(field.shape(), g.unwrap())))
}

/// Level weights `1/2^(L−i)` for `i = 1..=L`, coarsest first.
pub fn level_weights(levels: usize) -> Vec<f64> {
    (1..=levels).map(|i| 0.5f64.powi((levels - i) as i32)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTerms {
    /// Similarity term (negative local NCC).
    pub sim: f64,
    pub smooth: f64,
    pub inv: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub levels: Vec<LevelTerms>,
    pub total: f64,
}

impl LossReport {
    pub fn csv_header(levels: usize) -> String {
        let mut cols = vec!["iteration".to_string()];
        for i in 1..=levels {
            cols.extend([format!("sim_{i}"), format!("smooth_{i}"), format!("inv_{i}")]);
        }
        cols.extend(["total".to_string(), "seconds".to_string()]);
        cols.join(",")
    }

    pub fn csv_row(&self, iteration: u64, seconds: f64) -> String {
        let mut cols = vec![iteration.to_string()];
        for t in &self.levels {
            cols.extend([fmt_f64(t.sim), fmt_f64(t.smooth), fmt_f64(t.inv)]);
        }
        cols.push(fmt_f64(self.total));
        cols.push(format!("{seconds:.4}"));
        cols.join(",")
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self
                .levels
                .iter()
                .all(|t| t.sim.is_finite() && t.smooth.is_finite() && t.inv.is_finite())
    }

    /// One line per level, for diagnostics.
    pub fn describe(&self) -> String {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, t)| {
                format!(
                    "level {}: sim={} smooth={} inv={} weight={}",
                    i + 1,
                    t.sim,
                    t.smooth,
                    t.inv,
                    t.weight
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Shortest representation that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn check_inputs<T: Real>(
    fixed: &ImagePyramid<T>,
    moving: &ImagePyramid<T>,
    fields: &[DisplacementField<T>],
    w: &LossWeights,
) -> Result<()> {
    w.validate()?;
    let levels = fields.len();
    if levels == 0 || fixed.num_levels() != levels || moving.num_levels() != levels {
        return Err(Error::Shape(format!(
            "{} fields for pyramids of {} and {} levels",
            levels,
            fixed.num_levels(),
            moving.num_levels()
        )));
    }
    for (i, f) in fields.iter().enumerate() {
        if f.shape() != fixed.level(i).shape() || f.shape() != moving.level(i).shape() {
            return Err(Error::Shape(format!(
                "field {} has shape {:?}, pyramid level is {:?}",
                i + 1,
                f.shape(),
                fixed.level(i).shape()
            )));
        }
    }
    Ok(())
}

fn total_loss_impl<T: Real>(
    fixed: &ImagePyramid<T>,
    moving: &ImagePyramid<T>,
    fields: &[DisplacementField<T>],
    w: &LossWeights,
    want_grad: bool,
) -> Result<(LossReport, Option<Vec<DisplacementField<T>>>)> {
    check_inputs(fixed, moving, fields, w)?;
    let weights = level_weights(fields.len());
    let sigma = T::lit(w.sigma);
    let lambda = T::lit(w.lambda);
    let mut total = T::zero();
    let mut terms = Vec::with_capacity(fields.len());
    let mut grads = Vec::with_capacity(fields.len());
    for (i, field) in fields.iter().enumerate() {
        let shape = field.shape();
        let wi = T::lit(weights[i]);
        let mov = moving.level(i).data();
        let warped = warp_slices(mov, shape, field.data());
        let (ncc, ncc_grad) =
            ncc_value_and_grad(&warped, fixed.level(i).data(), shape, w.ncc_window, w.ncc_mode, want_grad);
        let sim = -ncc;
        let (smooth, smooth_grad) = grad_l2_impl(field, want_grad)?;
        let (inv, inv_grad) = neg_jac_impl(field, want_grad && w.lambda != 0.0)?;
        let level_total = wi * (sim + sigma * (smooth + lambda * inv));
        total += level_total;
        terms.push(LevelTerms {
            sim: sim.to_f64().unwrap(),
            smooth: smooth.to_f64().unwrap(),
            inv: inv.to_f64().unwrap(),
            weight: weights[i],
        });
        if want_grad {
            let dsim: Vec<T> = ncc_grad.unwrap().into_iter().map(|g| -g).collect();
            let mut g = warp_field_gradient(mov, shape, field.data(), &dsim);
            let sg = smooth_grad.unwrap();
            for (k, gk) in g.iter_mut().enumerate() {
                let mut reg = sg[k];
                if let Some(ig) = inv_grad.as_ref() {
                    reg += lambda * ig[k];
                }
                *gk = wi * (*gk + sigma * reg);
            }
            grads.push(DisplacementField::from_vec_unchecked(shape, g));
        }
    }
    let report = LossReport {
        levels: terms,
        total: total.to_f64().unwrap(),
    };
    Ok((report, want_grad.then_some(grads)))
}

/// Multi-level objective `Σ_i 2^-(L-i) · (sim_i + σ·(smooth_i + λ·inv_i))`
/// for fields `φ_1..φ_L` (coarsest first).
pub fn total_loss<T: Real>(
    fixed: &ImagePyramid<T>,
    moving: &ImagePyramid<T>,
    fields: &[DisplacementField<T>],
    w: &LossWeights,
) -> Result<LossReport> {
    Ok(total_loss_impl(fixed, moving, fields, w, false)?.0)
}

/// [`total_loss`] plus its gradient with respect to every field.
pub fn total_loss_with_grad<T: Real>(
    fixed: &ImagePyramid<T>,
    moving: &ImagePyramid<T>,
    fields: &[DisplacementField<T>],
    w: &LossWeights,
) -> Result<(LossReport, Vec<DisplacementField<T>>)> {
    let (report, grads) = total_loss_impl(fixed, moving, fields, w, true)?;
    Ok((report, grads.unwrap()))
}

/// Windowed correlation of every voxel, mainly for inspection.
pub fn local_cc_map<T: Real>(a: &Volume<T>, b: &Volume<T>, window: usize) -> Result<Volume<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("local_cc_map: {:?} vs {:?}", a.shape(), b.shape())));
    }
    check_window(window)?;
    let shape = a.shape();
    let r = window as isize / 2;
    let eps = T::lit(NCC_EPS);
    Ok(Volume::from_fn(shape, |x, y, z| {
        let (mut sa, mut sb, mut saa, mut sbb, mut sab, mut cnt) =
            (T::zero(), T::zero(), T::zero(), T::zero(), T::zero(), 0usize);
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy, zz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if xx < 0 || yy < 0 || zz < 0 || xx >= shape[2] as isize || yy >= shape[1] as isize || zz >= shape[0] as isize {
                        continue;
                    }
                    let i = offset(shape, xx as usize, yy as usize, zz as usize);
                    let (va, vb) = (a.data()[i], b.data()[i]);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                    cnt += 1;
                }
            }
        }
        let c = T::from_usize(cnt).unwrap();
        let cross = sab - sa * sb / c;
        let var_a = saa - sa * sa / c;
        let var_b = sbb - sb * sb / c;
        cross * cross / (var_a * var_b + eps)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_ops::njd_percent;
    use crate::volumes::build_pyramid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(seed: u64, shape: Shape) -> Volume<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(shape, |_, _, _| rng.random::<f64>())
    }

    fn random_field(seed: u64, shape: Shape, amp: f64) -> DisplacementField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DisplacementField::from_fn(shape, |_, _, _| [0; 3].map(|_| amp * (rng.random::<f64>() - 0.5)))
    }

    /// Direct per-window evaluation: gathers each window explicitly.
    fn brute_ncc(a: &Volume<f64>, b: &Volume<f64>, window: usize) -> f64 {
        let shape = a.shape();
        let r = (window / 2) as isize;
        let mut total = 0.0;
        for z in 0..shape[0] as isize {
            for y in 0..shape[1] as isize {
                for x in 0..shape[2] as isize {
                    let mut pa = Vec::new();
                    let mut pb = Vec::new();
                    for dz in -r..=r {
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                                if (0..shape[2] as isize).contains(&xx)
                                    && (0..shape[1] as isize).contains(&yy)
                                    && (0..shape[0] as isize).contains(&zz)
                                {
                                    pa.push(a.get(xx as usize, yy as usize, zz as usize));
                                    pb.push(b.get(xx as usize, yy as usize, zz as usize));
                                }
                            }
                        }
                    }
                    let n = pa.len() as f64;
                    let ma = pa.iter().sum::<f64>() / n;
                    let mb = pb.iter().sum::<f64>() / n;
                    let cross: f64 = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum();
                    let va: f64 = pa.iter().map(|p| (p - ma).powi(2)).sum();
                    let vb: f64 = pb.iter().map(|q| (q - mb).powi(2)).sum();
                    total += cross * cross / (va * vb + NCC_EPS);
                }
            }
        }
        total / (shape.iter().product::<usize>() as f64)
    }

    #[test]
    fn ncc_matches_brute_force() {
        let a = random_volume(1, [8, 8, 8]);
        let b = random_volume(2, [8, 8, 8]);
        let fast = local_ncc(&a, &b, 3).unwrap();
        let slow = brute_ncc(&a, &b, 3);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        let map = local_cc_map(&a, &b, 3).unwrap();
        let mean = map.data().iter().sum::<f64>() / map.len() as f64;
        assert!((mean - slow).abs() < 1e-9);
    }

    #[test]
    fn ncc_self_and_affine_invariance() {
        let a = random_volume(3, [10, 10, 10]);
        let s = local_ncc(&a, &a, 9).unwrap();
        assert!(s >= 0.99 && s <= 1.0);
        let b = a.map(|v| 2.0 * v + 3.0);
        assert!((local_ncc(&a, &b, 9).unwrap() - s).abs() < 1e-6);
        let c = random_volume(4, [10, 10, 10]);
        let ab = local_ncc(&a, &c, 5).unwrap();
        let ba = local_ncc(&c, &a, 5).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn ncc_argument_errors() {
        let a = random_volume(1, [4, 4, 4]);
        let b = random_volume(1, [4, 4, 2]);
        assert!(matches!(local_ncc(&a, &b, 3), Err(Error::Shape(_))));
        assert!(local_ncc(&a, &a, 4).is_err());
        assert!(local_ncc(&a, &a, 1).is_err());
    }

    #[test]
    fn ncc_gradient_matches_finite_differences() {
        let shape = [6, 5, 7];
        let a = random_volume(5, shape);
        let b = random_volume(6, shape);
        for mode in [NccMode::Squared, NccMode::Signed] {
            let (_, g) = ncc_value_and_grad(a.data(), b.data(), shape, 3, mode, true);
            let g = g.unwrap();
            let h = 1e-6;
            for k in (0..a.len()).step_by(11) {
                let mut p = a.data().to_vec();
                p[k] += h;
                let mut m = a.data().to_vec();
                m[k] -= h;
                let fp = ncc_value_and_grad(&p, b.data(), shape, 3, mode, false).0;
                let fm = ncc_value_and_grad(&m, b.data(), shape, 3, mode, false).0;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7 * (1.0 + fd.abs()), "{mode:?} {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn grad_l2_cases() {
        let shape = [5, 6, 7];
        let c = DisplacementField::from_fn(shape, |_, _, _| [0.4f64, 1.0, -3.0]);
        assert_eq!(grad_l2(&c).unwrap(), 0.0);
        let lin = DisplacementField::from_fn(shape, |x, _, _| [0.3 * x as f64, 0.0, 0.0]);
        assert!((grad_l2(&lin).unwrap() - 0.09).abs() < 1e-12);

        let f = random_field(9, shape, 2.0);
        let n = numel(shape);
        let mut brute = 0.0;
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let u = f.get(x, y, z);
                    let nx = if x + 1 < shape[2] { f.get(x + 1, y, z) } else { u };
                    let px = if x + 1 < shape[2] { u } else { f.get(x - 1, y, z) };
                    let ny = if y + 1 < shape[1] { f.get(x, y + 1, z) } else { u };
                    let py = if y + 1 < shape[1] { u } else { f.get(x, y - 1, z) };
                    let nz = if z + 1 < shape[0] { f.get(x, y, z + 1) } else { u };
                    let pz = if z + 1 < shape[0] { u } else { f.get(x, y, z - 1) };
                    for c in 0..3 {
                        brute += (nx[c] - px[c]).powi(2) + (ny[c] - py[c]).powi(2) + (nz[c] - pz[c]).powi(2);
                    }
                }
            }
        }
        assert!((grad_l2(&f).unwrap() - brute / n as f64).abs() < 1e-6);
        assert!(grad_l2(&DisplacementField::<f64>::zeros([1, 3, 3])).is_err());
    }

    #[test]
    fn neg_jac_cases() {
        let shape = [4, 5, 6];
        assert_eq!(neg_jac_penalty(&DisplacementField::<f64>::zeros(shape)).unwrap(), 0.0);
        let fold = DisplacementField::from_fn(shape, |x, _, _| [-2.0 * x as f64, 0.0, 0.0]);
        assert!((neg_jac_penalty(&fold).unwrap() - 1.0).abs() < 1e-12);
        let half = DisplacementField::from_fn(shape, |x, _, _| {
            [if x < 3 { -2.0 * x as f64 } else { -4.0 }, 0.0, 0.0]
        });
        // det = -1 where the x-difference spans the fold (x = 0, 1), else 1 or 2.
        let want = 2.0 / 6.0;
        assert!((neg_jac_penalty(&half).unwrap() - want).abs() < 1e-12);
        let smooth = crate::volumes::make_smooth_field(2, [16, 16, 16], 2.0).unwrap().cast::<f64>();
        assert_eq!(neg_jac_penalty(&smooth).unwrap(), 0.0);
    }

    #[test]
    fn penalty_zero_iff_no_folds() {
        for seed in 0..10 {
            let f = random_field(seed, [5, 5, 5], 0.4 + 0.3 * seed as f64);
            let p = neg_jac_penalty(&f).unwrap();
            let njd = njd_percent(&f).unwrap();
            assert_eq!(p == 0.0, njd == 0.0, "seed {seed}: penalty {p}, njd {njd}");
        }
    }

    #[test]
    fn regulariser_gradients_match_finite_differences() {
        let shape = [4, 5, 4];
        let f = random_field(11, shape, 3.0);
        let (_, gs) = grad_l2_gradient(&f).unwrap();
        let (_, gj) = neg_jac_penalty_gradient(&f).unwrap();
        let h = 1e-6;
        for k in (0..f.data().len()).step_by(5) {
            let mut p = f.data().to_vec();
            p[k] += h;
            let mut m = f.data().to_vec();
            m[k] -= h;
            let fp = DisplacementField::new(shape, p).unwrap();
            let fm = DisplacementField::new(shape, m).unwrap();
            let fd = (grad_l2(&fp).unwrap() - grad_l2(&fm).unwrap()) / (2.0 * h);
            assert!((fd - gs.data()[k]).abs() < 1e-6);
            let fd = (neg_jac_penalty(&fp).unwrap() - neg_jac_penalty(&fm).unwrap()) / (2.0 * h);
            assert!((fd - gj.data()[k]).abs() < 1e-5, "{k}: {fd} vs {}", gj.data()[k]);
        }
    }

    #[test]
    fn level_weights_halve() {
        assert_eq!(level_weights(3), vec![0.25, 0.5, 1.0]);
        assert_eq!(level_weights(1), vec![1.0]);
    }

    #[test]
    fn identical_pyramids_zero_fields() {
        let v = random_volume(12, [16, 16, 16]).map(|x| 10.0 * x);
        let p = build_pyramid(&v, 3).unwrap();
        let fields: Vec<_> = p.levels().iter().map(|l| DisplacementField::zeros(l.shape())).collect();
        let w = LossWeights { sigma: 1.0, lambda: 0.0, ncc_window: 3, ..Default::default() };
        let r = total_loss(&p, &p, &fields, &w).unwrap();
        assert!((r.total + 1.75).abs() < 1e-3, "{}", r.total);
    }

    #[test]
    fn total_matches_hand_composition() {
        let shape = [8, 8, 8];
        let fixed = build_pyramid(&random_volume(20, shape), 2).unwrap();
        let moving = build_pyramid(&random_volume(21, shape), 2).unwrap();
        let fields = vec![random_field(22, [4, 4, 4], 2.5), random_field(23, shape, 2.5)];
        let w = LossWeights { sigma: 1.0, lambda: 1e-4, ncc_window: 3, ..Default::default() };
        let r = total_loss(&fixed, &moving, &fields, &w).unwrap();
        let mut want = 0.0;
        for (i, f) in fields.iter().enumerate() {
            let warped = crate::field_ops::warp_trilinear(moving.level(i), f).unwrap();
            let sim = -local_ncc(&warped, fixed.level(i), 3).unwrap();
            let reg = grad_l2(f).unwrap() + 1e-4 * neg_jac_penalty(f).unwrap();
            want += [0.5, 1.0][i] * (sim + reg);
        }
        assert!((r.total - want).abs() <= 1e-6 * want.abs());
        let recomposed: f64 = r
            .levels
            .iter()
            .map(|t| t.weight * (t.sim + w.sigma * (t.smooth + w.lambda * t.inv)))
            .sum();
        assert!((r.total - recomposed).abs() <= 1e-6 * r.total.abs());
    }

    #[test]
    fn lambda_zero_ignores_penalty() {
        let shape = [8, 8, 8];
        let fixed = build_pyramid(&random_volume(30, shape), 1).unwrap();
        let moving = build_pyramid(&random_volume(31, shape), 1).unwrap();
        let f = vec![random_field(32, shape, 6.0)];
        let w = LossWeights { sigma: 0.7, lambda: 0.0, ncc_window: 3, ..Default::default() };
        let r = total_loss(&fixed, &moving, &f, &w).unwrap();
        assert!(r.levels[0].inv > 0.0);
        let t = &r.levels[0];
        let swapped = t.weight * (t.sim + w.sigma * (t.smooth + 0.0 * 12345.678));
        assert_eq!(r.total.to_bits(), swapped.to_bits());
    }

    #[test]
    fn total_loss_shape_errors() {
        let p = build_pyramid(&random_volume(1, [8, 8, 8]), 2).unwrap();
        let w = LossWeights { ncc_window: 3, ..Default::default() };
        let bad = vec![DisplacementField::zeros([4, 4, 4]), DisplacementField::zeros([8, 8, 4])];
        assert!(matches!(total_loss(&p, &p, &bad, &w), Err(Error::Shape(_))));
        assert!(total_loss(&p, &p, &bad[..1], &w).is_err());
    }

    #[test]
    fn csv_row_layout() {
        let r = LossReport {
            levels: vec![LevelTerms { sim: -0.5, smooth: 0.25, inv: 0.0, weight: 1.0 }],
            total: -0.25,
        };
        assert_eq!(LossReport::csv_header(1), "iteration,sim_1,smooth_1,inv_1,total,seconds");
        assert_eq!(r.csv_row(3, 1.5), "3,-0.5,0.25,0.0,-0.25,1.5000");
    }
}
