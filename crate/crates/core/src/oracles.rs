//! Exact reference values: brute-force enumeration, a transfer matrix and
//! Kaufman's finite torus for the uniform 2D model, and Onsager's solution.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor_graph::{decode_index, spin, FactorGraph};
use crate::thermo::fmt_sig;

/// Default bound on the number of joint configurations.
pub const DEFAULT_CAP: u128 = 1 << 26;

/// Configurations handled by one parallel task.
const BLOCK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub beta: f64,
    pub log_z: f64,
    /// `None` at `beta = 0`.
    pub free_energy_density: Option<f64>,
    pub energy_density: f64,
    pub entropy_density: f64,
    /// `None` unless every vertex is a spin.
    pub magnetization: Option<f64>,
    pub vertex_marginals: Vec<Vec<f64>>,
}

impl ExactResult {
    /// Row in the observable CSV schema.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},true,0,0",
            fmt_sig(self.beta),
            self.free_energy_density.map(fmt_sig).unwrap_or_default(),
            fmt_sig(self.energy_density),
            fmt_sig(self.entropy_density),
            self.magnetization.map(fmt_sig).unwrap_or_default(),
        )
    }
}

pub fn enumerate(fg: &FactorGraph, beta: f64) -> Result<ExactResult> {
    Ok(enumerate_with(fg, beta, DEFAULT_CAP, &[])?.0)
}

/// Enumeration that also returns the exact marginal over each of `scopes`
/// (tables indexed first vertex fastest, like region tables).
pub fn enumerate_with(
    fg: &FactorGraph,
    beta: f64,
    cap: u128,
    scopes: &[Vec<usize>],
) -> Result<(ExactResult, Vec<Vec<f64>>)> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Precondition(format!("beta must be finite and >= 0, got {beta}")));
    }
    let radices = fg.radices(&(0..fg.num_vertices()).collect::<Vec<_>>());
    let configs = radices.iter().fold(1u128, |acc, &q| acc.saturating_mul(q as u128));
    if configs > cap {
        return Err(Error::Size { configs, cap });
    }
    for s in scopes {
        if let Some(&v) = s.iter().find(|&&v| v >= fg.num_vertices()) {
            return Err(Error::Model(format!("scope vertex {v} out of range")));
        }
    }
    let total = configs as usize;
    let vertex_offsets: Vec<usize> = radices
        .iter()
        .scan(0, |acc, &q| {
            let o = *acc;
            *acc += q;
            Some(o)
        })
        .collect();
    let layout = Layout {
        fg,
        radices: &radices,
        vertex_offsets: &vertex_offsets,
        vertex_len: radices.iter().sum(),
        scopes,
        scope_radices: scopes.iter().map(|s| fg.radices(s)).collect(),
    };
    let blocks = total.div_ceil(BLOCK);
    let acc = (0..blocks)
        .into_par_iter()
        .map(|b| layout.block(b * BLOCK, ((b + 1) * BLOCK).min(total), beta))
        .reduce_with(Acc::merge)
        .expect("at least one configuration");

    let n = fg.num_vertices() as f64;
    let log_z = acc.max + acc.z.ln();
    let u = acc.energy / acc.z / n;
    let vertex_marginals: Vec<Vec<f64>> = (0..fg.num_vertices())
        .map(|i| {
            let o = vertex_offsets[i];
            acc.vertex[o..o + radices[i]].iter().map(|w| w / acc.z).collect()
        })
        .collect();
    let magnetization = fg.is_binary().then(|| {
        vertex_marginals
            .iter()
            .map(|p| p.iter().enumerate().map(|(s, w)| spin(s) * w).sum::<f64>())
            .sum::<f64>()
            / n
    });
    let scope_marginals = acc
        .scopes
        .into_iter()
        .map(|t| t.into_iter().map(|w| w / acc.z).collect())
        .collect();
    Ok((
        ExactResult {
            beta,
            log_z,
            free_energy_density: (beta > 0.0).then(|| -log_z / (beta * n)),
            energy_density: u,
            entropy_density: beta * u + log_z / n,
            magnetization,
            vertex_marginals,
        },
        scope_marginals,
    ))
}

struct Layout<'a> {
    fg: &'a FactorGraph,
    radices: &'a [usize],
    vertex_offsets: &'a [usize],
    vertex_len: usize,
    scopes: &'a [Vec<usize>],
    scope_radices: Vec<Vec<usize>>,
}

/// Weights relative to `exp(max)`.
struct Acc {
    max: f64,
    z: f64,
    energy: f64,
    vertex: Vec<f64>,
    scopes: Vec<Vec<f64>>,
}

impl Acc {
    fn rescale(&mut self, factor: f64) {
        self.z *= factor;
        self.energy *= factor;
        self.vertex.iter_mut().for_each(|v| *v *= factor);
        for t in &mut self.scopes {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn merge(mut a: Acc, mut b: Acc) -> Acc {
        if b.max > a.max {
            std::mem::swap(&mut a, &mut b);
        }
        b.rescale((b.max - a.max).exp());
        a.z += b.z;
        a.energy += b.energy;
        a.vertex.iter_mut().zip(&b.vertex).for_each(|(x, y)| *x += y);
        for (ta, tb) in a.scopes.iter_mut().zip(&b.scopes) {
            ta.iter_mut().zip(tb).for_each(|(x, y)| *x += y);
        }
        a
    }
}

impl Layout<'_> {
    fn block(&self, start: usize, end: usize, beta: f64) -> Acc {
        let mut acc = Acc {
            max: f64::NEG_INFINITY,
            z: 0.0,
            energy: 0.0,
            vertex: vec![0.0; self.vertex_len],
            scopes: self
                .scope_radices
                .iter()
                .map(|r| vec![0.0; r.iter().product()])
                .collect(),
        };
        let mut x = Vec::new();
        decode_index(start, self.radices, &mut x);
        let mut members = Vec::new();
        for _ in start..end {
            let e = self.energy(&x, &mut members);
            let lw = -beta * e;
            if lw > acc.max {
                if acc.max.is_finite() {
                    acc.rescale((acc.max - lw).exp());
                }
                acc.max = lw;
            }
            let w = (lw - acc.max).exp();
            acc.z += w;
            acc.energy += w * e;
            for (i, &s) in x.iter().enumerate() {
                acc.vertex[self.vertex_offsets[i] + s] += w;
            }
            for ((scope, radices), table) in self.scopes.iter().zip(&self.scope_radices).zip(&mut acc.scopes) {
                let mut idx = 0;
                let mut stride = 1;
                for (&v, &q) in scope.iter().zip(radices) {
                    idx += x[v] * stride;
                    stride *= q;
                }
                table[idx] += w;
            }
            // odometer, first vertex fastest
            for (d, &q) in x.iter_mut().zip(self.radices) {
                *d += 1;
                if *d < q {
                    break;
                }
                *d = 0;
            }
        }
        acc
    }

    fn energy(&self, x: &[usize], buf: &mut Vec<usize>) -> f64 {
        let mut e = 0.0;
        for (v, &s) in self.fg.vertices().iter().zip(x) {
            e += v.self_energy[s];
        }
        for a in self.fg.interactions() {
            buf.clear();
            buf.extend(a.members.iter().map(|&m| x[m]));
            let mut idx = 0;
            let mut stride = 1;
            for (&s, &m) in buf.iter().zip(&a.members) {
                idx += s * stride;
                stride *= self.radices[m];
            }
            e += a.energy[idx];
        }
        e
    }
}

/// `ln Z` of the uniform model on a `width x length` torus with energy
/// `-J sum s_i s_j - h sum s_i`, as `ln tr T^length` from the eigenvalues of
/// the symmetric row-to-row transfer matrix.
pub fn transfer_matrix_log_z(width: usize, length: usize, beta: f64, coupling: f64, field: f64) -> Result<f64> {
    if !(3..=12).contains(&width) || length < 3 {
        return Err(Error::Precondition(format!(
            "transfer matrix needs 3 <= width <= 12 and length >= 3, got {width} x {length}"
        )));
    }
    let states = 1usize << width;
    let s = |row: usize, i: usize| if row >> i & 1 == 1 { 1.0 } else { -1.0 };
    // half of the in-row weight on each side keeps the matrix symmetric
    let half_row: Vec<f64> = (0..states)
        .map(|r| {
            let mut e = 0.0;
            for i in 0..width {
                e += coupling * s(r, i) * s(r, (i + 1) % width) + field * s(r, i);
            }
            0.5 * beta * e
        })
        .collect();
    let t = DMatrix::from_fn(states, states, |a, b| {
        let mut e = 0.0;
        for i in 0..width {
            e += coupling * s(a, i) * s(b, i);
        }
        (beta * e + half_row[a] + half_row[b]).exp()
    });
    let eig = SymmetricEigen::new(t).eigenvalues;
    let top = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sum: f64 = eig.iter().map(|v| (v / top).powi(length as i32)).sum();
    if !(sum > 0.0) {
        return Err(Error::numeric(None, "transfer-matrix trace is not positive"));
    }
    Ok(length as f64 * top.ln() + sum.ln())
}

/// Kaufman's exact `ln Z` of the zero-field ferromagnet (`J = 1`) on an
/// `rows x cols` torus.
pub fn kaufman_log_z(rows: usize, cols: usize, beta: f64) -> Result<f64> {
    if rows < 2 || cols < 2 || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Precondition(format!(
            "finite-torus formula needs a torus of at least 2 x 2 and beta > 0, got {rows} x {cols} at {beta}"
        )));
    }
    let k = beta;
    let (m, n) = (rows as f64, cols as f64);
    let c = (2.0 * k).cosh() / (2.0 * k).tanh();
    let gamma = |l: usize| {
        if l == 0 {
            2.0 * k + k.tanh().ln()
        } else {
            (c - (PI * l as f64 / n).cos()).acosh()
        }
    };
    // each partial product as (sign, ln |value|)
    let mut terms = [(1.0f64, 0.0f64); 4];
    for r in 0..cols {
        let odd = 0.5 * m * gamma(2 * r + 1);
        let even = 0.5 * m * gamma(2 * r);
        for (t, v) in terms.iter_mut().zip([
            (1.0, ln_2cosh(odd)),
            (1.0, ln_2sinh_abs(odd)),
            (1.0, ln_2cosh(even)),
            (even.signum(), ln_2sinh_abs(even)),
        ]) {
            t.0 *= v.0;
            t.1 += v.1;
        }
    }
    let top = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| t.0 * (t.1 - top).exp()).sum();
    if !(sum > 0.0) {
        return Err(Error::numeric(None, "finite-torus sum is not positive"));
    }
    Ok(-LN_2 + 0.5 * m * n * (2.0 * (2.0 * k).sinh()).ln() + top + sum.ln())
}

fn ln_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (1.0 + (-2.0 * a).exp()).ln()
}

fn ln_2sinh_abs(x: f64) -> f64 {
    let a = x.abs();
    a + (-(-2.0 * a).exp_m1()).ln()
}

/// Inverse critical temperature of the square-lattice ferromagnet, `ln(1 + sqrt 2) / 2`.
pub fn onsager_beta_c() -> f64 {
    0.5 * (1.0 + 2f64.sqrt()).ln()
}

/// Thermodynamic-limit densities of the zero-field square-lattice ferromagnet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsagerValues {
    pub beta: f64,
    pub free_energy_density: f64,
    pub energy_density: f64,
    pub entropy_density: f64,
    /// Spontaneous magnetization (the positive branch).
    pub magnetization: f64,
}

/// Target absolute error of the quadratures.
const QUAD_TOL: f64 = 1e-13;
/// Step of the energy derivative.
const DERIVATIVE_STEP: f64 = 1e-5;

pub fn onsager(beta: f64) -> Result<OnsagerValues> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Precondition(format!("need beta > 0, got {beta}")));
    }
    let f = onsager_free_energy(beta)?;
    let g = |b: f64| onsager_free_energy(b).map(|f| b * f);
    // Richardson on centered differences of beta f
    let h = DERIVATIVE_STEP.min(0.5 * beta);
    let d1 = (g(beta + h)? - g(beta - h)?) / (2.0 * h);
    let d2 = (g(beta + 0.5 * h)? - g(beta - 0.5 * h)?) / h;
    let u = (4.0 * d2 - d1) / 3.0;
    Ok(OnsagerValues {
        beta,
        free_energy_density: f,
        energy_density: u,
        entropy_density: beta * (u - f),
        magnetization: onsager_magnetization(beta),
    })
}

/// `-(1/beta) [ln 2 + (1/2pi^2) int int ln(cosh^2 2K - sinh 2K (cos a + cos b)) da db]`
/// over `[0, pi]^2`. The inner integral is done in closed form,
/// `int_0^pi ln(A - B cos b) db = pi ln((A + sqrt(A^2 - B^2)) / 2)`, and the
/// outer one by double-exponential quadrature.
pub fn onsager_free_energy(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Precondition(format!("need beta > 0, got {beta}")));
    }
    let k2 = 2.0 * beta;
    let (ch2, sh) = (k2.cosh().powi(2), k2.sinh());
    let outer = quadrature::integrate(
        |a| {
            let big = ch2 - sh * a.cos();
            // A - B written without cancellation; it vanishes at a = 0 at the critical point
            let minus = (sh - 1.0).powi(2) + 2.0 * sh * (0.5 * a).sin().powi(2);
            let disc = (minus * (big + sh)).sqrt();
            PI * (0.5 * (big + disc)).ln()
        },
        0.0,
        PI,
        QUAD_TOL,
    );
    if !(outer.error_estimate <= 1e-10) || !outer.integral.is_finite() {
        return Err(Error::numeric(
            None,
            format!("free-energy quadrature at beta = {beta} did not reach 1e-10"),
        ));
    }
    Ok(-(LN_2 + outer.integral / (2.0 * PI * PI)) / beta)
}

/// The same free energy from the one-dimensional form
/// `-beta f = ln(2 cosh 2K) + (1/pi) int_0^{pi/2} ln[(1 + sqrt(1 - k^2 sin^2 t))/2] dt`,
/// `k = 2 sinh 2K / cosh^2 2K`, by composite Simpson on `intervals` panels.
/// Used as an independent check of [`onsager_free_energy`].
pub fn onsager_free_energy_simpson(beta: f64, intervals: usize) -> f64 {
    let k2 = 2.0 * beta;
    let kappa = 2.0 * k2.sinh() / k2.cosh().powi(2);
    let g = |t: f64| {
        let r = (1.0 - (kappa * t.sin()).powi(2)).max(0.0).sqrt();
        (0.5 * (1.0 + r)).ln()
    };
    let n = intervals + intervals % 2;
    let h = 0.5 * PI / n as f64;
    let mut sum = g(0.0) + g(0.5 * PI);
    for i in 1..n {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    let integral = sum * h / 3.0;
    -((2.0 * k2.cosh()).ln() + integral / PI) / beta
}

/// `(1 - sinh(2 beta)^-4)^(1/8)` above the critical point, zero below.
pub fn onsager_magnetization(beta: f64) -> f64 {
    if beta <= onsager_beta_c() {
        0.0
    } else {
        (1.0 - (2.0 * beta).sinh().powi(-4)).powf(0.125)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, LatticeSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_spin_and_pair() {
        let fg = FactorGraph::spin_model(&[0.0], &[]).unwrap();
        let r = enumerate(&fg, 0.7).unwrap();
        assert_abs_diff_eq!(r.log_z, LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.magnetization.unwrap(), 0.0, epsilon = 1e-15);

        let fg = FactorGraph::spin_model(&[0.0, 0.0], &[(0, 1, 1.0)]).unwrap();
        for beta in [0.0, 0.3, 2.5] {
            let r = enumerate(&fg, beta).unwrap();
            let exact = (2.0 * beta.exp() + 2.0 * (-beta).exp()).ln();
            assert_abs_diff_eq!(r.log_z, exact, epsilon = 1e-14);
            assert_abs_diff_eq!(r.energy_density, -0.5 * beta.tanh(), epsilon = 1e-14);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let fg = build_lattice(&LatticeSpec::ferromagnet(2, 5)).unwrap();
        match enumerate_with(&fg, 0.1, 1 << 20, &[]) {
            Err(Error::Size { configs, cap }) => {
                assert_eq!(configs, 1 << 25);
                assert_eq!(cap, 1 << 20);
            }
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn thermodynamic_identity_and_scope_marginals() {
        let fg = FactorGraph::spin_model(&[0.3, -0.2, 0.0], &[(0, 1, 0.5), (1, 2, -0.8), (0, 2, 0.4)]).unwrap();
        let (r, scopes) = enumerate_with(&fg, 0.9, DEFAULT_CAP, &[vec![2, 0], vec![1]]).unwrap();
        let f = r.free_energy_density.unwrap();
        assert_abs_diff_eq!(f, r.energy_density - r.entropy_density / 0.9, epsilon = 1e-12);
        // the two-vertex marginal sums back to the vertex marginals
        let pair = &scopes[0];
        assert_abs_diff_eq!(pair[0] + pair[2], r.vertex_marginals[2][0], epsilon = 1e-14);
        assert_abs_diff_eq!(pair[0] + pair[1], r.vertex_marginals[0][0], epsilon = 1e-14);
        assert_abs_diff_eq!(scopes[1][1], r.vertex_marginals[1][1], epsilon = 1e-14);
    }

    #[test]
    fn enumeration_matches_transfer_matrix_on_a_torus() {
        for (side, beta) in [(4, 0.4), (3, 0.7)] {
            let fg = build_lattice(&LatticeSpec::ferromagnet(2, side)).unwrap();
            let exact = enumerate(&fg, beta).unwrap().log_z;
            let tm = transfer_matrix_log_z(side, side, beta, 1.0, 0.0).unwrap();
            assert_abs_diff_eq!(exact, tm, epsilon = 1e-10);
        }
        // field and rectangular shape
        let tm = transfer_matrix_log_z(3, 5, 0.4, 1.0, 0.3).unwrap();
        assert!(tm.is_finite());
        assert!(transfer_matrix_log_z(2, 4, 0.4, 1.0, 0.0).is_err());
    }

    #[test]
    fn kaufman_matches_transfer_matrix() {
        for beta in [0.1, 0.3, 0.4406, 0.6, 1.2] {
            for (rows, cols) in [(4, 4), (6, 4), (4, 6), (8, 8)] {
                let tm = transfer_matrix_log_z(cols, rows, beta, 1.0, 0.0).unwrap();
                let k = kaufman_log_z(rows, cols, beta).unwrap();
                assert_abs_diff_eq!(k, tm, epsilon = 1e-9 * tm.abs().max(1.0));
            }
        }
    }

    #[test]
    fn onsager_forms_agree() {
        for beta in [0.1, 0.3, 0.44, onsager_beta_c(), 0.6, 1.0] {
            let a = onsager_free_energy(beta).unwrap();
            let b = onsager_free_energy_simpson(beta, 4000);
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn onsager_reference_points() {
        assert_abs_diff_eq!(onsager_beta_c(), 0.440686793509772, epsilon = 1e-14);
        assert_eq!(onsager_magnetization(0.3), 0.0);
        assert_abs_diff_eq!(onsager_magnetization(0.5), 0.911319377877496, epsilon = 1e-12);
        // critical energy density is -sqrt 2
        let c = onsager(onsager_beta_c()).unwrap();
        assert_abs_diff_eq!(c.energy_density, -2f64.sqrt(), epsilon = 1e-6);
        // high temperature series: s = ln 2 - beta^2 + O(beta^4)
        let hot = onsager(0.01).unwrap();
        assert_abs_diff_eq!(hot.entropy_density, LN_2 - 1e-4, epsilon = 1e-7);
    }

    #[test]
    fn finite_tori_approach_the_limit() {
        let beta = 0.35;
        let limit = onsager_free_energy(beta).unwrap();
        let gaps: Vec<f64> = [4usize, 8, 16]
            .iter()
            .map(|&l| {
                let f = -kaufman_log_z(l, l, beta).unwrap() / (beta * (l * l) as f64);
                (f - limit).abs()
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }
}
