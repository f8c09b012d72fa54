//! Reference computations written independently of the library code paths they check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use softtraj::identification::{SlidingRecord, SlidingSample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0) * scale)
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

/// Composite Simpson rule on `[a, b]` with `cells` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, cells: usize) -> f64 {
    assert!(cells.is_multiple_of(2));
    let h = (b - a) / cells as f64;
    let mut sum = f(a) + f(b);
    for i in 1..cells {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// Hertz indentation `(9F²/(16E²R))^(1/3)` for a reduced modulus `e`.
pub fn hertz_depth(force: f64, e: f64, radius: f64) -> f64 {
    (9.0 * force * force / (16.0 * e * e * radius)).powf(1.0 / 3.0)
}

/// Sliding friction `μF[1 + (2ν−1)·3a²/(10R²)] + k_d v` with `a² = R d`.
pub fn sliding_friction(fz: f64, v: f64, mu: f64, kd: f64, nu: f64, radius: f64, e: f64) -> f64 {
    let a2 = radius * hertz_depth(fz, e, radius);
    mu * fz * (1.0 + (2.0 * nu - 1.0) * 3.0 * a2 / (10.0 * radius * radius)) + kd * v
}

pub struct FrictionTruth {
    pub mu: f64,
    pub kd: f64,
    pub nu: f64,
    pub radius: f64,
    pub modulus: f64,
}

/// Sliding samples over a load/speed grid with optional multiplicative Gaussian noise.
pub fn synthetic_sliding(truth: &FrictionTruth, samples: usize, noise: f64, seed: u64) -> SlidingRecord {
    let mut rng = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let samples = (0..samples)
        .map(|_| {
            let fz = rng.random_range(0.5..20.0);
            let v = rng.random_range(0.005..0.1);
            let clean = sliding_friction(fz, v, truth.mu, truth.kd, truth.nu, truth.radius, truth.modulus);
            let f = if noise > 0.0 {
                clean * (1.0 + noise * normal.sample(&mut rng))
            } else {
                clean
            };
            SlidingSample {
                f_fric_n: f,
                v_mps: v,
                f_z_n: fz,
            }
        })
        .collect();
    SlidingRecord { samples }
}

/// Optimal cost `½ x₀ᵀ P₀ x₀` of the finite-horizon LQR problem
/// `Σ ½(xᵀQx + uᵀRu) + ½ x_Nᵀ Q_f x_N`, by backward Riccati recursion.
pub fn riccati_optimal_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q_final: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: usize,
) -> f64 {
    let mut p = q_final.clone();
    for _ in 0..horizon {
        let btp = b.transpose() * &p;
        let gain = (r + &btp * b).lu().solve(&(&btp * a)).expect("R + BᵀPB is invertible");
        p = q + a.transpose() * &p * (a - b * gain);
        p = (&p + p.transpose()) * 0.5;
    }
    0.5 * x0.dot(&(&p * x0))
}

/// Condensed LQR cost `½ UᵀHU + gᵀU + c` over the stacked controls.
pub struct CondensedQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
}

impl CondensedQp {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        q_final: &DMatrix<f64>,
        x0: &DVector<f64>,
        horizon: usize,
    ) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        let nu = m * horizon;
        // x_k = Φ_k x0 + Γ_k U
        let mut phi = vec![DMatrix::identity(n, n)];
        let mut gamma = vec![DMatrix::zeros(n, nu)];
        for k in 0..horizon {
            let next_phi = a * &phi[k];
            let mut next_gamma = a * &gamma[k];
            next_gamma.view_mut((0, k * m), (n, m)).copy_from(b);
            phi.push(next_phi);
            gamma.push(next_gamma);
        }
        let mut h = DMatrix::zeros(nu, nu);
        let mut g = DVector::zeros(nu);
        let mut c = 0.0;
        for k in 0..=horizon {
            let w = if k == horizon { q_final } else { q };
            let free = &phi[k] * x0;
            h += gamma[k].transpose() * w * &gamma[k];
            g += gamma[k].transpose() * w * &free;
            c += 0.5 * free.dot(&(w * &free));
        }
        for k in 0..horizon {
            h.view_mut((k * m, k * m), (m, m)).add_assign(r);
        }
        Self { h, g, c }
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.g.dot(u) + self.c
    }

    /// Minimizer over `|U_i| ≤ bound` by accelerated projected gradient.
    pub fn solve_box(&self, bound: f64) -> DVector<f64> {
        let lipschitz = self.h.symmetric_eigenvalues().max();
        let step = 1.0 / lipschitz;
        let clamp = |v: DVector<f64>| v.map(|x| x.clamp(-bound, bound));
        let mut u = DVector::zeros(self.g.len());
        let mut y = u.clone();
        let mut t = 1.0f64;
        for _ in 0..200_000 {
            let grad = &self.h * &y + &self.g;
            let next = clamp(&y - grad * step);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &u) * ((t - 1.0) / t_next);
            let change = (&next - &u).amax();
            u = next;
            t = t_next;
            if change < 1e-15 {
                break;
            }
        }
        u
    }
}

trait AddAssignView {
    fn add_assign(&mut self, rhs: &DMatrix<f64>);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, rhs: &DMatrix<f64>) {
        for i in 0..rhs.nrows() {
            for j in 0..rhs.ncols() {
                self[(i, j)] += rhs[(i, j)];
            }
        }
    }
}

/// Central difference of a scalar function.
pub fn central_diff(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t + h) - f(t - h)) / (2.0 * h)
}

pub fn relative_error(value: f64, reference: f64, floor: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(floor)
}
