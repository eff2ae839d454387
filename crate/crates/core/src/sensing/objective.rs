//! Per-trial GLRT objective with the velocity-independent work hoisted out.
//!
//! Column `m'` of `D̈(v)` is `b_{m'} ⊙ ξ_{m'}(v)` where `ξ` is constant within
//! each OFDM symbol. Writing `z_{m'} = exp(j2π f_{m'}(v) T_s)`, the Gram matrix
//! and correlation become polynomials in the per-symbol phases:
//!
//! `(D̈ᴴD̈)[a,b] = Σ_{n'} G_{n'}[a,b] (z̄_a z_b)^{n'}`,
//! `(D̈ᴴÿ)[a]   = Σ_{n'} z̄_a^{n'} c_{n'}[a]`,
//!
//! so one evaluation costs `O(N_s M_tx²)` per rAP instead of a 672-row product.

use num_complex::Complex64;

use super::linalg::{gram_energy, projection_energy};
use super::{ObservationStack, ResponseModel};
use crate::error::{ConfigError, Result};
use crate::geometry::{Vec3, Velocity3};
use crate::velocity::Objective;

type C = Complex64;

struct RapTerms {
    dirs: Vec<Vec3>,
    /// Diagonal of the Gram matrix, independent of `v`.
    diag: Vec<f64>,
    /// `gram[p * ns + n']` for the strictly-lower pair `p` enumerating `(a, b)`, `a > b`.
    gram: Vec<C>,
    /// `corr[a * ns + n']`.
    corr: Vec<C>,
}

pub struct GlrtObjective<'a> {
    model: &'a ResponseModel,
    observations: &'a [ObservationStack],
    terms: Vec<RapTerms>,
    phase_scale: f64,
}

impl<'a> GlrtObjective<'a> {
    pub fn new(model: &'a ResponseModel, observations: &'a [ObservationStack]) -> Result<Self> {
        if observations.len() != model.n_raps() {
            return Err(ConfigError::new("one observation per rAP is required").into());
        }
        let grid = model.grid();
        let (na, nc, ns) = (model.n_antennas(), grid.nc, grid.ns);
        let block = na * nc;
        let mt = model.n_taps();
        let mut terms = Vec::with_capacity(observations.len());
        for (j, obs) in observations.iter().enumerate() {
            let b = model.base(j);
            if obs.data.len() != b.nrows() {
                return Err(ConfigError::new("observation length does not match the response rows").into());
            }
            let mut diag = vec![0.0; mt];
            let mut gram = vec![C::new(0.0, 0.0); mt * (mt - 1) / 2 * ns];
            let mut corr = vec![C::new(0.0, 0.0); mt * ns];
            for np in 0..ns {
                let rows = np * block..(np + 1) * block;
                let mut p = 0;
                for a in 0..mt {
                    let ca = b.column(a);
                    let mut d = 0.0;
                    let mut c = C::new(0.0, 0.0);
                    for r in rows.clone() {
                        d += ca[r].norm_sqr();
                        c += ca[r].conj() * obs.data[r];
                    }
                    diag[a] += d;
                    corr[a * ns + np] = c;
                    for bb in 0..a {
                        let cb = b.column(bb);
                        let mut g = C::new(0.0, 0.0);
                        for r in rows.clone() {
                            g += ca[r].conj() * cb[r];
                        }
                        gram[p * ns + np] = g;
                        p += 1;
                    }
                }
            }
            terms.push(RapTerms { dirs: model.doppler_directions(j).to_vec(), diag, gram, corr });
        }
        Ok(Self { model, observations, terms, phase_scale: 2.0 * std::f64::consts::PI * grid.total_symbol_time() })
    }

    fn rap_energy(&self, j: usize, v: Velocity3) -> f64 {
        let t = &self.terms[j];
        let mt = t.dirs.len();
        let ns = self.model.grid().ns;
        let z: Vec<C> = t.dirs.iter().map(|d| C::from_polar(1.0, self.phase_scale * d.dot(v))).collect();
        let mut g = vec![C::new(0.0, 0.0); mt * mt];
        let mut rhs = vec![C::new(0.0, 0.0); mt];
        let mut p = 0;
        for a in 0..mt {
            g[a * mt + a] = C::new(t.diag[a], 0.0);
            let za = z[a].conj();
            let coeffs = &t.corr[a * ns..(a + 1) * ns];
            let mut acc = coeffs[ns - 1];
            for k in (0..ns - 1).rev() {
                acc = acc * za + coeffs[k];
            }
            rhs[a] = acc;
            for b in 0..a {
                // G[a,b] = Σ G_{n'}[a,b] (z̄_a z_b)^{n'}
                let w = za * z[b];
                let coeffs = &t.gram[p * ns..(p + 1) * ns];
                let mut acc = coeffs[ns - 1];
                for k in (0..ns - 1).rev() {
                    acc = acc * w + coeffs[k];
                }
                g[a * mt + b] = acc;
                p += 1;
            }
        }
        gram_energy(&mut g, mt, &mut rhs).unwrap_or_else(|| {
            let stack = self.model.stack(j, v);
            projection_energy(&stack.matrix, &self.observations[j].data)
        })
    }

    /// Summed projection energy at `v`.
    pub fn statistic(&self, v: Velocity3) -> f64 {
        (0..self.terms.len()).map(|j| self.rap_energy(j, v)).sum()
    }
}

impl Objective for GlrtObjective<'_> {
    fn evaluate(&self, v: Velocity3) -> f64 {
        self.statistic(v)
    }
}
