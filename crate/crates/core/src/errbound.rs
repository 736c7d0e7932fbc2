//! Approximation-error bound `ε_i ≥ max |Φ_i − Φ_NN,i|` over a box, found by
//! particle swarm search and cross-checked on tensor grids.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::relu_net::{ExactMap, ForwardScratch, ReluNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Relative inflation applied to the best residual found.
    pub margin: f64,
    /// Points per axis of the cross-check grid.
    pub grid_per_axis: usize,
    /// Worst cross-check grid points injected into every swarm.
    pub grid_seeds: usize,
    /// Velocity clamp as a fraction of the box width.
    pub max_velocity: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            particles: 200,
            iterations: 300,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            seed: 0,
            restarts: 5,
            margin: 0.05,
            grid_per_axis: 10,
            grid_seeds: 10,
            max_velocity: 0.2,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 10 {
            return Err(Error::Config(format!(
                "PSO needs at least 10 particles, got {}",
                self.particles
            )));
        }
        let coeffs = [self.inertia, self.cognitive, self.social, self.max_velocity];
        if coeffs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config("PSO coefficients must be positive".into()));
        }
        if self.restarts == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "PSO needs at least one restart and one iteration".into(),
            ));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("PSO margin must be non-negative".into()));
        }
        if self.grid_per_axis < 2 {
            return Err(Error::Config(
                "cross-check grid needs at least 2 points per axis".into(),
            ));
        }
        Ok(())
    }
}

/// Grid validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub passed: bool,
    pub per_axis: usize,
    pub points: usize,
    /// Largest residual per output component.
    pub worst_residual: Vec<f64>,
    pub worst_point: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub epsilon: Vec<f64>,
    /// Best swarm residual per component, before the margin.
    pub swarm_max: Vec<f64>,
    pub maximizer: Vec<Vec<f64>>,
    /// Largest residual on the cross-check grid.
    pub grid_max: Vec<f64>,
    pub grid_per_axis: usize,
    pub margin: f64,
    pub domain: BoxDomain,
    /// Dense-grid validation, when run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<Validation>,
}

impl ErrorBoundReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `|Φ(x) − Φ_NN(x)|` per component with reusable buffers.
struct Residual<'a> {
    phi: &'a dyn ExactMap,
    net: &'a ReluNetwork,
    exact: Vec<f64>,
    scratch: ForwardScratch,
}

impl<'a> Residual<'a> {
    fn new(phi: &'a dyn ExactMap, net: &'a ReluNetwork) -> Result<Self> {
        if phi.input_dim() != net.input_dim() {
            return Err(Error::Dimension {
                context: "network input vs exact map",
                expected: phi.input_dim(),
                got: net.input_dim(),
            });
        }
        if phi.output_dim() != net.output_dim() {
            return Err(Error::Dimension {
                context: "network output vs exact map",
                expected: phi.output_dim(),
                got: net.output_dim(),
            });
        }
        Ok(Self {
            phi,
            net,
            exact: vec![0.0; phi.output_dim()],
            scratch: ForwardScratch::default(),
        })
    }

    fn eval(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.phi
            .eval_into(x, &mut self.exact)
            .map_err(|e| Error::Domain {
                point: x.to_vec(),
                reason: e.to_string(),
            })?;
        let approx = self.net.forward_with(&mut self.scratch, x);
        for (o, r) in out.iter_mut().enumerate() {
            *r = (self.exact[o] - approx[o]).abs();
            if !r.is_finite() {
                return Err(Error::Domain {
                    point: x.to_vec(),
                    reason: "non-finite residual".into(),
                });
            }
        }
        Ok(())
    }

    fn component(&mut self, x: &[f64], i: usize) -> Result<f64> {
        let mut out = vec![0.0; self.exact.len()];
        self.eval(x, &mut out)?;
        Ok(out[i])
    }
}

/// Largest residual on a tensor grid, plus the `keep` worst points per
/// component (largest first).
fn grid_scan(
    residual: &mut Residual<'_>,
    domain: &BoxDomain,
    per_axis: usize,
    keep: usize,
) -> Result<(Vec<f64>, Vec<Vec<(f64, Vec<f64>)>>, usize)> {
    let m = residual.exact.len();
    let grid = domain.grid(per_axis)?;
    let mut max = vec![0.0f64; m];
    let mut worst: Vec<Vec<(f64, Vec<f64>)>> = vec![Vec::new(); m];
    let mut r = vec![0.0; m];
    grid.for_each(|_, p| {
        residual.eval(p, &mut r)?;
        for o in 0..m {
            max[o] = max[o].max(r[o]);
            let list = &mut worst[o];
            if keep > 0 && (list.len() < keep || r[o] > list[list.len() - 1].0) {
                let at = list.partition_point(|(v, _)| *v >= r[o]);
                list.insert(at, (r[o], p.to_vec()));
                list.truncate(keep);
            }
        }
        Ok::<(), Error>(())
    })?;
    Ok((max, worst, grid.len()))
}

/// Latin-hypercube sample of `n` points in `domain`.
fn latin_hypercube(domain: &BoxDomain, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let mut pts = vec![vec![0.0; d]; n];
    for axis in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        let (lo, hi) = (domain.lower[axis], domain.upper[axis]);
        for (p, s) in pts.iter_mut().zip(strata) {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            p[axis] = lo + u * (hi - lo);
        }
    }
    pts
}

/// One swarm maximizing component `i` of the residual. `seeds` replace the
/// first particles of the initial population.
fn swarm(
    residual: &mut Residual<'_>,
    domain: &BoxDomain,
    i: usize,
    cfg: &PsoConfig,
    seeds: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    let d = domain.dim();
    let n = cfg.particles.max(seeds.len());
    let mut pos = latin_hypercube(domain, n, rng);
    for (p, s) in pos.iter_mut().zip(seeds) {
        p.clone_from(s);
    }
    let width: Vec<f64> = (0..d).map(|a| domain.upper[a] - domain.lower[a]).collect();
    let vmax: Vec<f64> = width.iter().map(|w| cfg.max_velocity * w).collect();
    let mut vel: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|a| rng.random_range(-1.0..=1.0) * vmax[a])
                .collect()
        })
        .collect();
    let mut best_pos = pos.clone();
    let mut best_val = Vec::with_capacity(n);
    for p in &pos {
        best_val.push(residual.component(p, i)?);
    }
    // Lowest index wins ties.
    let argmax = |vals: &[f64]| {
        vals.iter()
            .enumerate()
            .fold(0, |b, (k, v)| if *v > vals[b] { k } else { b })
    };
    let mut g = argmax(&best_val);
    for _ in 0..cfg.iterations {
        for k in 0..n {
            for a in 0..d {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * vel[k][a]
                    + cfg.cognitive * r1 * (best_pos[k][a] - pos[k][a])
                    + cfg.social * r2 * (best_pos[g][a] - pos[k][a]);
                vel[k][a] = v.clamp(-vmax[a], vmax[a]);
                let x = pos[k][a] + vel[k][a];
                if x < domain.lower[a] || x > domain.upper[a] {
                    vel[k][a] = 0.0;
                }
                pos[k][a] = x.clamp(domain.lower[a], domain.upper[a]);
            }
            let val = residual.component(&pos[k], i)?;
            if val > best_val[k] {
                best_val[k] = val;
                best_pos[k].clone_from(&pos[k]);
            }
        }
        g = argmax(&best_val);
    }
    Ok((best_val[g], best_pos[g].clone()))
}

/// Estimates `ε_i = (1 + margin) · max(swarm best, cross-check grid max)`
/// for every output. `seed_points` are added to every swarm's initial
/// population, so the estimate dominates the residual at each of them.
pub fn estimate_epsilon(
    phi: &dyn ExactMap,
    net: &ReluNetwork,
    domain: &BoxDomain,
    cfg: &PsoConfig,
    seed_points: &[Vec<f64>],
) -> Result<ErrorBoundReport> {
    cfg.validate()?;
    if domain.dim() != net.input_dim() {
        return Err(Error::Dimension {
            context: "error-bound domain",
            expected: net.input_dim(),
            got: domain.dim(),
        });
    }
    if let Some(p) = seed_points
        .iter()
        .find(|p| p.len() != domain.dim() || !domain.contains(p, 0.0))
    {
        return Err(Error::Argument(format!(
            "seed point {p:?} is not inside the domain"
        )));
    }
    let mut residual = Residual::new(phi, net)?;
    let m = net.output_dim();
    let (grid_max, worst, _) = grid_scan(&mut residual, domain, cfg.grid_per_axis, cfg.grid_seeds)?;

    let mut swarm_max = vec![0.0; m];
    let mut maximizer = vec![Vec::new(); m];
    for i in 0..m {
        let mut seeds: Vec<Vec<f64>> = seed_points.to_vec();
        seeds.extend(worst[i].iter().map(|(_, p)| p.clone()));
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for restart in 0..cfg.restarts {
            let seed = cfg
                .seed
                .wrapping_add((i as u64) << 32)
                .wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let found = swarm(&mut residual, domain, i, cfg, &seeds, &mut rng)?;
            if found.0 > best.0 {
                best = found;
            }
        }
        swarm_max[i] = best.0;
        maximizer[i] = best.1;
    }
    let epsilon = (0..m)
        .map(|i| (1.0 + cfg.margin) * swarm_max[i].max(grid_max[i]))
        .collect();
    Ok(ErrorBoundReport {
        epsilon,
        swarm_max,
        maximizer,
        grid_max,
        grid_per_axis: cfg.grid_per_axis,
        margin: cfg.margin,
        domain: domain.clone(),
        validation: None,
    })
}

/// Checks `|Φ − Φ_NN| ≤ ε` on every point of a `per_axis` tensor grid.
pub fn validate_epsilon(
    phi: &dyn ExactMap,
    net: &ReluNetwork,
    domain: &BoxDomain,
    epsilon: &[f64],
    per_axis: usize,
) -> Result<Validation> {
    if epsilon.len() != net.output_dim() {
        return Err(Error::Dimension {
            context: "epsilon",
            expected: net.output_dim(),
            got: epsilon.len(),
        });
    }
    let mut residual = Residual::new(phi, net)?;
    let (max, worst, points) = grid_scan(&mut residual, domain, per_axis, 1)?;
    let passed = max.iter().zip(epsilon).all(|(r, e)| r <= e);
    Ok(Validation {
        passed,
        per_axis,
        points,
        worst_residual: max,
        worst_point: worst
            .into_iter()
            .map(|w| w.into_iter().next().map(|(_, p)| p).unwrap_or_default())
            .collect(),
    })
}
