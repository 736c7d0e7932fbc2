//! Grid regression of a ReLU network onto an exact map.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ExactMap, ForwardScratch, Layer, ReluNetwork};
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;

/// Uniform tensor grid over the sampling box `T`, paired with the map to fit.
pub struct TrainingGrid<'a> {
    pub domain: BoxDomain,
    pub samples_per_axis: usize,
    pub target: &'a dyn ExactMap,
}

impl<'a> TrainingGrid<'a> {
    pub fn new(
        domain: BoxDomain,
        samples_per_axis: usize,
        target: &'a dyn ExactMap,
    ) -> Result<Self> {
        if samples_per_axis < 2 {
            return Err(Error::Argument(format!(
                "training grid needs n_s >= 2, got {samples_per_axis}"
            )));
        }
        if domain.lower.iter().zip(&domain.upper).any(|(l, u)| l >= u) {
            return Err(Error::Argument(
                "training box must have lower < upper on every axis".into(),
            ));
        }
        if domain.dim() != target.input_dim() {
            return Err(Error::Dimension {
                context: "training box vs target input",
                expected: target.input_dim(),
                got: domain.dim(),
            });
        }
        Ok(Self {
            domain,
            samples_per_axis,
            target,
        })
    }

    /// Evaluates the target on every grid point. Returns row-major inputs
    /// and targets.
    pub fn sample(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.domain.grid(self.samples_per_axis)?;
        let m = self.target.output_dim();
        let mut xs = Vec::with_capacity(grid.len() * self.domain.dim());
        let mut ys = vec![0.0; grid.len() * m];
        grid.for_each(|i, p| {
            xs.extend_from_slice(p);
            let out = &mut ys[i * m..(i + 1) * m];
            self.target
                .eval_into(p, out)
                .map_err(|_| Error::Data { point: p.to_vec() })?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data { point: p.to_vec() });
            }
            Ok(())
        })?;
        Ok((xs, ys))
    }
}

/// `K` affine layers with `width` ReLU units in each of the `K − 1` hidden
/// layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Independent initializations; the lowest grid MSE wins.
    pub restarts: usize,
    /// Full-grid evaluations without relative improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    pub final_lr_ratio: f64,
    /// Re-solve the linear output layer by least squares after training.
    pub refit_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 200,
            learning_rate: 3e-3,
            batch_size: 64,
            restarts: 1,
            patience: 20,
            eval_every: 1,
            final_lr_ratio: 1e-3,
            refit_output: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub samples: usize,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub epochs_run: usize,
    /// Grid MSE after each evaluation of the winning restart.
    pub history: Vec<f64>,
    pub best_restart: usize,
}

/// Fits a network to the grid by mini-batch Adam on affinely normalized
/// inputs and targets, then folds the normalization back into the first and
/// last layers. Deterministic for a given `cfg.seed`.
pub fn fit_regression(
    grid: &TrainingGrid<'_>,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<(ReluNetwork, FitReport)> {
    if arch.layers < 2 || arch.width == 0 {
        return Err(Error::Argument(format!(
            "architecture needs K >= 2 and width >= 1, got K={} width={}",
            arch.layers, arch.width
        )));
    }
    if cfg.batch_size == 0 || cfg.restarts == 0 || cfg.eval_every == 0 {
        return Err(Error::Argument(
            "batch_size, restarts and eval_every must be positive".into(),
        ));
    }
    let (xs, ys) = grid.sample()?;
    let data = Normalized::new(&grid.domain, grid.target.output_dim(), xs, ys);

    let mut best: Option<(ReluNetwork, FitReport)> = None;
    for restart in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_add(restart as u64 * 0x9E37_79B9);
        let (net, mut report) = train_once(&data, arch, cfg, seed)?;
        report.best_restart = restart;
        if best
            .as_ref()
            .is_none_or(|(_, b)| report.final_mse < b.final_mse)
        {
            best = Some((net, report));
        }
    }
    Ok(best.expect("at least one restart"))
}

struct Normalized {
    n: usize,
    d: usize,
    m: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    x_center: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: Vec<f64>,
    y_scale: Vec<f64>,
    raw_xs: Vec<f64>,
    raw_ys: Vec<f64>,
}

impl Normalized {
    fn new(domain: &BoxDomain, m: usize, raw_xs: Vec<f64>, raw_ys: Vec<f64>) -> Self {
        let d = domain.dim();
        let n = raw_ys.len() / m;
        let x_center: Vec<f64> = (0..d)
            .map(|i| 0.5 * (domain.lower[i] + domain.upper[i]))
            .collect();
        let x_scale: Vec<f64> = (0..d)
            .map(|i| 0.5 * (domain.upper[i] - domain.lower[i]))
            .collect();
        let mut y_mean = vec![0.0; m];
        for s in 0..n {
            for o in 0..m {
                y_mean[o] += raw_ys[s * m + o];
            }
        }
        y_mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut y_scale = vec![0.0; m];
        for s in 0..n {
            for o in 0..m {
                y_scale[o] += (raw_ys[s * m + o] - y_mean[o]).powi(2);
            }
        }
        for v in &mut y_scale {
            let sd = (*v / n as f64).sqrt();
            *v = if sd > 1e-12 { sd } else { 1.0 };
        }
        let xs = raw_xs
            .chunks(d)
            .flat_map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, v)| (v - x_center[i]) / x_scale[i])
                    .collect::<Vec<_>>()
            })
            .collect();
        let ys = raw_ys
            .chunks(m)
            .flat_map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(o, v)| (v - y_mean[o]) / y_scale[o])
                    .collect::<Vec<_>>()
            })
            .collect();
        Self {
            n,
            d,
            m,
            xs,
            ys,
            x_center,
            x_scale,
            y_mean,
            y_scale,
            raw_xs,
            raw_ys,
        }
    }

    /// Maps a network trained in normalized coordinates back to the
    /// original input/output units.
    fn fold(&self, params: &[Params]) -> Result<ReluNetwork> {
        let last = params.len() - 1;
        let layers = params
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let mut w = p.w.clone();
                let mut b = p.b.clone();
                if k == 0 {
                    for j in 0..p.rows {
                        let mut shift = 0.0;
                        for i in 0..p.cols {
                            w[j * p.cols + i] /= self.x_scale[i];
                            shift += w[j * p.cols + i] * self.x_center[i];
                        }
                        b[j] -= shift;
                    }
                }
                if k == last {
                    for j in 0..p.rows {
                        for i in 0..p.cols {
                            w[j * p.cols + i] *= self.y_scale[j];
                        }
                        b[j] = b[j] * self.y_scale[j] + self.y_mean[j];
                    }
                }
                Layer::from_flat(w, b, p.cols)
            })
            .collect();
        ReluNetwork::new(layers)
    }

    fn grid_mse(&self, net: &ReluNetwork) -> f64 {
        let mut scratch = ForwardScratch::default();
        let mut acc = 0.0;
        for s in 0..self.n {
            let out = net.forward_with(&mut scratch, &self.raw_xs[s * self.d..(s + 1) * self.d]);
            for o in 0..self.m {
                acc += (out[o] - self.raw_ys[s * self.m + o]).powi(2);
            }
        }
        acc / (self.n * self.m) as f64
    }
}

#[derive(Clone)]
struct Params {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

struct Adam {
    m: Vec<Params>,
    v: Vec<Params>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: &[Params]) -> Self {
        let zero: Vec<Params> = shape
            .iter()
            .map(|p| Params {
                rows: p.rows,
                cols: p.cols,
                w: vec![0.0; p.w.len()],
                b: vec![0.0; p.b.len()],
            })
            .collect();
        Self {
            m: zero.clone(),
            v: zero,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Params], grads: &[Params], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let g = &grads[k];
            let update = |x: &mut [f64], gx: &[f64], mx: &mut [f64], vx: &mut [f64]| {
                for i in 0..x.len() {
                    mx[i] = Self::BETA1 * mx[i] + (1.0 - Self::BETA1) * gx[i];
                    vx[i] = Self::BETA2 * vx[i] + (1.0 - Self::BETA2) * gx[i] * gx[i];
                    x[i] -= lr * (mx[i] / c1) / ((vx[i] / c2).sqrt() + Self::EPS);
                }
            };
            let (mk, vk) = (&mut self.m[k], &mut self.v[k]);
            update(&mut p.w, &g.w, &mut mk.w, &mut vk.w);
            update(&mut p.b, &g.b, &mut mk.b, &mut vk.b);
        }
    }
}

fn init_params(dims: &[usize], rng: &mut ChaCha8Rng) -> Vec<Params> {
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(k, pair)| {
            let (cols, rows) = (pair[0], pair[1]);
            // He scaling for ReLU layers, unit-gain for the linear output.
            let gain = if k < last { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / cols as f64).sqrt()).expect("positive std");
            Params {
                rows,
                cols,
                w: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
                b: (0..rows).map(|_| rng.random_range(-0.1..0.1)).collect(),
            }
        })
        .collect()
}

fn train_once(
    data: &Normalized,
    arch: Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ReluNetwork, FitReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![data.d];
    dims.extend(std::iter::repeat_n(arch.width, arch.layers - 1));
    dims.push(data.m);
    let mut params = init_params(&dims, &mut rng);
    let mut grads: Vec<Params> = params.clone();
    let mut adam = Adam::new(&params);

    let initial_net = data.fold(&params)?;
    let initial_mse = data.grid_mse(&initial_net);
    let mut best_net = initial_net;
    let mut best_mse = initial_mse;
    let mut best_params = params.clone();
    let mut history = vec![initial_mse];
    let mut stale = 0;
    let mut epochs_run = 0;

    let depth = params.len();
    let mut acts: Vec<Vec<f64>> = dims.iter().map(|&w| vec![0.0; w]).collect();
    let mut deltas: Vec<Vec<f64>> = dims.iter().map(|&w| vec![0.0; w]).collect();
    let mut order: Vec<usize> = (0..data.n).collect();

    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / cfg.epochs.max(1) as f64;
        let ratio = cfg.final_lr_ratio;
        let lr = cfg.learning_rate
            * (ratio + (1.0 - ratio) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.w.iter_mut().for_each(|v| *v = 0.0);
                g.b.iter_mut().for_each(|v| *v = 0.0);
            }
            let scale = 2.0 / (batch.len() * data.m) as f64;
            for &s in batch {
                acts[0].copy_from_slice(&data.xs[s * data.d..(s + 1) * data.d]);
                for k in 0..depth {
                    let p = &params[k];
                    let (head, tail) = acts.split_at_mut(k + 1);
                    let (input, out) = (&head[k], &mut tail[0]);
                    for j in 0..p.rows {
                        let mut acc = p.b[j];
                        let row = &p.w[j * p.cols..(j + 1) * p.cols];
                        for i in 0..p.cols {
                            acc += row[i] * input[i];
                        }
                        out[j] = if k + 1 < depth { acc.max(0.0) } else { acc };
                    }
                }
                for o in 0..data.m {
                    deltas[depth][o] = scale * (acts[depth][o] - data.ys[s * data.m + o]);
                }
                for k in (0..depth).rev() {
                    let p = &params[k];
                    let g = &mut grads[k];
                    let (dh, dt) = deltas.split_at_mut(k + 1);
                    let (d_in, d_out) = (&mut dh[k], &dt[0]);
                    d_in.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..p.rows {
                        let dj = d_out[j];
                        if dj == 0.0 {
                            continue;
                        }
                        g.b[j] += dj;
                        let row = &p.w[j * p.cols..(j + 1) * p.cols];
                        let grow = &mut g.w[j * p.cols..(j + 1) * p.cols];
                        for i in 0..p.cols {
                            grow[i] += dj * acts[k][i];
                            d_in[i] += dj * row[i];
                        }
                    }
                    if k > 0 {
                        for i in 0..p.cols {
                            if acts[k][i] <= 0.0 {
                                d_in[i] = 0.0;
                            }
                        }
                    }
                }
            }
            adam.step(&mut params, &grads, lr);
        }
        epochs_run = epoch + 1;
        if epochs_run % cfg.eval_every == 0 || epochs_run == cfg.epochs {
            let net = data.fold(&params)?;
            let mse = data.grid_mse(&net);
            history.push(mse);
            if mse < best_mse * (1.0 - 1e-4) {
                stale = 0;
            } else {
                stale += 1;
            }
            if mse < best_mse {
                best_mse = mse;
                best_net = net;
                best_params.clone_from(&params);
            }
            if stale >= cfg.patience {
                break;
            }
        }
    }

    if cfg.refit_output {
        if let Some(refit) = refit_output_layer(data, &best_params) {
            let net = data.fold(&refit)?;
            let mse = data.grid_mse(&net);
            if mse < best_mse {
                history.push(mse);
                best_mse = mse;
                best_net = net;
            }
        }
    }

    Ok((
        best_net,
        FitReport {
            samples: data.n,
            initial_mse,
            final_mse: best_mse,
            epochs_run,
            history,
            best_restart: 0,
        },
    ))
}

/// Least-squares optimal output layer for the hidden features of `params`,
/// from the normal equations. `None` when they are numerically singular.
fn refit_output_layer(data: &Normalized, params: &[Params]) -> Option<Vec<Params>> {
    let depth = params.len();
    let width = params[depth - 1].cols;
    let f = width + 1;
    let mut gram = DMatrix::<f64>::zeros(f, f);
    let mut rhs = DMatrix::<f64>::zeros(f, data.m);
    let mut cur = Vec::new();
    let mut next = Vec::new();
    let mut phi = vec![0.0; f];
    for s in 0..data.n {
        cur.clear();
        cur.extend_from_slice(&data.xs[s * data.d..(s + 1) * data.d]);
        for p in &params[..depth - 1] {
            next.clear();
            for j in 0..p.rows {
                let row = &p.w[j * p.cols..(j + 1) * p.cols];
                let acc: f64 = p.b[j] + row.iter().zip(&cur).map(|(w, x)| w * x).sum::<f64>();
                next.push(acc.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        phi[..width].copy_from_slice(&cur);
        phi[width] = 1.0;
        for a in 0..f {
            if phi[a] == 0.0 {
                continue;
            }
            for b in a..f {
                gram[(a, b)] += phi[a] * phi[b];
            }
            for o in 0..data.m {
                rhs[(a, o)] += phi[a] * data.ys[s * data.m + o];
            }
        }
    }
    for a in 0..f {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let scale = gram.diagonal().max().max(1.0);
    let sol = gram.svd(true, true).solve(&rhs, 1e-13 * scale).ok()?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = params.to_vec();
    let last = &mut out[depth - 1];
    for o in 0..data.m {
        for i in 0..width {
            last.w[o * width + i] = sol[(i, o)];
        }
        last.b[o] = sol[(width, o)];
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_net::scalar_map;

    #[test]
    fn zero_target_is_fitted_exactly_enough() {
        let target = scalar_map(2, |_| 0.0);
        let grid =
            TrainingGrid::new(BoxDomain::symmetric(&[1.0, 1.0]).unwrap(), 6, &target).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            ..TrainConfig::default()
        };
        let (net, report) = fit_regression(
            &grid,
            Architecture {
                layers: 2,
                width: 3,
            },
            &cfg,
        )
        .unwrap();
        assert!(report.final_mse <= 1e-9, "mse {}", report.final_mse);
        assert!(net.forward(&[0.2, -0.4]).unwrap()[0].abs() < 1e-3);
    }

    #[test]
    fn abs_is_learned_by_two_units() {
        let target = scalar_map(1, |x| x[0].abs());
        let grid = TrainingGrid::new(BoxDomain::symmetric(&[1.0]).unwrap(), 41, &target).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            learning_rate: 1e-2,
            restarts: 4,
            patience: 2000,
            ..TrainConfig::default()
        };
        let (_, report) = fit_regression(
            &grid,
            Architecture {
                layers: 2,
                width: 2,
            },
            &cfg,
        )
        .unwrap();
        assert!(report.final_mse <= 1e-6, "mse {}", report.final_mse);
        assert!(report.final_mse <= report.initial_mse);
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let target = scalar_map(1, |x| x[0].sin());
        let grid = TrainingGrid::new(BoxDomain::symmetric(&[2.0]).unwrap(), 21, &target).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let arch = Architecture {
            layers: 3,
            width: 5,
        };
        let (a, ra) = fit_regression(&grid, arch, &cfg).unwrap();
        let (b, rb) = fit_regression(&grid, arch, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.final_mse <= ra.initial_mse);
    }

    #[test]
    fn non_finite_target_names_the_point() {
        let target = scalar_map(1, |x| if x[0] > 0.9 { f64::NAN } else { x[0] });
        let grid = TrainingGrid::new(BoxDomain::symmetric(&[1.0]).unwrap(), 3, &target).unwrap();
        match fit_regression(
            &grid,
            Architecture {
                layers: 2,
                width: 2,
            },
            &TrainConfig::default(),
        ) {
            Err(Error::Data { point }) => assert_eq!(point, vec![1.0]),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_too_shallow_architecture() {
        let target = scalar_map(1, |x| x[0]);
        let grid = TrainingGrid::new(BoxDomain::symmetric(&[1.0]).unwrap(), 3, &target).unwrap();
        assert!(fit_regression(
            &grid,
            Architecture {
                layers: 1,
                width: 2
            },
            &TrainConfig::default()
        )
        .is_err());
    }
}
