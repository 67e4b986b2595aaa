//! Multinomial no-U-turn sampler with a diagonal metric, dual-averaging step
//! size and windowed variance adaptation.

use rand::Rng;
use rand_distr::StandardNormal;

use super::model::LogDensity;

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct NutsSettings {
    pub warmup: usize,
    pub draws: usize,
    pub max_depth: usize,
    pub target_accept: f64,
    pub init_radius: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct ChainOutput {
    /// Unconstrained draws, `draws * dim`, row-major.
    pub draws: Vec<f64>,
    pub divergences: usize,
}

#[derive(Debug, Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    lp: f64,
}

struct Sampler<'a, T: LogDensity, R: Rng> {
    target: &'a T,
    rng: &'a mut R,
    inv_metric: Vec<f64>,
    eps: f64,
    max_depth: usize,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

impl<T: LogDensity, R: Rng> Sampler<'_, T, R> {
    fn hamiltonian(&self, z: &State) -> f64 {
        let k: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum();
        let h = -z.lp + 0.5 * k;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, z: &State) -> Vec<f64> {
        z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum(&mut self, z: &mut State) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = self.rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut State, eps: f64) {
        for i in 0..z.q.len() {
            z.p[i] += 0.5 * eps * z.g[i];
        }
        for i in 0..z.q.len() {
            z.q[i] += eps * self.inv_metric[i] * z.p[i];
        }
        z.lp = self.target.logp_grad(&z.q, &mut z.g);
        if !z.lp.is_finite() || z.g.iter().any(|g| !g.is_finite()) {
            z.lp = f64::NEG_INFINITY;
            return;
        }
        for i in 0..z.q.len() {
            z.p[i] += 0.5 * eps * z.g[i];
        }
    }

    /// Heuristic doubling/halving until one leapfrog step has acceptance near 0.8.
    fn init_stepsize(&mut self, z: &State) {
        let log_08 = 0.8f64.ln();
        let mut probe = z.clone();
        self.sample_momentum(&mut probe);
        let h0 = self.hamiltonian(&probe);
        let mut trial = probe.clone();
        self.leapfrog(&mut trial, self.eps);
        let delta = h0 - self.hamiltonian(&trial);
        let direction = if delta > log_08 { 1 } else { -1 };
        loop {
            let mut probe = z.clone();
            self.sample_momentum(&mut probe);
            let h0 = self.hamiltonian(&probe);
            self.leapfrog(&mut probe, self.eps);
            let delta = h0 - self.hamiltonian(&probe);
            if direction == 1 && !(delta > log_08) || direction == -1 && !(delta < log_08) {
                break;
            }
            self.eps = if direction == 1 { 2.0 * self.eps } else { 0.5 * self.eps };
            if self.eps > 1e7 || self.eps < 1e-12 {
                self.eps = self.eps.clamp(1e-12, 1e7);
                break;
            }
        }
    }

    /// One NUTS transition from `z`; returns (accept statistic, divergent).
    fn transition(&mut self, z: &mut State) -> (f64, bool) {
        self.sample_momentum(z);
        let h0 = self.hamiltonian(z);
        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let ps = self.p_sharp(z);
        let mut p_fwd_fwd = z.p.clone();
        let mut p_sharp_fwd_fwd = ps.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = ps.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = ps.clone();
        let mut p_bck_bck = z.p.clone();
        let mut p_sharp_bck_bck = ps;
        let mut rho = z.p.clone();
        let dim = rho.len();

        let mut log_sum_weight = 0.0;
        let mut n_leapfrog = 0usize;
        let mut sum_metro = 0.0;
        let mut divergent = false;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_sub = f64::NEG_INFINITY;
            let valid;
            if self.rng.random::<f64>() > 0.5 {
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let mut zc = z_fwd.clone();
                valid = self.build_tree(
                    depth,
                    &mut zc,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    self.eps,
                    &mut n_leapfrog,
                    &mut lsw_sub,
                    &mut sum_metro,
                    &mut divergent,
                );
                z_fwd = zc;
            } else {
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                let mut zc = z_bck.clone();
                valid = self.build_tree(
                    depth,
                    &mut zc,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -self.eps,
                    &mut n_leapfrog,
                    &mut lsw_sub,
                    &mut sum_metro,
                    &mut divergent,
                );
                z_bck = zc;
            }
            if !valid {
                break;
            }
            depth += 1;
            if lsw_sub > log_sum_weight {
                z_sample.clone_from(&z_propose);
            } else if self.rng.random::<f64>() < (lsw_sub - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_sub);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let ext = add(&rho_bck, &p_fwd_bck);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &ext);
            let ext = add(&rho_fwd, &p_bck_fwd);
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &ext);
            if !persist {
                break;
            }
        }
        *z = z_sample;
        let accept = if n_leapfrog > 0 {
            sum_metro / n_leapfrog as f64
        } else {
            0.0
        };
        (accept, divergent)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut State,
        z_propose: &mut State,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        eps: f64,
        n_leapfrog: &mut usize,
        log_sum_weight: &mut f64,
        sum_metro: &mut f64,
        divergent: &mut bool,
    ) -> bool {
        let dim = rho.len();
        if depth == 0 {
            self.leapfrog(z, eps);
            *n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                *divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            *sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(z);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !*divergent;
        }

        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            eps,
            n_leapfrog,
            &mut lsw_init,
            sum_metro,
            divergent,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            eps,
            n_leapfrog,
            &mut lsw_final,
            sum_metro,
            divergent,
        ) {
            return false;
        }

        let lsw_sub = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_sub);
        if lsw_final > lsw_sub || self.rng.random::<f64>() < (lsw_final - lsw_sub).exp() {
            *z_propose = z_propose_final;
        }

        let rho_sub = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_sub) {
            *r += s;
        }
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_sub);
        let ext = add(&rho_init, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &ext);
        let ext = add(&rho_final, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &ext);
        persist
    }
}

struct DualAveraging {
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const KAPPA: f64 = 0.75;
    const T0: f64 = 10.0;

    fn new(eps: f64, delta: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
            delta,
        }
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Windowed variance estimation schedule: fast initial buffer, doubling
/// slow windows, fast terminal buffer.
struct Windows {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    enabled: bool,
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Windows {
    fn new(warmup: usize, dim: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        let enabled = warmup >= 20;
        if init + base + term > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup.saturating_sub(init + term);
        }
        Windows {
            warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_window: (init + base).saturating_sub(1),
            counter: 0,
            enabled,
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer && self.counter < self.warmup - self.term_buffer && self.counter != self.warmup
    }

    fn end_of_window(&self) -> bool {
        self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.warmup - self.term_buffer {
                self.next_window = last;
            }
        }
    }

    /// Records `q`; returns an updated inverse metric at window ends.
    fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if !self.enabled {
            return None;
        }
        if self.in_window() {
            self.n += 1;
            let n = self.n as f64;
            for i in 0..q.len() {
                let d = q[i] - self.mean[i];
                self.mean[i] += d / n;
                self.m2[i] += d * (q[i] - self.mean[i]);
            }
        }
        if self.end_of_window() {
            self.compute_next_window();
            let n = self.n as f64;
            let var = self
                .m2
                .iter()
                .map(|m| {
                    let v = if self.n > 1 { m / (n - 1.0) } else { 1.0 };
                    (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))
                })
                .collect();
            self.n = 0;
            self.mean.iter_mut().for_each(|m| *m = 0.0);
            self.m2.iter_mut().for_each(|m| *m = 0.0);
            self.counter += 1;
            return Some(var);
        }
        self.counter += 1;
        None
    }
}

/// Runs one chain. Returns `None` when no finite starting point is found.
pub(crate) fn run_chain<T: LogDensity, R: Rng>(
    target: &T,
    settings: &NutsSettings,
    rng: &mut R,
) -> Option<ChainOutput> {
    let dim = target.dim();
    let mut z = State {
        q: vec![0.0; dim],
        p: vec![0.0; dim],
        g: vec![0.0; dim],
        lp: f64::NEG_INFINITY,
    };
    let mut found = false;
    for _ in 0..100 {
        for q in z.q.iter_mut() {
            *q = rng.random_range(-settings.init_radius..=settings.init_radius);
        }
        z.lp = target.logp_grad(&z.q, &mut z.g);
        if z.lp.is_finite() && z.g.iter().all(|g| g.is_finite()) {
            found = true;
            break;
        }
    }
    if !found {
        return None;
    }

    let mut s = Sampler {
        target,
        rng,
        inv_metric: vec![1.0; dim],
        eps: 1.0,
        max_depth: settings.max_depth,
    };
    s.init_stepsize(&z);
    let mut da = DualAveraging::new(s.eps, settings.target_accept);
    let mut windows = Windows::new(settings.warmup, dim);
    for _ in 0..settings.warmup {
        let (accept, _) = s.transition(&mut z);
        s.eps = da.learn(accept);
        if let Some(var) = windows.learn(&z.q) {
            s.inv_metric = var;
            s.init_stepsize(&z);
            da = DualAveraging::new(s.eps, settings.target_accept);
        }
    }
    if settings.warmup > 0 {
        s.eps = da.final_step();
    }

    let mut draws = Vec::with_capacity(settings.draws * dim);
    let mut divergences = 0;
    for _ in 0..settings.draws {
        let (_, div) = s.transition(&mut z);
        divergences += div as usize;
        draws.extend_from_slice(&z.q);
    }
    Some(ChainOutput { draws, divergences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent Gaussians with distinct scales.
    struct Gauss {
        mean: Vec<f64>,
        sd: Vec<f64>,
    }

    impl LogDensity for Gauss {
        fn dim(&self) -> usize {
            self.mean.len()
        }
        fn logp_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let d = (x[i] - self.mean[i]) / self.sd[i];
                lp -= 0.5 * d * d;
                g[i] = -d / self.sd[i];
            }
            lp
        }
    }

    #[test]
    fn recovers_gaussian_moments() {
        let target = Gauss {
            mean: vec![1.0, -2.0, 0.0],
            sd: vec![0.5, 2.0, 10.0],
        };
        let settings = NutsSettings {
            warmup: 500,
            draws: 2000,
            max_depth: 10,
            target_accept: 0.8,
            init_radius: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = run_chain(&target, &settings, &mut rng).unwrap();
        assert_eq!(out.divergences, 0);
        for i in 0..3 {
            let xs: Vec<f64> = out.draws.iter().skip(i).step_by(3).copied().collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            let sd = target.sd[i];
            assert!((m - target.mean[i]).abs() < 0.15 * sd, "mean {i}: {m}");
            assert!((v.sqrt() / sd - 1.0).abs() < 0.1, "sd {i}: {}", v.sqrt());
        }
    }

    #[test]
    fn windows_cover_short_warmup() {
        let mut w = Windows::new(100, 1);
        let mut updates = 0;
        for _ in 0..100 {
            if w.learn(&[0.5]).is_some() {
                updates += 1;
            }
        }
        assert!(updates >= 1);
    }
}
