//! No-U-Turn sampler with multinomial trajectory sampling, dual-averaging
//! step size and windowed diagonal mass-matrix adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MAX_DELTA_H: f64 = 1000.0;
const INIT_ATTEMPTS: usize = 100;
const INIT_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NutsSettings {
    pub tune: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
}

/// Raw output of one chain on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub divergences: usize,
    pub step_size: f64,
    pub mean_accept: f64,
    pub mean_tree_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitFailure;

#[derive(Debug, Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Tree {
    /// Earliest and latest states in integration time.
    first: State,
    last: State,
    p_sharp_first: Vec<f64>,
    p_sharp_last: Vec<f64>,
    rho: Vec<f64>,
    proposal: State,
    log_sum_w: f64,
}

struct Hamiltonian<'a, F> {
    logp: &'a F,
    inv_metric: Vec<f64>,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Hamiltonian<'_, F> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(pi, m)| pi * pi * m).sum::<f64>()
    }

    fn energy(&self, s: &State) -> f64 {
        let h = -s.logp + self.kinetic(&s.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(pi, m)| pi * m).collect()
    }

    fn sample_momentum(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.inv_metric.iter().map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt()).collect()
    }

    fn evaluate(&self, q: Vec<f64>, p: Vec<f64>) -> State {
        let mut grad = vec![0.0; q.len()];
        let logp = (self.logp)(&q, &mut grad);
        State { q, p, grad, logp }
    }

    fn leapfrog(&self, s: &State, eps: f64) -> State {
        let half = 0.5 * eps;
        let p: Vec<f64> = s.p.iter().zip(&s.grad).map(|(p, g)| p + half * g).collect();
        let q: Vec<f64> = s.q.iter().zip(&p).zip(&self.inv_metric).map(|((q, p), m)| q + eps * m * p).collect();
        let mut next = self.evaluate(q, p);
        for (p, g) in next.p.iter_mut().zip(&next.grad) {
            *p += half * g;
        }
        next
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// U-turn checks for two adjacent trees given in time order, including the
/// checks across the junction.
fn merged_ok(left: &Tree, right: &Tree, rho: &[f64]) -> bool {
    no_u_turn(&left.p_sharp_first, &right.p_sharp_last, rho)
        && no_u_turn(&left.p_sharp_first, &right.p_sharp_first, &add(&left.rho, &right.first.p))
        && no_u_turn(&left.p_sharp_last, &right.p_sharp_last, &add(&right.rho, &left.last.p))
}

struct Counters {
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

fn build_tree<F: Fn(&[f64], &mut [f64]) -> f64>(
    ham: &Hamiltonian<'_, F>,
    depth: usize,
    frontier: &State,
    forward: bool,
    eps: f64,
    h0: f64,
    rng: &mut impl Rng,
    c: &mut Counters,
) -> Option<Tree> {
    if depth == 0 {
        let next = ham.leapfrog(frontier, if forward { eps } else { -eps });
        c.n_leapfrog += 1;
        let h = ham.energy(&next);
        if h - h0 > MAX_DELTA_H {
            c.divergent = true;
        }
        c.sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
        if c.divergent {
            return None;
        }
        let ps = ham.p_sharp(&next.p);
        return Some(Tree {
            rho: next.p.clone(),
            p_sharp_first: ps.clone(),
            p_sharp_last: ps,
            first: next.clone(),
            last: next.clone(),
            proposal: next,
            log_sum_w: h0 - h,
        });
    }
    let inner = build_tree(ham, depth - 1, frontier, forward, eps, h0, rng, c)?;
    let edge = if forward { &inner.last } else { &inner.first };
    let outer = build_tree(ham, depth - 1, edge, forward, eps, h0, rng, c)?;

    let log_sum_w = log_add_exp(inner.log_sum_w, outer.log_sum_w);
    let take_outer = rng.random::<f64>() < (outer.log_sum_w - log_sum_w).exp();
    let (left, right) = if forward { (inner, outer) } else { (outer, inner) };
    let rho = add(&left.rho, &right.rho);
    if !merged_ok(&left, &right, &rho) {
        return None;
    }
    let proposal = match (take_outer, forward) {
        (true, true) | (false, false) => right.proposal,
        _ => left.proposal,
    };
    Some(Tree {
        first: left.first,
        last: right.last,
        p_sharp_first: left.p_sharp_first,
        p_sharp_last: right.p_sharp_last,
        rho,
        proposal,
        log_sum_w,
    })
}

struct Transition {
    state: State,
    accept_stat: f64,
    divergent: bool,
    depth: usize,
}

fn transition<F: Fn(&[f64], &mut [f64]) -> f64>(
    ham: &Hamiltonian<'_, F>,
    current: &State,
    eps: f64,
    max_depth: usize,
    rng: &mut impl Rng,
) -> Transition {
    let start = State { p: ham.sample_momentum(rng), ..current.clone() };
    let h0 = ham.energy(&start);
    let ps = ham.p_sharp(&start.p);
    let mut traj = Tree {
        rho: start.p.clone(),
        p_sharp_first: ps.clone(),
        p_sharp_last: ps,
        first: start.clone(),
        last: start.clone(),
        proposal: start.clone(),
        log_sum_w: 0.0,
    };
    let mut sample = start;
    let mut c = Counters { n_leapfrog: 0, sum_metro: 0.0, divergent: false };
    let mut depth = 0;
    while depth < max_depth {
        let forward = rng.random::<f64>() > 0.5;
        let frontier = if forward { traj.last.clone() } else { traj.first.clone() };
        let Some(sub) = build_tree(ham, depth, &frontier, forward, eps, h0, rng, &mut c) else {
            break;
        };
        depth += 1;
        if sub.log_sum_w > traj.log_sum_w || rng.random::<f64>() < (sub.log_sum_w - traj.log_sum_w).exp() {
            sample = sub.proposal.clone();
        }
        let log_sum_w = log_add_exp(traj.log_sum_w, sub.log_sum_w);
        let (left, right) = if forward { (traj, sub) } else { (sub, traj) };
        let rho = add(&left.rho, &right.rho);
        let ok = merged_ok(&left, &right, &rho);
        traj = Tree {
            first: left.first,
            last: right.last,
            p_sharp_first: left.p_sharp_first,
            p_sharp_last: right.p_sharp_last,
            rho,
            proposal: left.proposal,
            log_sum_w,
        };
        if !ok {
            break;
        }
    }
    let accept_stat = if c.n_leapfrog > 0 { c.sum_metro / c.n_leapfrog as f64 } else { 0.0 };
    Transition { state: sample, accept_stat, divergent: c.divergent, depth }
}

/// Nesterov dual averaging of the log step size.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    target: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), target, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: initial fast interval, doubling slow windows for the
/// metric, terminal fast interval.
#[derive(Debug, Clone)]
struct Windows {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl Windows {
    fn new(num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base) = (75, 50, 25);
        if num_warmup < 20 {
            return Self { num_warmup, init_buffer: num_warmup, term_buffer: 0, window_size: 0, next_window: usize::MAX, counter: 0 };
        }
        if init_buffer + base + term_buffer > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base = num_warmup - (init_buffer + term_buffer);
        }
        Self { num_warmup, init_buffer, term_buffer, window_size: base, next_window: init_buffer + base - 1, counter: 0 }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter + self.term_buffer < self.num_warmup
            && self.counter != self.num_warmup
    }

    fn end_of_window(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.num_warmup - self.term_buffer {
                self.next_window = last;
            }
        }
    }
}

/// Welford accumulator for the diagonal metric.
#[derive(Debug, Clone)]
struct VarianceEstimator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    fn new(d: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1.0;
        for i in 0..q.len() {
            let delta = q[i] - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (q[i] - self.mean[i]);
        }
    }

    /// Sample variance shrunk toward a small constant.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m2| {
                let var = if n > 1.0 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

fn find_initial_step<F: Fn(&[f64], &mut [f64]) -> f64>(
    ham: &Hamiltonian<'_, F>,
    current: &State,
    mut eps: f64,
    rng: &mut impl Rng,
) -> f64 {
    let probe = |eps: f64, rng: &mut ChaCha8Rng| {
        let s = State { p: ham.sample_momentum(rng), ..current.clone() };
        let h0 = ham.energy(&s);
        let next = ham.leapfrog(&s, eps);
        h0 - ham.energy(&next)
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    let delta_h = probe(eps, &mut local);
    let up = delta_h > 0.8f64.ln();
    loop {
        let delta_h = probe(eps, &mut local);
        if up && !(delta_h > 0.8f64.ln()) {
            break;
        }
        if !up && !(delta_h < 0.8f64.ln()) {
            break;
        }
        eps = if up { 2.0 * eps } else { 0.5 * eps };
        if !(1e-12..=1e7).contains(&eps) {
            return eps.clamp(1e-12, 1e7);
        }
    }
    eps
}

fn initialize<F: Fn(&[f64], &mut [f64]) -> f64>(
    ham: &Hamiltonian<'_, F>,
    dim: usize,
    init: Option<&[f64]>,
    rng: &mut impl Rng,
) -> Result<State, InitFailure> {
    for attempt in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = match init {
            Some(z0) if attempt == 0 => z0.to_vec(),
            _ => (0..dim).map(|_| rng.random_range(-INIT_RADIUS..INIT_RADIUS)).collect(),
        };
        let s = ham.evaluate(q, vec![0.0; dim]);
        if s.logp.is_finite() && s.grad.iter().all(|g| g.is_finite()) {
            return Ok(s);
        }
    }
    Err(InitFailure)
}

/// Runs one chain against the log density `logp` (which also writes its gradient).
pub fn run_chain<F: Fn(&[f64], &mut [f64]) -> f64>(
    logp: &F,
    dim: usize,
    settings: &NutsSettings,
    init: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput, InitFailure> {
    let mut ham = Hamiltonian { logp, inv_metric: vec![1.0; dim] };
    let mut state = initialize(&ham, dim, init, rng)?;
    let mut eps = find_initial_step(&ham, &state, 1.0, rng);
    let mut da = DualAveraging::new(eps, settings.target_accept);
    let mut windows = Windows::new(settings.tune);
    let mut estimator = VarianceEstimator::new(dim);

    for _ in 0..settings.tune {
        let t = transition(&ham, &state, eps, settings.max_tree_depth, rng);
        state = t.state;
        eps = da.update(t.accept_stat);
        if windows.in_window() {
            estimator.add(&state.q);
        }
        if windows.end_of_window() {
            windows.compute_next_window();
            ham.inv_metric = estimator.regularized();
            estimator = VarianceEstimator::new(dim);
            eps = find_initial_step(&ham, &state, eps, rng);
            da = DualAveraging::new(eps, settings.target_accept);
        }
        windows.counter += 1;
    }
    if settings.tune > 0 {
        eps = da.final_step();
    }

    let mut draws = Vec::with_capacity(settings.draws);
    let (mut divergences, mut accept, mut depth) = (0, 0.0, 0.0);
    for _ in 0..settings.draws {
        let t = transition(&ham, &state, eps, settings.max_tree_depth, rng);
        state = t.state;
        divergences += usize::from(t.divergent);
        accept += t.accept_stat;
        depth += t.depth as f64;
        draws.push(state.q.clone());
    }
    let n = settings.draws.max(1) as f64;
    Ok(ChainOutput { draws, divergences, step_size: eps, mean_accept: accept / n, mean_tree_depth: depth / n })
}
