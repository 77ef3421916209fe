//! Log posterior of a utility family given choice data.

use crate::ad::{Dual, Real};
use crate::error::{Error, Result};
use crate::inference::priors::{FamilyPriors, Prior, Transform};
use crate::lottery::ChoiceQuestion;
use crate::utility::{lottery_utility, PreparedOutcome};

#[derive(Debug, Clone)]
struct Datum {
    options: Vec<Vec<PreparedOutcome>>,
    chosen: usize,
}

/// Log density over the sampled parameters of one family.
#[derive(Debug, Clone)]
pub struct Posterior {
    priors: FamilyPriors,
    free_priors: Vec<Prior>,
    transforms: Vec<Transform>,
    data: Vec<Datum>,
    epsilon: f64,
}

/// Gradient oracle used by the sampler: returns the log density and writes
/// its gradient.
pub type GradFn = Box<dyn Fn(&[f64], &mut [f64]) -> f64 + Send + Sync>;

pub const MAX_DIM: usize = 8;

impl Posterior {
    pub fn new(priors: FamilyPriors, data: &[(&ChoiceQuestion, usize)], epsilon: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("choice data"));
        }
        let free_priors = priors.free_priors();
        for p in &free_priors {
            p.validate()?;
        }
        if free_priors.len() > MAX_DIM {
            return Err(Error::Config(format!("{} sampled parameters exceed the supported {MAX_DIM}", free_priors.len())));
        }
        let data = data
            .iter()
            .map(|(q, c)| {
                if *c >= q.option_count() {
                    return Err(Error::Config(format!("question {}: chosen index {c} out of range", q.id)));
                }
                let options = q.options.iter().map(|l| l.outcomes().iter().map(PreparedOutcome::from).collect()).collect();
                Ok(Datum { options, chosen: *c })
            })
            .collect::<Result<Vec<_>>>()?;
        let transforms = free_priors.iter().map(Prior::transform).collect();
        Ok(Self { priors, free_priors, transforms, data, epsilon })
    }

    pub fn priors(&self) -> &FamilyPriors {
        &self.priors
    }

    pub fn dim(&self) -> usize {
        self.free_priors.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.priors.free_names()
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// `Σ log P(chosen | question, θ)` for constrained sampled parameters.
    pub fn log_likelihood(&self, free: &[f64]) -> f64 {
        self.log_lik_generic(free)
    }

    fn log_lik_generic<T: Real>(&self, free: &[T]) -> T {
        let (model, w, beta) = self.priors.assemble(free);
        let family = self.priors.family;
        let kind = self.priors.weighting;
        let mut total = T::cst(0.0);
        let mut u: Vec<T> = Vec::with_capacity(4);
        for d in &self.data {
            u.clear();
            for o in &d.options {
                match lottery_utility(family, &model, kind, &w, o, self.epsilon) {
                    Ok(v) if v.value().is_finite() => u.push(v * beta),
                    _ => return T::cst(f64::NEG_INFINITY),
                }
            }
            let term = if u.len() == 2 {
                let other = 1 - d.chosen;
                -(u[other] - u[d.chosen]).softplus()
            } else {
                let mut best = 0;
                for i in 1..u.len() {
                    if u[i].value() > u[best].value() {
                        best = i;
                    }
                }
                let mut s = T::cst(0.0);
                for &ui in &u {
                    s = s + (ui - u[best]).exp();
                }
                u[d.chosen] - u[best] - s.ln()
            };
            total = total + term;
        }
        total
    }

    /// Log likelihood plus normalized log prior at constrained parameters;
    /// `-inf` outside the prior support.
    pub fn log_posterior(&self, free: &[f64]) -> f64 {
        if free.len() != self.dim() {
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        for (p, &x) in self.free_priors.iter().zip(free) {
            lp += p.log_density(x);
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let ll = self.log_likelihood(free);
        let out = lp + ll;
        if out.is_nan() {
            f64::NEG_INFINITY
        } else {
            out
        }
    }

    /// Density on the unconstrained scale, including transform Jacobians.
    fn log_density_unconstrained<T: Real>(&self, z: &[T]) -> T {
        let mut lp = T::cst(0.0);
        let mut x = Vec::with_capacity(z.len());
        for ((t, p), &zi) in self.transforms.iter().zip(&self.free_priors).zip(z) {
            let (xi, logj) = t.forward(zi);
            if !p.in_support(xi.value()) {
                return T::cst(f64::NEG_INFINITY);
            }
            lp = lp + logj + p.log_density_unchecked(xi);
            x.push(xi);
        }
        lp + self.log_lik_generic(&x)
    }

    pub fn log_density_z(&self, z: &[f64]) -> f64 {
        let v = self.log_density_unconstrained(z);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    pub fn constrain(&self, z: &[f64]) -> Vec<f64> {
        self.transforms.iter().zip(z).map(|(t, &zi)| t.forward(zi).0).collect()
    }

    pub fn unconstrain(&self, x: &[f64]) -> Vec<f64> {
        self.transforms.iter().zip(x).map(|(t, &xi)| t.inverse(xi)).collect()
    }

    fn grad_dual<const N: usize>(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let mut zd = [Dual::<N>::cst(0.0); N];
        for (i, v) in z.iter().enumerate() {
            zd[i] = Dual::var(*v, i);
        }
        let out = self.log_density_unconstrained(&zd);
        if !out.v.is_finite() || out.d.iter().any(|g| !g.is_finite()) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }
        grad.copy_from_slice(&out.d);
        out.v
    }

    /// Type-erased gradient oracle on the unconstrained scale.
    pub fn into_grad_fn(self) -> GradFn {
        let post = std::sync::Arc::new(self);
        macro_rules! erase {
            ($n:literal) => {{
                let p = post.clone();
                Box::new(move |z: &[f64], g: &mut [f64]| p.grad_dual::<$n>(z, g)) as GradFn
            }};
        }
        match post.dim() {
            1 => erase!(1),
            2 => erase!(2),
            3 => erase!(3),
            4 => erase!(4),
            5 => erase!(5),
            6 => erase!(6),
            7 => erase!(7),
            8 => erase!(8),
            d => unreachable!("dimension {d} rejected at construction"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::priors::PriorSpec;
    use crate::lottery::QuestionMode;
    use crate::utility::{Family, Lottery, WeightingKind};

    fn sure_pair(a: f64, b: f64) -> ChoiceQuestion {
        ChoiceQuestion::new("p", QuestionMode::DiffEv, vec![Lottery::sure(a).unwrap(), Lottery::sure(b).unwrap()]).unwrap()
    }

    fn linear_posterior(data: &[(&ChoiceQuestion, usize)]) -> Posterior {
        let fp = PriorSpec::default().for_family(Family::Linear, WeightingKind::None);
        Posterior::new(fp, data, 1e-8).unwrap()
    }

    #[test]
    fn equal_utility_contributes_ln_half() {
        let q = sure_pair(100.0, 100.0);
        let post = linear_posterior(&[(&q, 0)]);
        assert!((post.log_likelihood(&[0.3]) - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_point_likelihood() {
        let q = sure_pair(250.0, 150.0);
        let post = linear_posterior(&[(&q, 0), (&q, 1)]);
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let expected = (s * (1.0 - s)).ln();
        assert!((post.log_likelihood(&[0.01]) - expected).abs() < 1e-12);
        assert!((expected + 1.626523).abs() < 1e-6);
        let prior = Prior::half_normal(2.0).log_density(0.01);
        assert!((post.log_posterior(&[0.01]) - expected - prior).abs() < 1e-12);
    }

    #[test]
    fn outside_support_is_rejected() {
        let q = sure_pair(250.0, 150.0);
        let post = linear_posterior(&[(&q, 0)]);
        assert_eq!(post.log_posterior(&[-1.0]), f64::NEG_INFINITY);
        let fp = PriorSpec::default().for_family(Family::Prospect, WeightingKind::None);
        let post = Posterior::new(fp, &[(&q, 0)], 1e-8).unwrap();
        assert_eq!(post.log_posterior(&[1.2, 0.5, 2.0, 1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn four_option_softmax_likelihood() {
        let q = ChoiceQuestion::new(
            "f",
            QuestionMode::FourOption,
            [1.0, 2.0, 3.0, 4.0].iter().map(|&x| Lottery::sure(x).unwrap()).collect(),
        )
        .unwrap();
        let post = linear_posterior(&[(&q, 2)]);
        let z: f64 = [1.0f64, 2.0, 3.0, 4.0].iter().map(|u| (0.5 * u).exp()).sum();
        assert!((post.log_likelihood(&[0.5]) - (1.5 - z.ln())).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let qs: Vec<ChoiceQuestion> = (0..6)
            .map(|i| {
                ChoiceQuestion::new(
                    format!("q{i}"),
                    QuestionMode::DiffEv,
                    vec![
                        Lottery::from_pairs(&[(300.0 + 40.0 * i as f64, 0.4), (80.0, 0.6)]).unwrap(),
                        Lottery::from_pairs(&[(200.0, 0.7), (150.0 - 10.0 * i as f64, 0.3)]).unwrap(),
                    ],
                )
                .unwrap()
            })
            .collect();
        let data: Vec<(&ChoiceQuestion, usize)> = qs.iter().enumerate().map(|(i, q)| (q, i % 2)).collect();
        let spec = PriorSpec::with_max_reward(400.0);
        for (family, kind) in [
            (Family::Crra, WeightingKind::None),
            (Family::Prospect, WeightingKind::Prelec),
            (Family::EpsteinZin, WeightingKind::None),
            (Family::PiecewiseFs, WeightingKind::GonzalezWu),
            (Family::Hara, WeightingKind::None),
        ] {
            let post = Posterior::new(spec.for_family(family, kind), &data, 1e-8).unwrap();
            let d = post.dim();
            let z: Vec<f64> = (0..d).map(|i| 0.1 * i as f64 - 0.2).collect();
            let f = |z: &[f64]| post.log_density_z(z);
            let grad_fn = post.clone().into_grad_fn();
            let mut g = vec![0.0; d];
            let v = grad_fn(&z, &mut g);
            assert!((v - f(&z)).abs() < 1e-9 * v.abs().max(1.0), "{family}");
            for i in 0..d {
                let h = 1e-6;
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (f(&zp) - f(&zm)) / (2.0 * h);
                assert!((g[i] - fd).abs() < 1e-4 * fd.abs().max(1.0), "{family} d{i}: {} vs {fd}", g[i]);
            }
        }
    }
}
