//! Prior-weighted three-player losses and the analytic optimal-discriminator
//! oracles.
//!
//! Every loss is written for minimisation. A sample of class `j` carries the
//! weight `N * P_j` (its prior relative to the uniform prior), so uniform
//! priors give exactly the unweighted batch means. Probabilities are clamped
//! to `[PROB_EPS, 1 - PROB_EPS]` before any log.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{contract, Error, Result};

pub const PROB_EPS: f64 = 1e-7;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);
static DEGENERATE_WARNED: AtomicBool = AtomicBool::new(false);

/// Class-conditional weights of the real, generated and classifier terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors {
    pub real: Vec<f64>,
    pub generated: Vec<f64>,
    pub classifier: Vec<f64>,
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(contract(format!("{name} priors must be non-negative, got {v:?}")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(contract(format!("{name} priors sum to {total}, expected 1")));
    }
    Ok(())
}

impl ClassPriors {
    pub fn new(real: Vec<f64>, generated: Vec<f64>, classifier: Vec<f64>) -> Result<Self> {
        check_simplex("real", &real)?;
        check_simplex("generated", &generated)?;
        check_simplex("classifier", &classifier)?;
        if real.len() != generated.len() || real.len() != classifier.len() {
            return Err(contract("prior vectors differ in length"));
        }
        Ok(Self {
            real,
            generated,
            classifier,
        })
    }

    pub fn uniform(classes: usize) -> Self {
        let p = vec![1.0 / classes as f64; classes];
        Self {
            real: p.clone(),
            generated: p.clone(),
            classifier: p,
        }
    }

    pub fn classes(&self) -> usize {
        self.real.len()
    }
}

/// How the generator is pushed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLoss {
    /// Minimise `log(1 - D(G(z)))`.
    Saturating,
    /// Minimise `-log D(G(z))`.
    NonSaturating,
}

fn sample_weights(priors: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
    let n = priors.len() as f64;
    labels
        .iter()
        .map(|y| {
            priors
                .get(*y)
                .map(|p| n * p)
                .ok_or_else(|| contract(format!("label {y} out of range for {} classes", priors.len())))
        })
        .collect()
}

fn warn_if_clamped(g: &Graph, p: Var) {
    let hit = g.value(p).data().iter().any(|v| *v < PROB_EPS || *v > 1.0 - PROB_EPS);
    if hit && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("probability outside [{PROB_EPS}, 1 - {PROB_EPS}] clamped before log");
    }
}

/// Flatten `[B]` or `[B, 1]` discriminator output to `[B]`.
fn column(g: &mut Graph, p: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(p).to_vec();
    let ok = match shape.as_slice() {
        [b] => *b == labels.len(),
        [b, 1] => *b == labels.len(),
        _ => false,
    };
    if !ok {
        return Err(Error::Dimension {
            op: "discriminator output",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(contract("empty batch"));
    }
    g.reshape(p, &[labels.len()])
}

/// `-(1/B) sum_i w_i log(q_i)`, with `q = p` or `q = 1 - p`.
fn weighted_nll(g: &mut Graph, p: Var, weights: &[f64], complement: bool) -> Result<Var> {
    warn_if_clamped(g, p);
    let q = if complement { g.affine(p, -1.0, 1.0)? } else { p };
    let q = g.clamp(q, PROB_EPS, 1.0 - PROB_EPS)?;
    let logq = g.log(q)?;
    let b = weights.len() as f64;
    let w: Vec<f64> = weights.iter().map(|w| -w / b).collect();
    g.weighted_sum(logq, &w)
}

/// Negated discriminator objective:
/// `-(1/B_r) sum w log D(x) - (1/B_f) sum w log(1 - D(G(z|c)))`.
pub fn loss_d(
    g: &mut Graph,
    real_prob: Var,
    real_labels: &[usize],
    fake_prob: Var,
    fake_labels: &[usize],
    priors: &ClassPriors,
) -> Result<Var> {
    let real = column(g, real_prob, real_labels)?;
    let fake = column(g, fake_prob, fake_labels)?;
    let wr = sample_weights(&priors.real, real_labels)?;
    let wg = sample_weights(&priors.generated, fake_labels)?;
    let lr = weighted_nll(g, real, &wr, false)?;
    let lf = weighted_nll(g, fake, &wg, true)?;
    g.add(lr, lf)
}

/// Generator loss on the discriminator's verdict on generated samples.
pub fn loss_g(
    g: &mut Graph,
    fake_prob: Var,
    fake_labels: &[usize],
    priors: &ClassPriors,
    mode: GeneratorLoss,
) -> Result<Var> {
    let fake = column(g, fake_prob, fake_labels)?;
    let wg = sample_weights(&priors.generated, fake_labels)?;
    match mode {
        GeneratorLoss::NonSaturating => weighted_nll(g, fake, &wg, false),
        GeneratorLoss::Saturating => {
            let nll = weighted_nll(g, fake, &wg, true)?;
            g.neg(nll)
        }
    }
}

fn picked_nll(g: &mut Graph, probs: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(Error::Dimension {
            op: "class probabilities",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    let p = g.pick(probs, labels)?;
    weighted_nll(g, p, weights, false)
}

/// Prior-weighted cross-entropy of the classifier on real samples plus,
/// when given, generated samples labelled by their conditioning class.
pub fn loss_c(
    g: &mut Graph,
    real_probs: Var,
    real_labels: &[usize],
    fake: Option<(Var, &[usize])>,
    priors: &ClassPriors,
) -> Result<Var> {
    let wr = sample_weights(&priors.classifier, real_labels)?;
    let real = picked_nll(g, real_probs, real_labels, &wr)?;
    match fake {
        None => Ok(real),
        Some((probs, labels)) => {
            let wf = sample_weights(&priors.classifier, labels)?;
            let f = picked_nll(g, probs, labels, &wf)?;
            g.add(real, f)
        }
    }
}

/// Two-player auxiliary-classifier discriminator with `N + 1` outputs, the
/// last one meaning "generated".
pub fn loss_d_auxiliary(
    g: &mut Graph,
    real_probs: Var,
    real_labels: &[usize],
    fake_probs: Var,
    fake_labels: &[usize],
    priors: &ClassPriors,
) -> Result<Var> {
    let n = priors.classes();
    let wr = sample_weights(&priors.real, real_labels)?;
    let wg = sample_weights(&priors.generated, fake_labels)?;
    let real = picked_nll(g, real_probs, real_labels, &wr)?;
    let fake_slot = vec![n; fake_labels.len()];
    let fake = picked_nll(g, fake_probs, &fake_slot, &wg)?;
    g.add(real, fake)
}

/// Generator side of the auxiliary-classifier game: make the discriminator
/// assign each generated sample to its conditioning class.
pub fn loss_g_auxiliary(g: &mut Graph, fake_probs: Var, fake_labels: &[usize], priors: &ClassPriors) -> Result<Var> {
    let wg = sample_weights(&priors.generated, fake_labels)?;
    picked_nll(g, fake_probs, fake_labels, &wg)
}

/// Finite distribution over a list of points.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    pub support: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<Vec<f64>>, mass: Vec<f64>) -> Result<Self> {
        if support.len() != mass.len() || mass.is_empty() {
            return Err(contract("support and mass differ in length"));
        }
        if mass.iter().any(|m| !(*m >= 0.0)) || (mass.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(contract(format!("mass must be a probability vector, got {mass:?}")));
        }
        Ok(Self { support, mass })
    }

    fn same_support(&self, other: &Self) -> Result<()> {
        if self.support != other.support {
            return Err(contract("distributions must share a support"));
        }
        Ok(())
    }
}

/// Real/generated weights of class `j`, rescaled so they sum to 2 (the two
/// unit-weight expectations of the unweighted game).
fn pair_weights(priors: &ClassPriors, j: usize) -> Result<(f64, f64)> {
    let (r, g) = match (priors.real.get(j), priors.generated.get(j)) {
        (Some(r), Some(g)) => (*r, *g),
        _ => return Err(contract(format!("class {j} out of range"))),
    };
    if r + g <= 0.0 {
        return Err(contract(format!("class {j} has zero real and generated prior")));
    }
    Ok((2.0 * r / (r + g), 2.0 * g / (r + g)))
}

/// Pointwise optimal discriminator `P^r p_r / (P^r p_r + P^g p_g)`; points
/// where both measures vanish get 0.5.
pub fn optimal_discriminator(
    p_r: &DiscreteDistribution,
    p_g: &DiscreteDistribution,
    priors: &ClassPriors,
    j: usize,
) -> Result<Vec<f64>> {
    p_r.same_support(p_g)?;
    let (wr, wg) = pair_weights(priors, j)?;
    Ok(p_r
        .mass
        .iter()
        .zip(&p_g.mass)
        .map(|(r, g)| {
            let a = wr * r;
            let denom = a + wg * g;
            if denom == 0.0 {
                if !DEGENERATE_WARNED.swap(true, Ordering::Relaxed) {
                    log::info!("optimal discriminator undefined where both measures vanish; using 0.5");
                }
                0.5
            } else {
                a / denom
            }
        })
        .collect())
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Prior-weighted discriminator objective for class `j` at a pointwise
/// discriminator `d` (exact expectation, `0 log 0 = 0`).
pub fn discriminator_objective(
    d: &[f64],
    p_r: &DiscreteDistribution,
    p_g: &DiscreteDistribution,
    priors: &ClassPriors,
    j: usize,
) -> Result<f64> {
    p_r.same_support(p_g)?;
    if d.len() != p_r.mass.len() {
        return Err(contract("discriminator values do not match the support"));
    }
    let (wr, wg) = pair_weights(priors, j)?;
    Ok(d
        .iter()
        .zip(p_r.mass.iter().zip(&p_g.mass))
        .map(|(dv, (r, g))| xlogy(wr * r, *dv) + xlogy(wg * g, 1.0 - dv))
        .sum())
}

fn kl(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| if *x == 0.0 { 0.0 } else { x * (x / y).ln() }).sum()
}

/// Jensen-Shannon divergence by definition: mean KL of both measures
/// against their midpoint, natural log.
pub fn js_divergence(a: &[f64], b: &[f64]) -> f64 {
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    0.5 * kl(a, &mid) + 0.5 * kl(b, &mid)
}

/// `-2 log 2 + 2 JS(P^r p_r || P^g p_g)` with the class weights rescaled as
/// in [`discriminator_objective`].
pub fn game_value_at_optimum(
    p_r: &DiscreteDistribution,
    p_g: &DiscreteDistribution,
    priors: &ClassPriors,
    j: usize,
) -> Result<f64> {
    p_r.same_support(p_g)?;
    let (wr, wg) = pair_weights(priors, j)?;
    let a: Vec<f64> = p_r.mass.iter().map(|m| wr * m).collect();
    let b: Vec<f64> = p_g.mass.iter().map(|m| wg * m).collect();
    Ok(-2.0 * std::f64::consts::LN_2 + 2.0 * js_divergence(&a, &b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use std::f64::consts::LN_2;

    fn probs(g: &mut Graph, v: Vec<f64>) -> Var {
        let n = v.len();
        g.constant(Tensor::new(vec![n, 1], v).unwrap())
    }

    #[test]
    fn half_discriminator_single_class() {
        let priors = ClassPriors::uniform(1);
        let mut g = Graph::new();
        let r = probs(&mut g, vec![0.5; 4]);
        let f = probs(&mut g, vec![0.5; 3]);
        let l = loss_d(&mut g, r, &[0; 4], f, &[0; 3], &priors).unwrap();
        assert!((g.value(l).item() - 2.0 * LN_2).abs() < 1e-12);
        let lg = loss_g(&mut g, f, &[0; 3], &priors, GeneratorLoss::NonSaturating).unwrap();
        assert!((g.value(lg).item() - LN_2).abs() < 1e-12);
        let ls = loss_g(&mut g, f, &[0; 3], &priors, GeneratorLoss::Saturating).unwrap();
        assert!((g.value(ls).item() + LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_hits_clamp_floor() {
        let priors = ClassPriors::uniform(1);
        let mut g = Graph::new();
        let r = probs(&mut g, vec![1.0; 5]);
        let f = probs(&mut g, vec![0.0; 5]);
        let l = loss_d(&mut g, r, &[0; 5], f, &[0; 5], &priors).unwrap();
        let v = g.value(l).item();
        assert!(v >= 0.0 && v <= -2.0 * (1.0 - PROB_EPS).ln() + 1e-15);
    }

    #[test]
    fn uniform_priors_give_unweighted_mean() {
        let priors = ClassPriors::uniform(3);
        let real = vec![0.9, 0.2, 0.55, 0.7];
        let fake = vec![0.1, 0.35, 0.6];
        let (ry, fy) = ([0, 2, 1, 1], [2, 0, 0]);
        let mut g = Graph::new();
        let r = probs(&mut g, real.clone());
        let f = probs(&mut g, fake.clone());
        let l = loss_d(&mut g, r, &ry, f, &fy, &priors).unwrap();
        let expected = -real.iter().map(|p: &f64| p.ln()).sum::<f64>() / 4.0
            - fake.iter().map(|p: &f64| (1.0 - p).ln()).sum::<f64>() / 3.0;
        assert!((g.value(l).item() - expected).abs() < 1e-10);
    }

    #[test]
    fn classifier_loss_without_fakes_is_weighted_cross_entropy() {
        let priors = ClassPriors::new(vec![0.7, 0.3], vec![0.5, 0.5], vec![0.7, 0.3]).unwrap();
        let p = vec![0.8, 0.2, 0.4, 0.6, 0.1, 0.9];
        let y = [0, 1, 1];
        let mut g = Graph::new();
        let probs = g.constant(Tensor::new(vec![3, 2], p.clone()).unwrap());
        let l = loss_c(&mut g, probs, &y, None, &priors).unwrap();
        let w = [1.4, 0.6, 0.6];
        let expected = -(w[0] * 0.8f64.ln() + w[1] * 0.6f64.ln() + w[2] * 0.9f64.ln()) / 3.0;
        assert!((g.value(l).item() - expected).abs() < 1e-10);
    }

    #[test]
    fn uniform_classifier_costs_log_n() {
        let priors = ClassPriors::uniform(4);
        let mut g = Graph::new();
        let probs = g.constant(Tensor::full(&[2, 4], 0.25));
        let fake = g.constant(Tensor::full(&[1, 4], 0.25));
        let l = loss_c(&mut g, probs, &[0, 3], Some((fake, &[2])), &priors).unwrap();
        assert!((g.value(l).item() - 2.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_classifier_bound() {
        let priors = ClassPriors::uniform(2);
        let mut g = Graph::new();
        let real = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let fake = g.constant(Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap());
        let l = loss_c(&mut g, real, &[0, 1], Some((fake, &[1])), &priors).unwrap();
        assert!(g.value(l).item() <= -2.0 * (1.0 - PROB_EPS).ln() + 1e-15);
    }

    #[test]
    fn wrong_shapes_and_labels() {
        let priors = ClassPriors::uniform(2);
        let mut g = Graph::new();
        let r = probs(&mut g, vec![0.5; 3]);
        let f = probs(&mut g, vec![0.5; 3]);
        assert!(loss_d(&mut g, r, &[0, 1], f, &[0, 0, 0], &priors).is_err());
        assert!(loss_d(&mut g, r, &[0, 1, 5], f, &[0, 0, 0], &priors).is_err());
    }

    /// Toy generator x = theta, fixed D(x) = sigmoid(a x + b). Both losses'
    /// gradients in closed form: saturating -a D, non-saturating -a (1 - D).
    #[test]
    fn saturating_and_non_saturating_agree_in_direction() {
        let priors = ClassPriors::uniform(1);
        for &(a, b, theta) in &[(1.5, -0.2, 0.3), (-0.7, 0.4, -1.0), (2.0, 1.0, 0.0), (-3.0, -2.0, 0.8)] {
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let dval = sig(a * theta + b);
            let mut grads = Vec::new();
            for mode in [GeneratorLoss::Saturating, GeneratorLoss::NonSaturating] {
                let mut g = Graph::new();
                let th = g.variable(Tensor::from_vec(vec![theta]));
                let logit = g.affine(th, a, b).unwrap();
                let d = g.sigmoid(logit).unwrap();
                let l = loss_g(&mut g, d, &[0], &priors, mode).unwrap();
                let grad = g.backward(l).unwrap().wrt(th).unwrap().item();
                grads.push(grad);
            }
            assert!((grads[0] - (-a * dval)).abs() < 1e-12);
            assert!((grads[1] - (-a * (1.0 - dval))).abs() < 1e-12);
            assert_eq!(grads[0].signum(), grads[1].signum());
        }
    }

    fn dist(mass: Vec<f64>) -> DiscreteDistribution {
        let support = (0..mass.len()).map(|i| vec![i as f64]).collect();
        DiscreteDistribution::new(support, mass).unwrap()
    }

    #[test]
    fn optimal_discriminator_examples() {
        let eq = ClassPriors::uniform(2);
        let d = optimal_discriminator(&dist(vec![0.3, 0.7]), &dist(vec![0.3, 0.7]), &eq, 0).unwrap();
        assert!(d.iter().all(|v| (*v - 0.5).abs() < 1e-15));
        let d = optimal_discriminator(&dist(vec![1.0, 0.0]), &dist(vec![0.0, 1.0]), &eq, 1).unwrap();
        assert_eq!(d, vec![1.0, 0.0]);
        let d = optimal_discriminator(&dist(vec![0.7, 0.3]), &dist(vec![0.2, 0.8]), &eq, 0).unwrap();
        assert!((d[0] - 0.7 / 0.9).abs() < 1e-15);
        assert!((d[1] - 0.3 / 1.1).abs() < 1e-15);
        let d = optimal_discriminator(&dist(vec![1.0, 0.0]), &dist(vec![1.0, 0.0]), &eq, 0).unwrap();
        assert_eq!(d[1], 0.5);
    }

    #[test]
    fn game_value_examples() {
        let eq = ClassPriors::uniform(3);
        let v = game_value_at_optimum(&dist(vec![0.2, 0.5, 0.3]), &dist(vec![0.2, 0.5, 0.3]), &eq, 2).unwrap();
        assert!((v + 2.0 * LN_2).abs() < 1e-12);
        let v = game_value_at_optimum(&dist(vec![0.5, 0.5, 0.0, 0.0]), &dist(vec![0.0, 0.0, 0.4, 0.6]), &eq, 0).unwrap();
        assert!(v.abs() < 1e-12);
        let (pr, pg) = (dist(vec![0.7, 0.3]), dist(vec![0.2, 0.8]));
        let dstar = optimal_discriminator(&pr, &pg, &eq, 1).unwrap();
        let via_objective = discriminator_objective(&dstar, &pr, &pg, &eq, 1).unwrap();
        let via_js = game_value_at_optimum(&pr, &pg, &eq, 1).unwrap();
        assert!((via_objective - via_js).abs() < 1e-12);
    }

    #[test]
    fn priors_validation() {
        assert!(ClassPriors::new(vec![0.5, 0.6], vec![0.5, 0.5], vec![0.5, 0.5]).is_err());
        assert!(ClassPriors::new(vec![1.2, -0.2], vec![0.5, 0.5], vec![0.5, 0.5]).is_err());
        assert!(ClassPriors::new(vec![1.0], vec![0.5, 0.5], vec![0.5, 0.5]).is_err());
    }
}
