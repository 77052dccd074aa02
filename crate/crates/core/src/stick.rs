//! Truncated stick-breaking machinery shared by the two mixture samplers.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shape and rate of the Gamma prior on the concentration parameter.
pub const ALPHA_PRIOR_SHAPE: f64 = 0.25;
pub const ALPHA_PRIOR_RATE: f64 = 0.25;

/// Classes added whenever every class is occupied.
pub const K_GROWTH_STEP: usize = 10;

/// Upper clamp on stick proportions `V_k`, `k < K`, so that `ln(1 - V_k)`
/// stays finite in the concentration update.
const V_MAX: f64 = 1.0 - 1e-12;

/// Mixture weights `pi_k = V_k prod_{h<k} (1 - V_h)`.
pub fn stick_break(v: &[f64]) -> Result<Vec<f64>> {
    match v.last() {
        None => return Err(Error::InvalidArgument("empty stick vector".into())),
        Some(&last) if last != 1.0 => {
            return Err(Error::InvalidArgument(format!("last stick proportion is {last}, must be 1")))
        }
        _ => {}
    }
    if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidArgument(format!("stick proportion {bad} outside [0,1]")));
    }
    let mut remaining = 1.0;
    let mut pi = Vec::with_capacity(v.len());
    for &vk in v {
        pi.push(vk * remaining);
        remaining *= 1.0 - vk;
    }
    Ok(pi)
}

/// Draws `V_k ~ Beta(1 + n_k, alpha + sum_{h>k} n_h)` for `k < K`; `V_K = 1`.
pub fn sample_sticks(counts: &[usize], alpha: f64, rng: &mut Rng) -> Vec<f64> {
    let k = counts.len();
    let mut tail: usize = counts.iter().sum();
    let mut v = Vec::with_capacity(k);
    for &nk in &counts[..k - 1] {
        tail -= nk;
        let beta = Beta::new(1.0 + nk as f64, alpha + tail as f64).expect("positive beta parameters");
        v.push(beta.sample(rng).clamp(0.0, V_MAX));
    }
    v.push(1.0);
    v
}

/// Draws the concentration parameter from its Gamma full conditional,
/// `Gamma(a + K - 1, b - sum_{k<K} ln(1 - V_k))` in shape/rate form.
pub fn sample_alpha(v: &[f64], rng: &mut Rng) -> f64 {
    let k = v.len();
    let log_sum: f64 = v[..k - 1].iter().map(|&x| (1.0 - x).ln()).sum();
    let shape = ALPHA_PRIOR_SHAPE + (k - 1) as f64;
    let rate = ALPHA_PRIOR_RATE - log_sum;
    if shape <= 0.0 || k == 1 {
        // K = 1: alpha is unconstrained by the data; draw from the prior.
        return Gamma::new(ALPHA_PRIOR_SHAPE, 1.0 / ALPHA_PRIOR_RATE)
            .expect("valid gamma")
            .sample(rng)
            .max(1e-300);
    }
    Gamma::new(shape, 1.0 / rate)
        .expect("valid gamma")
        .sample(rng)
        .max(1e-300)
}

/// Draws an index with probability proportional to `weights`.
pub fn sample_index(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    // Rounding left u past the last positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Draws an index from unnormalised log weights, overwriting them.
pub fn sample_log_index(log_weights: &mut [f64], rng: &mut Rng) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for w in log_weights.iter_mut() {
        *w = (*w - max).exp();
    }
    sample_index(log_weights, rng)
}

/// Per-class occupancy counts for labels in `0..k`.
pub fn occupancy(z: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &zi in z {
        counts[zi] += 1;
    }
    counts
}

/// Metropolis swaps of class labels with the sticks integrated out.
///
/// Given the labels, the truncated stick-breaking prior depends on the
/// order of the class sizes only through
/// `prod_k B(1 + n_k, alpha + m_k)`, where `m_k` counts rows in later
/// classes. Swapping two labels leaves the likelihood unchanged, so each
/// proposal is accepted on that ratio alone; the sticks must be redrawn
/// from their conditional afterwards. Returns `map[old] = new` when any
/// swap was accepted; `counts` is updated in place.
pub fn label_swaps(counts: &mut [usize], alpha: f64, rng: &mut Rng) -> Option<Vec<usize>> {
    let k = counts.len();
    if k < 2 {
        return None;
    }
    // holder[label] = original class now carrying that label.
    let mut holder: Vec<usize> = (0..k).collect();
    let mut moved = false;
    let mut current = order_log_prior(counts, alpha);
    for j in 0..k {
        let l = rng.random_range(0..k - 1);
        let l = if l >= j { l + 1 } else { l };
        if counts[j] == counts[l] {
            continue;
        }
        counts.swap(j, l);
        let proposed = order_log_prior(counts, alpha);
        if rng.random::<f64>().ln() < proposed - current {
            holder.swap(j, l);
            current = proposed;
            moved = true;
        } else {
            counts.swap(j, l);
        }
    }
    moved.then(|| {
        let mut map = vec![0; k];
        for (label, &orig) in holder.iter().enumerate() {
            map[orig] = label;
        }
        map
    })
}

fn order_log_prior(counts: &[usize], alpha: f64) -> f64 {
    let mut later: usize = counts.iter().sum();
    let mut s = 0.0;
    for &n in &counts[..counts.len() - 1] {
        later -= n;
        let (n, m) = (n as f64, later as f64);
        s += ln_gamma(1.0 + n) + ln_gamma(alpha + m) - ln_gamma(1.0 + alpha + n + m);
    }
    s
}

/// Moves `items[old]` to position `map[old]`.
pub fn permute<T>(items: &mut Vec<T>, map: &[usize]) {
    let mut slots: Vec<Option<T>> = (0..items.len()).map(|_| None).collect();
    for (old, item) in items.drain(..).enumerate() {
        slots[map[old]] = Some(item);
    }
    items.extend(slots.into_iter().map(|x| x.expect("map is a permutation")));
}

/// One row of a sampler convergence trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTrace {
    pub sweep: usize,
    pub classes: usize,
    pub occupied: usize,
    pub alpha: f64,
    /// `P(Y_j = 1)` under the current mixture, one per variable; invariant
    /// to label switching.
    pub marginals: Vec<f64>,
}

pub fn write_trace_csv(trace: &[SweepTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let p = trace.first().map_or(0, |t| t.marginals.len());
    let mut header = String::from("sweep,classes,occupied,alpha");
    for j in 0..p {
        header.push_str(&format!(",p{}_level1", j + 1));
    }
    let mut write = || -> std::io::Result<()> {
        writeln!(f, "{header}")?;
        for t in trace {
            write!(f, "{},{},{},{}", t.sweep, t.classes, t.occupied, t.alpha)?;
            for m in &t.marginals {
                write!(f, ",{m}")?;
            }
            writeln!(f)?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Evenly spaced sweep indices in `(burn_in, n_iter]` at which completed
/// datasets are saved.
pub fn save_points(n_iter: usize, burn_in: usize, l: usize) -> Result<Vec<usize>> {
    if burn_in >= n_iter {
        return Err(Error::InvalidArgument(format!("burn-in {burn_in} must be below {n_iter} iterations")));
    }
    let span = n_iter - burn_in;
    if l == 0 || l > span {
        return Err(Error::InvalidArgument(format!(
            "cannot save {l} draws from {span} post-burn-in sweeps"
        )));
    }
    let gap = span / l;
    Ok((1..=l).map(|s| burn_in + s * gap).collect())
}

#[cfg(test)]
mod tests {
    #[test]
    fn label_swaps_move_big_classes_forward() {
        let mut rng = crate::rng::from_seed(8);
        let mut counts = vec![0, 0, 3, 97];
        let mut items = vec!['a', 'b', 'c', 'd'];
        let mut front = 0;
        for _ in 0..200 {
            if let Some(map) = label_swaps(&mut counts, 0.5, &mut rng) {
                permute(&mut items, &map);
            }
            assert_eq!(counts.iter().sum::<usize>(), 100);
            assert_eq!(counts[items.iter().position(|&c| c == 'd').unwrap()], 97);
            front += usize::from(counts[0] == 97);
        }
        assert!(front > 180, "big class in front {front} of 200 times");
    }

    #[test]
    fn order_prior_matches_stick_integral() {
        // Two classes, sizes (2, 1): E[V^2 (1 - V)] under V ~ Beta(1, a) equals
        // a * B(3, a + 1); with K = 2 the last stick is 1.
        let a: f64 = 0.7;
        let direct = (a * statrs::function::beta::beta(3.0, a + 1.0)).ln();
        let ours = order_log_prior(&[2, 1], a) - (ln_gamma(1.0) + ln_gamma(a) - ln_gamma(1.0 + a));
        assert!((direct - ours).abs() < 1e-12);
    }

    #[test]
    fn permute_moves_items() {
        let mut v = vec![10, 20, 30];
        permute(&mut v, &[2, 0, 1]);
        assert_eq!(v, vec![20, 30, 10]);
    }

    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn stick_break_examples() {
        assert_eq!(stick_break(&[1.0]).unwrap(), vec![1.0]);
        let pi = stick_break(&[0.4, 0.5, 1.0]).unwrap();
        for (a, b) in pi.iter().zip([0.4, 0.3, 0.3]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(stick_break(&[0.4, 0.5]).is_err());
    }

    #[test]
    fn sticks_produce_normalised_weights() {
        let mut rng = from_seed(3);
        for _ in 0..100 {
            let v = sample_sticks(&[5, 0, 3, 0, 0, 1], 0.7, &mut rng);
            let pi = stick_break(&v).unwrap();
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn save_points_are_evenly_spaced() {
        assert_eq!(save_points(20, 10, 5).unwrap(), vec![12, 14, 16, 18, 20]);
        assert!(save_points(10, 10, 1).is_err());
        assert!(save_points(12, 10, 3).is_err());
    }

    #[test]
    fn sample_index_respects_zero_weights() {
        let mut rng = from_seed(1);
        for _ in 0..1000 {
            assert_eq!(sample_index(&[0.0, 2.0, 0.0], &mut rng), 1);
        }
    }
}
