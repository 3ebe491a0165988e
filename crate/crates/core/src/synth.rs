//! Synthetic untrimmed sequences with labelled action intervals and
//! first-stage-like proposals.
//!
//! Units outside actions are `N(bg_level, σ_bg²)` per dimension. Inside an
//! action of class `c` they are `N(μ_c, σ_act²)`, except that the first and
//! last `ramp_frac` of the action blend linearly from the background level
//! into `μ_c`, which makes the exact boundary ambiguous.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::eval::tiou;
use crate::layers::{vap_pool, PooledFeature};
use crate::losses::{Assignment, RegressionTarget, DEFAULT_SIGMA_T2};
use crate::rng;

/// Minimum tIoU with an annotation for a proposal to take its class.
pub const POSITIVE_TIOU: f64 = 0.5;
/// Background proposals are drawn with tIoU below this against every action.
const NEGATIVE_MAX_TIOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub t_min: usize,
    pub t_max: usize,
    pub dim: usize,
    pub classes: usize,
    /// Spread of the class mean vectors around the background level.
    pub signal_scale: f64,
    pub bg_level: f64,
    pub noise_act: f64,
    pub noise_bg: f64,
    pub action_len_min: usize,
    pub action_len_max: usize,
    pub actions_min: usize,
    pub actions_max: usize,
    /// Fraction of the action at each end covered by the blend-in ramp.
    pub ramp_frac: f64,
    /// Standard deviation of proposal boundary jitter as a fraction of the
    /// action length.
    pub jitter: f64,
    pub positives_per_action: usize,
    pub negatives_per_sequence: usize,
    pub min_proposal_len: usize,
    pub sigma_t2: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            t_min: 160,
            t_max: 320,
            dim: 8,
            classes: 5,
            signal_scale: 0.5,
            bg_level: 0.5,
            noise_act: 2.0,
            noise_bg: 2.0,
            action_len_min: 20,
            action_len_max: 60,
            actions_min: 1,
            actions_max: 3,
            ramp_frac: 0.1,
            jitter: 0.4,
            positives_per_action: 4,
            negatives_per_sequence: 4,
            min_proposal_len: 8,
            sigma_t2: DEFAULT_SIGMA_T2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::usage(m.to_string()));
        if self.dim == 0 || self.classes == 0 {
            return bad("dim and classes must be at least 1");
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad("need 1 <= t_min <= t_max");
        }
        if self.action_len_min == 0 || self.action_len_min > self.action_len_max {
            return bad("need 1 <= action_len_min <= action_len_max");
        }
        if self.action_len_max + 2 > self.t_min {
            return bad("t_min must exceed action_len_max + 1");
        }
        if self.actions_min > self.actions_max {
            return bad("actions_min exceeds actions_max");
        }
        if self.min_proposal_len == 0 || self.min_proposal_len > self.t_min {
            return bad("min_proposal_len must be in [1, t_min]");
        }
        let sigmas = [self.noise_act, self.noise_bg, self.jitter, self.signal_scale];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise, jitter and signal scales must be finite and >= 0");
        }
        if !(0.0..0.5).contains(&self.ramp_frac) {
            return bad("ramp_frac must be in [0, 0.5)");
        }
        if !(self.sigma_t2 > 0.0) {
            return bad("sigma_t2 must be positive");
        }
        Ok(())
    }

    /// Mean feature vector of every action class, index `c - 1` for class `c`.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut r = rng::stream(self.seed, &[0xc1a55]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..self.classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| self.bg_level + self.signal_scale * normal.sample(&mut r))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    /// Action class in `1..=C`.
    pub class: usize,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl Annotation {
    pub fn interval(&self) -> (f64, f64) {
        (self.start as f64, self.end as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub id: u32,
    pub len: usize,
    pub dim: usize,
    /// `len × dim`, row-major.
    pub units: Vec<f64>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub seq_id: u32,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    /// 0 for background.
    pub label: usize,
    pub target: Option<RegressionTarget>,
}

impl Proposal {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn assignment(&self) -> Assignment {
        Assignment {
            label: self.label,
            target: self.target,
        }
    }
}

fn noise(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

/// Generates one sequence from its own random stream.
pub fn gen_sequence(config: &SynthConfig, id: u32, seed: u64) -> Result<SyntheticSequence> {
    config.validate()?;
    let means = config.class_means();
    let mut r = rng::stream(seed, &[0x5e9]);
    let len = r.random_range(config.t_min..=config.t_max);

    let mut count = r.random_range(config.actions_min..=config.actions_max);
    let mut lengths: Vec<usize> = (0..count)
        .map(|_| r.random_range(config.action_len_min..=config.action_len_max))
        .collect();
    while count > 0 && lengths.iter().sum::<usize>() + count + 1 > len {
        lengths.pop();
        count -= 1;
    }
    // split the free units into count + 1 gaps, at least one unit between actions
    let free = len - lengths.iter().sum::<usize>() - count.saturating_sub(1);
    let weights: Vec<f64> = (0..=count).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut gaps: Vec<usize> = weights
        .iter()
        .map(|w| (w / total * free as f64).floor() as usize)
        .collect();
    let used: usize = gaps.iter().sum();
    gaps[count] += free - used;

    let mut annotations = Vec::with_capacity(count);
    let mut cursor = 0;
    for (i, &l) in lengths.iter().enumerate() {
        cursor += gaps[i] + usize::from(i > 0);
        let class = r.random_range(1..=config.classes);
        annotations.push(Annotation {
            class,
            start: cursor,
            end: cursor + l,
        });
        cursor += l;
    }

    let bg = noise(config.noise_bg);
    let act = noise(config.noise_act);
    let mut units = Vec::with_capacity(len * config.dim);
    let mut next = annotations.iter().peekable();
    let mut current: Option<&Annotation> = None;
    for t in 0..len {
        if current.is_some_and(|a| t >= a.end) {
            current = None;
        }
        if current.is_none() && next.peek().is_some_and(|a| a.start == t) {
            current = next.next();
        }
        match current {
            None => units.extend((0..config.dim).map(|_| config.bg_level + bg.sample(&mut r))),
            Some(a) => {
                let alen = a.end - a.start;
                let ramp = (config.ramp_frac * alen as f64).floor() as usize;
                let from_start = t - a.start;
                let from_end = a.end - 1 - t;
                let weight = |j: usize| {
                    if j < ramp {
                        (j + 1) as f64 / (ramp + 1) as f64
                    } else {
                        1.0
                    }
                };
                let w = weight(from_start).min(weight(from_end));
                let mu = &means[a.class - 1];
                units.extend(mu.iter().map(|&m| {
                    config.bg_level + w * (m - config.bg_level) + act.sample(&mut r)
                }));
            }
        }
    }

    Ok(SyntheticSequence {
        id,
        len,
        dim: config.dim,
        units,
        annotations,
    })
}

/// Labels an interval with the class of its best-overlapping annotation when
/// that overlap reaches [`POSITIVE_TIOU`], and derives normalized offset
/// targets to it.
pub fn assign(seq: &SyntheticSequence, start: usize, end: usize, sigma_t2: f64) -> (usize, Option<RegressionTarget>) {
    let iv = (start as f64, end as f64);
    let best = seq
        .annotations
        .iter()
        .map(|a| (tiou(iv, a.interval()), a))
        .fold(None::<(f64, &Annotation)>, |acc, cur| match acc {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        });
    match best {
        Some((overlap, a)) if overlap >= POSITIVE_TIOU => {
            let len = (end - start) as f64;
            let target = RegressionTarget::new(
                (a.start as f64 - start as f64) / len,
                (a.end as f64 - end as f64) / len,
                sigma_t2,
            );
            (a.class, Some(target))
        }
        _ => (0, None),
    }
}

fn make_proposal(seq: &SyntheticSequence, start: usize, end: usize, sigma_t2: f64) -> Proposal {
    let (label, target) = assign(seq, start, end, sigma_t2);
    Proposal {
        seq_id: seq.id,
        start,
        end,
        label,
        target,
    }
}

/// Jittered copies of every annotation plus background intervals.
pub fn gen_proposals(seq: &SyntheticSequence, config: &SynthConfig, seed: u64) -> Vec<Proposal> {
    let mut r = rng::stream(seed, &[0x960]);
    let std = Normal::new(0.0, 1.0).unwrap();
    let len = seq.len as i64;
    let min_len = config.min_proposal_len.min(seq.len) as i64;
    let mut out = Vec::new();

    for a in &seq.annotations {
        let alen = (a.end - a.start) as f64;
        for _ in 0..config.positives_per_action {
            let js = (std.sample(&mut r) * config.jitter * alen).round() as i64;
            let je = (std.sample(&mut r) * config.jitter * alen).round() as i64;
            let mut s = (a.start as i64 + js).clamp(0, len);
            let mut e = (a.end as i64 + je).clamp(0, len);
            if s > e {
                std::mem::swap(&mut s, &mut e);
            }
            if e - s < min_len {
                let mid = (s + e) / 2;
                s = (mid - min_len / 2).clamp(0, len - min_len);
                e = s + min_len;
            }
            out.push(make_proposal(seq, s as usize, e as usize, config.sigma_t2));
        }
    }

    let lo = config.action_len_min.min(seq.len);
    let hi = config.action_len_max.min(seq.len).max(lo);
    for _ in 0..config.negatives_per_sequence {
        for _attempt in 0..50 {
            let l = r.random_range(lo..=hi).max(min_len as usize);
            let s = r.random_range(0..=seq.len - l);
            let iv = (s as f64, (s + l) as f64);
            if seq.annotations.iter().all(|a| tiou(iv, a.interval()) < NEGATIVE_MAX_TIOU) {
                out.push(make_proposal(seq, s, s + l, config.sigma_t2));
                break;
            }
        }
    }
    out
}

/// Pools an interval with half its length of context on each side, clipped
/// to the sequence.
pub fn featurize_interval(seq: &SyntheticSequence, start: usize, end: usize, k: usize) -> Result<PooledFeature> {
    if start >= end || end > seq.len {
        return Err(Error::usage(format!(
            "proposal [{start}, {end}) lies outside sequence {} of length {}",
            seq.id, seq.len
        )));
    }
    let len = end - start;
    if len < k {
        return Err(Error::usage(format!(
            "proposal [{start}, {end}) of sequence {} has {len} units, fewer than k = {k}",
            seq.id
        )));
    }
    let ctx = len / 2;
    let before = ctx.min(start);
    let after = ctx.min(seq.len - end);
    let rows = &seq.units[(start - before) * seq.dim..(end + after) * seq.dim];
    vap_pool(rows, seq.dim, k, before, after)
}

pub fn featurize(seq: &SyntheticSequence, proposal: &Proposal, k: usize) -> Result<PooledFeature> {
    featurize_interval(seq, proposal.start, proposal.end, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> SynthConfig {
        SynthConfig {
            noise_act: 0.0,
            noise_bg: 0.0,
            jitter: 0.0,
            ..SynthConfig::default()
        }
    }

    fn seq_from(units: Vec<f64>, annotations: Vec<Annotation>) -> SyntheticSequence {
        SyntheticSequence {
            id: 0,
            len: units.len(),
            dim: 1,
            units,
            annotations,
        }
    }

    #[test]
    fn noiseless_units_are_piecewise_constant() {
        let cfg = noiseless();
        let means = cfg.class_means();
        for id in 0..5 {
            let s = gen_sequence(&cfg, id, 100 + id as u64).unwrap();
            assert!(!s.annotations.is_empty());
            let mut inside = vec![false; s.len];
            for a in &s.annotations {
                let ramp = (cfg.ramp_frac * (a.end - a.start) as f64).floor() as usize;
                for t in a.start..a.end {
                    inside[t] = true;
                    if t >= a.start + ramp && t + ramp < a.end {
                        assert_eq!(&s.units[t * cfg.dim..(t + 1) * cfg.dim], &means[a.class - 1][..]);
                    }
                }
            }
            for (t, &ins) in inside.iter().enumerate() {
                if !ins {
                    assert!(s.units[t * cfg.dim..(t + 1) * cfg.dim].iter().all(|&u| u == cfg.bg_level));
                }
            }
        }
    }

    #[test]
    fn annotations_are_ordered_and_disjoint() {
        let cfg = SynthConfig::default();
        for id in 0..50 {
            let s = gen_sequence(&cfg, id, id as u64).unwrap();
            for a in &s.annotations {
                assert!(a.start < a.end && a.end <= s.len);
            }
            for w in s.annotations.windows(2) {
                assert!(w[0].end < w[1].start);
            }
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = SynthConfig::default();
        assert_eq!(gen_sequence(&cfg, 1, 9).unwrap(), gen_sequence(&cfg, 1, 9).unwrap());
        assert_ne!(gen_sequence(&cfg, 1, 9).unwrap(), gen_sequence(&cfg, 1, 10).unwrap());
    }

    #[test]
    fn class_means_are_recovered_by_sampling() {
        // 10⁴ plateau units of one class: sample mean within 4 standard errors
        let cfg = SynthConfig {
            t_min: 10_100,
            t_max: 10_100,
            action_len_min: 10_000,
            action_len_max: 10_000,
            actions_min: 1,
            actions_max: 1,
            ramp_frac: 0.0,
            ..SynthConfig::default()
        };
        let s = gen_sequence(&cfg, 0, 3).unwrap();
        let a = s.annotations[0];
        let mu = &cfg.class_means()[a.class - 1];
        let n = (a.end - a.start) as f64;
        let se = cfg.noise_act / n.sqrt();
        for d in 0..cfg.dim {
            let mean = (a.start..a.end).map(|t| s.units[t * cfg.dim + d]).sum::<f64>() / n;
            assert!((mean - mu[d]).abs() < 4.0 * se, "dim {d}: {mean} vs {}", mu[d]);
        }
    }

    #[test]
    fn zero_jitter_proposals_match_annotations() {
        let cfg = noiseless();
        let s = gen_sequence(&cfg, 0, 42).unwrap();
        let props = gen_proposals(&s, &cfg, 7);
        let positives: Vec<_> = props.iter().filter(|p| p.label != 0).collect();
        assert_eq!(positives.len(), s.annotations.len() * cfg.positives_per_action);
        for p in positives {
            let a = s.annotations.iter().find(|a| a.start == p.start && a.end == p.end).unwrap();
            assert_eq!(p.label, a.class);
            let t = p.target.unwrap();
            assert_eq!((t.start.mu, t.end.mu), (0.0, 0.0));
            assert_eq!(t.start.sigma2, cfg.sigma_t2);
        }
    }

    #[test]
    fn labels_follow_overlap_rule() {
        let s = seq_from(vec![0.0; 40], vec![Annotation { class: 2, start: 5, end: 15 }]);
        // [0,10) vs [5,15): intersection 5, union 15
        assert_eq!(assign(&s, 0, 10, 0.01), (0, None));
        assert_eq!(assign(&s, 20, 30, 0.01), (0, None));
        let (label, target) = assign(&s, 6, 16, 0.01);
        assert_eq!(label, 2);
        let t = target.unwrap();
        assert!((t.start.mu + 0.1).abs() < 1e-15 && (t.end.mu + 0.1).abs() < 1e-15);
    }

    #[test]
    fn labels_do_not_depend_on_proposal_order() {
        let cfg = SynthConfig::default();
        let s = gen_sequence(&cfg, 0, 5).unwrap();
        let props = gen_proposals(&s, &cfg, 5);
        let forward: Vec<_> = props.iter().map(|p| assign(&s, p.start, p.end, 0.01)).collect();
        let backward: Vec<_> = props.iter().rev().map(|p| assign(&s, p.start, p.end, 0.01)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
        for (p, a) in props.iter().zip(&forward) {
            assert_eq!((p.label, p.target), *a);
        }
    }

    #[test]
    fn featurize_contexts() {
        let s = seq_from((0..9).map(|i| i as f64).collect(), vec![]);
        let f = featurize_interval(&s, 0, 9, 3).unwrap();
        assert_eq!(f.block(0), (&[0.0][..], &[0.0][..]));
        assert_eq!(f.block(4), (&[0.0][..], &[0.0][..]));
        assert_eq!(&f.moments.means[1..4], &[1.0, 4.0, 7.0]);

        let flat = seq_from(vec![2.0; 30], vec![]);
        let f = featurize_interval(&flat, 10, 20, 3).unwrap();
        assert!(f.moments.variances.iter().all(|v| *v == 0.0));
        assert_eq!(f.block(0).0, &[2.0]);

        assert!(matches!(featurize_interval(&flat, 10, 12, 3), Err(Error::Usage(_))));
        assert!(featurize_interval(&flat, 25, 31, 3).is_err());
    }
}

crate::config::key_value!(SynthConfig {
    seed,
    t_min,
    t_max,
    dim,
    classes,
    signal_scale,
    bg_level,
    noise_act,
    noise_bg,
    action_len_min,
    action_len_max,
    actions_min,
    actions_max,
    ramp_frac,
    jitter,
    positives_per_action,
    negatives_per_sequence,
    min_proposal_len,
    sigma_t2,
});
