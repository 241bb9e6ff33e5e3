//! Correlation-adjusted masking: mask plans, sinusoidal temporal encodings and
//! the rewrite of attention queries for a masked forward pass.
//!
//! Masked queries score their keys with a label-aware embedding `q(y_u)`
//! instead of their own projection; masked keys are dropped from the key list
//! entirely, so their values are never read.

use ndarray::Array1;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{QuerySource, QuerySpec};
use crate::error::{Error, Result};

pub const DEFAULT_MASK_RATIO: f64 = 0.2;

/// `d`-dimensional sinusoidal encoding of `t`: even index `i` holds
/// `sin(t / 10000^(i/d))`, odd index `i` holds `cos(t / 10000^((i-1)/d))`.
pub fn temporal_encoding(t: f64, d: usize) -> Array1<f64> {
    let mut out = Array1::zeros(d);
    for i in (0..d).step_by(2) {
        let angle = t / 10000f64.powf(i as f64 / d as f64);
        out[i] = angle.sin();
        if i + 1 < d {
            out[i + 1] = angle.cos();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingMode {
    /// Label-aware queries, masked keys removed.
    #[default]
    LabelAware,
    /// Shared mask token for masked queries and masked keys.
    SpecialToken,
}

/// Which queries are masked and which keys each query loses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Ascending query indices; row `j` of the label-aware embeddings belongs
    /// to `masked_queries[j]`.
    pub masked_queries: Vec<usize>,
    /// Per query, ascending slot ids removed from its keys.
    pub masked_keys: Vec<Vec<usize>>,
    pub ratio: f64,
    pub seed: u64,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside [0, 1)")));
    }
    Ok(())
}

fn sample_sorted(rng: &mut ChaCha8Rng, n: usize, amount: usize) -> Vec<usize> {
    let mut picked = sample(rng, n, amount.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

fn mask_count(n: usize, ratio: f64) -> usize {
    ((n as f64) * ratio).round() as usize
}

impl MaskPlan {
    pub fn empty(queries: usize) -> Self {
        MaskPlan {
            masked_queries: Vec::new(),
            masked_keys: vec![Vec::new(); queries],
            ratio: 0.0,
            seed: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.masked_queries.is_empty() && self.masked_keys.iter().all(Vec::is_empty)
    }

    /// Plan for node-level tasks where query `i` is node `i` and key slots
    /// are node ids.
    ///
    /// A `ratio` share of the eligible queries (all when `eligible` is `None`)
    /// is masked. Masked query nodes are removed from every key list, and each
    /// query additionally loses an independent `ratio` share of its remaining
    /// keys. A query never loses itself, and never loses all of its keys: the
    /// most recent one survives.
    pub fn for_nodes(queries: &[QuerySpec], ratio: f64, seed: u64, eligible: Option<&[bool]>) -> Result<Self> {
        check_ratio(ratio)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = queries.len();
        let candidates: Vec<usize> = (0..n).filter(|&q| eligible.is_none_or(|e| e[q])).collect();
        let picked = sample_sorted(&mut rng, candidates.len(), mask_count(candidates.len(), ratio));
        let masked_queries: Vec<usize> = picked.iter().map(|&i| candidates[i]).collect();
        let mut is_masked = vec![false; n];
        for &q in &masked_queries {
            is_masked[q] = true;
        }
        let mut masked_keys = Vec::with_capacity(n);
        for (qi, spec) in queries.iter().enumerate() {
            let mut removed: Vec<usize> = Vec::new();
            let mut survivors: Vec<usize> = Vec::new();
            let mut others = 0;
            for (i, key) in spec.keys.iter().enumerate() {
                if key.slot == qi {
                    continue;
                }
                others += 1;
                if key.slot < n && is_masked[key.slot] {
                    removed.push(i);
                } else {
                    survivors.push(i);
                }
            }
            let drop = sample_sorted(&mut rng, survivors.len(), mask_count(survivors.len(), ratio));
            removed.extend(drop.iter().map(|&j| survivors[j]));
            if others > 0 && removed.len() == others {
                let keep = most_recent(spec, qi);
                removed.retain(|&i| i != keep);
            }
            let mut slots: Vec<usize> = removed.iter().map(|&i| spec.keys[i].slot).collect();
            slots.sort_unstable();
            slots.dedup();
            masked_keys.push(slots);
        }
        Ok(MaskPlan {
            masked_queries,
            masked_keys,
            ratio,
            seed,
        })
    }

    /// Plan for one event sequence where every position attends to the
    /// others. A `ratio` share of positions (at least one when `ratio > 0`)
    /// is masked, and masked positions are hidden from every query.
    pub fn for_sequence(len: usize, ratio: f64, seed: u64) -> Result<Self> {
        check_ratio(ratio)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut count = mask_count(len, ratio);
        if ratio > 0.0 && len > 0 {
            count = count.max(1);
        }
        let masked = sample_sorted(&mut rng, len, count);
        Ok(MaskPlan {
            masked_keys: vec![masked.clone(); len],
            masked_queries: masked,
            ratio,
            seed,
        })
    }

    /// Rewrites `queries` for a masked forward pass.
    ///
    /// Label-aware: masked queries read override row `j` and masked keys are
    /// dropped. Special token: masked queries and masked keys are replaced by
    /// the shared token.
    pub fn apply(&self, queries: &[QuerySpec], mode: MaskingMode) -> Result<Vec<QuerySpec>> {
        if self.masked_keys.len() != queries.len() {
            return Err(Error::shape(format!(
                "mask plan covers {} queries, got {}",
                self.masked_keys.len(),
                queries.len()
            )));
        }
        let mut out: Vec<QuerySpec> = queries.to_vec();
        for (owner, spec) in out.iter_mut().enumerate() {
            self.rewrite(owner, spec, mode);
        }
        Ok(out)
    }

    /// Row of the label-aware embeddings for a masked query.
    pub fn override_row(&self, owner: usize) -> Option<usize> {
        self.masked_queries.binary_search(&owner).ok()
    }

    /// Rewrites one query owned by `owner` in place; key slots are matched
    /// against the plan's masked key ids.
    pub fn rewrite(&self, owner: usize, spec: &mut QuerySpec, mode: MaskingMode) {
        if let Some(j) = self.override_row(owner) {
            spec.source = match mode {
                MaskingMode::LabelAware => QuerySource::Override(j),
                MaskingMode::SpecialToken => QuerySource::Token,
            };
        }
        let Some(removed) = self.masked_keys.get(owner) else {
            return;
        };
        if removed.is_empty() {
            return;
        }
        match mode {
            MaskingMode::LabelAware => spec.keys.retain(|k| k.token || removed.binary_search(&k.slot).is_err()),
            MaskingMode::SpecialToken => {
                for k in spec.keys.iter_mut() {
                    if removed.binary_search(&k.slot).is_ok() {
                        k.token = true;
                    }
                }
            }
        }
    }
}

fn most_recent(spec: &QuerySpec, owner: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, k) in spec.keys.iter().enumerate() {
        if k.slot == owner {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let b = &spec.keys[b];
                k.time > b.time || (k.time == b.time && k.slot > b.slot)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::KeyRef;

    #[test]
    fn encoding_at_zero() {
        let te = temporal_encoding(0.0, 6);
        for i in 0..6 {
            assert_eq!(te[i], if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn encoding_first_entry() {
        let te = temporal_encoding(10000.0, 2);
        assert!((te[0] - 10000f64.sin()).abs() < 1e-12);
        // index 0 divides by 10000^0 = 1
        let te = temporal_encoding(1.0, 2);
        assert!((te[0] - 0.8414709848078965).abs() < 1e-12);
    }

    fn chain(n: usize) -> Vec<QuerySpec> {
        (0..n)
            .map(|q| QuerySpec {
                source: QuerySource::Slot(q),
                time: 10.0,
                last_event: 5.0,
                keys: (0..n).filter(|&k| k != q).map(|k| KeyRef::new(k, k as f64, 0)).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_ratio_is_empty() {
        let q = chain(5);
        let plan = MaskPlan::for_nodes(&q, 0.0, 3, None).unwrap();
        assert!(plan.is_empty());
        assert_eq!(plan.apply(&q, MaskingMode::LabelAware).unwrap(), q);
        assert!(MaskPlan::for_sequence(4, 0.0, 1).unwrap().is_empty());
    }

    #[test]
    fn ratio_must_be_below_one() {
        assert!(MaskPlan::for_nodes(&chain(3), 1.0, 0, None).is_err());
        assert!(MaskPlan::for_sequence(3, -0.1, 0).is_err());
    }

    #[test]
    fn guard_keeps_most_recent_key() {
        let q = vec![
            QuerySpec {
                source: QuerySource::Slot(0),
                time: 3.0,
                last_event: 2.0,
                keys: vec![KeyRef::new(1, 2.0, 0)],
            },
            QuerySpec {
                source: QuerySource::Slot(1),
                time: 3.0,
                last_event: 2.0,
                keys: vec![KeyRef::new(0, 2.0, 0)],
            },
        ];
        for seed in 0..20 {
            let plan = MaskPlan::for_nodes(&q, 0.9, seed, None).unwrap();
            let applied = plan.apply(&q, MaskingMode::LabelAware).unwrap();
            assert!(applied.iter().all(|s| s.keys.len() == 1));
        }
    }

    #[test]
    fn special_token_keeps_topology() {
        let q = chain(6);
        let plan = MaskPlan::for_nodes(&q, 0.4, 9, None).unwrap();
        let applied = plan.apply(&q, MaskingMode::SpecialToken).unwrap();
        for (a, b) in applied.iter().zip(&q) {
            assert_eq!(a.keys.len(), b.keys.len());
        }
        for &m in &plan.masked_queries {
            assert_eq!(applied[m].source, QuerySource::Token);
        }
    }

    #[test]
    fn sequence_plan_hides_masked_positions_everywhere() {
        let plan = MaskPlan::for_sequence(10, 0.3, 4).unwrap();
        assert_eq!(plan.masked_queries.len(), 3);
        assert!(plan.masked_keys.iter().all(|m| *m == plan.masked_queries));
        assert_eq!(MaskPlan::for_sequence(2, 0.1, 4).unwrap().masked_queries.len(), 1);
    }
}
