//! Canonical response functions.
//!
//! A variable with `k` parents takes one of the `2^(2^k)` boolean functions of
//! those parents. Function `f` is stored as a truth table: bit `c` of `f` is the
//! output on parent configuration `c = Σ parent[t]·2^t`, parents in ascending
//! variable order.
//!
//! Within a margin every variable has all earlier margin variables as parents.
//! A joint response index concatenates the truth tables of the margin
//! variables, the first variable in the least significant position, so the
//! digit of the variable at position `t` occupies `2^t` bits starting at bit
//! `2^t - 1`.

use crate::error::{Error, Result};
use crate::model::{MarginSpec, Regime};

pub const MAX_PARENTS: usize = 5;

/// Number of boolean functions of `k` inputs.
pub fn response_space_size(k: usize) -> Result<u64> {
    if k > MAX_PARENTS {
        return Err(Error::UnsupportedArity(format!(
            "{k} parents exceed the cap of {MAX_PARENTS}"
        )));
    }
    Ok(1u64 << (1u32 << k))
}

/// Output of function `function_index` on the given parent values.
pub fn eval_response(function_index: u64, parent_values: &[u8]) -> u8 {
    let config = parent_values
        .iter()
        .enumerate()
        .fold(0usize, |c, (t, &v)| c | ((v as usize & 1) << t));
    eval_response_config(function_index, config)
}

#[inline]
pub fn eval_response_config(function_index: u64, config: usize) -> u8 {
    ((function_index >> config) & 1) as u8
}

/// Index space of joint response functions for one margin.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseSpace {
    pub margin: MarginSpec,
    pub per_var_parent_counts: Vec<usize>,
    pub per_var_radix: Vec<u64>,
    pub total_size: u64,
}

impl ResponseSpace {
    pub fn new(margin: &MarginSpec) -> Result<Self> {
        let per_var_parent_counts: Vec<usize> = (0..margin.vars.len()).collect();
        let per_var_radix = per_var_parent_counts
            .iter()
            .map(|&k| response_space_size(k))
            .collect::<Result<Vec<_>>>()?;
        let total_bits: u32 = per_var_parent_counts.iter().map(|&k| 1u32 << k).sum();
        if total_bits >= 64 {
            return Err(Error::UnsupportedArity(format!(
                "margin {} needs 2^{total_bits} joint response functions",
                margin.name()
            )));
        }
        Ok(Self {
            margin: margin.clone(),
            per_var_parent_counts,
            per_var_radix,
            total_size: 1u64 << total_bits,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.margin.vars.len()
    }

    /// Number of joint indices as `usize`, refusing spaces too large to enumerate.
    pub fn enumerable_size(&self, cap: u64) -> Result<usize> {
        if self.total_size > cap {
            return Err(Error::TooLarge(format!(
                "margin {} has {} joint response functions (cap {cap})",
                self.margin.name(),
                self.total_size
            )));
        }
        Ok(self.total_size as usize)
    }

    /// Truth table of the variable at margin position `t`.
    #[inline]
    pub fn digit(&self, r: u64, t: usize) -> u64 {
        let width = 1u32 << t;
        let offset = width - 1;
        (r >> offset) & ((1u64 << width) - 1)
    }

    pub fn decode(&self, r: u64) -> Vec<u64> {
        (0..self.n_vars()).map(|t| self.digit(r, t)).collect()
    }

    pub fn encode(&self, digits: &[u64]) -> u64 {
        digits
            .iter()
            .enumerate()
            .fold(0u64, |acc, (t, &d)| acc | (d << ((1u32 << t) - 1)))
    }

    /// Values of the margin variables under `r`, as local bits (bit `t` is the
    /// variable at margin position `t`). `forced_mask`/`forced_bits` are local too.
    #[inline]
    pub fn propagate_local(&self, r: u64, forced_mask: usize, forced_bits: usize) -> usize {
        let mut vals = 0usize;
        for t in 0..self.n_vars() {
            let bit = 1usize << t;
            let v = if forced_mask & bit != 0 {
                forced_bits & bit
            } else {
                (eval_response_config(self.digit(r, t), vals & (bit - 1)) as usize) << t
            };
            vals |= v;
        }
        vals
    }

    /// Translate a regime over global variables to local (mask, bits).
    /// Fails if the regime touches a variable outside the margin.
    pub fn local_forcing(&self, regime: &Regime) -> Result<(usize, usize)> {
        let mut mask = 0;
        let mut bits = 0;
        for (v, x) in regime.interventions.iter() {
            let t = self
                .margin
                .position(v)
                .ok_or_else(|| Error::RegimeOutsideMargin {
                    margin: self.margin.id,
                    regime: regime.clone(),
                })?;
            mask |= 1 << t;
            bits |= (x as usize) << t;
        }
        Ok((mask, bits))
    }
}

/// Values of the margin variables (in margin order) implied by joint response
/// `r` under `regime`.
pub fn propagate(space: &ResponseSpace, r: u64, regime: &Regime) -> Result<Vec<u8>> {
    let (mask, bits) = space.local_forcing(regime)?;
    let vals = space.propagate_local(r, mask, bits);
    Ok((0..space.n_vars()).map(|t| ((vals >> t) & 1) as u8).collect())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::model::VariableId;

    #[test]
    fn space_sizes() {
        assert_eq!(response_space_size(0).unwrap(), 2);
        assert_eq!(response_space_size(2).unwrap(), 16);
        assert!(matches!(response_space_size(6), Err(Error::UnsupportedArity(_))));
    }

    #[test]
    fn three_input_count_matches_enumeration() {
        // Brute force: every map {0,1}^3 -> {0,1} as a vector of 8 outputs.
        let mut tables = BTreeSet::new();
        for outputs in 0..(1u32 << 8) {
            let table: Vec<u8> = (0..8).map(|c| ((outputs >> c) & 1) as u8).collect();
            tables.insert(table);
        }
        assert_eq!(response_space_size(3).unwrap(), tables.len() as u64);
        assert_eq!(tables.len(), 256);
    }

    #[test]
    fn truth_tables_are_exhaustive() {
        for k in 0..=3usize {
            let n_configs = 1usize << k;
            let size = response_space_size(k).unwrap();
            let produced: BTreeSet<Vec<u8>> = (0..size)
                .map(|f| {
                    (0..n_configs)
                        .map(|c| {
                            let parents: Vec<u8> = (0..k).map(|t| ((c >> t) & 1) as u8).collect();
                            eval_response(f, &parents)
                        })
                        .collect()
                })
                .collect();
            assert_eq!(produced.len() as u64, size, "k={k}");
        }
    }

    #[test]
    fn named_functions() {
        assert_eq!(eval_response(0, &[1, 0, 1]), 0);
        assert_eq!(eval_response(3, &[0]), 1);
        assert_eq!(eval_response(3, &[1]), 1);
        assert_eq!(eval_response(6, &[0, 0]), 0);
        assert_eq!(eval_response(6, &[1, 0]), 1);
        assert_eq!(eval_response(6, &[0, 1]), 1);
        assert_eq!(eval_response(6, &[1, 1]), 0);
    }

    #[test]
    fn response_space_of_three_var_margin() {
        let s = ResponseSpace::new(&MarginSpec::new(1, [0, 1, 3])).unwrap();
        assert_eq!(s.per_var_parent_counts, vec![0, 1, 2]);
        assert_eq!(s.per_var_radix, vec![2, 4, 16]);
        assert_eq!(s.total_size, 128);
    }

    #[test]
    fn hand_propagated_examples() {
        let s = ResponseSpace::new(&MarginSpec::new(1, [0, 1, 2])).unwrap();
        // constant-1, identity (truth table 10b = 2), AND (1000b = 8)
        let r = s.encode(&[1, 2, 8]);
        assert_eq!(propagate(&s, r, &Regime::observational()).unwrap(), vec![1, 1, 1]);
        let do_b0 = Regime::new([(VariableId(1), 0)]).unwrap();
        assert_eq!(propagate(&s, r, &do_b0).unwrap(), vec![1, 0, 0]);
        let outside = Regime::new([(VariableId(3), 0)]).unwrap();
        assert!(propagate(&s, r, &outside).is_err());
    }

    #[test]
    fn two_var_margin_matches_direct_truth_tables() {
        let s = ResponseSpace::new(&MarginSpec::new(1, [0, 1])).unwrap();
        let regimes = [
            Regime::observational(),
            Regime::new([(VariableId(0), 0)]).unwrap(),
            Regime::new([(VariableId(0), 1)]).unwrap(),
        ];
        for r in 0..8u64 {
            let fa = r & 1;
            let fb = (r >> 1) & 3;
            for regime in &regimes {
                let a = regime.get(VariableId(0)).unwrap_or(fa as u8);
                let b = ((fb >> a) & 1) as u8;
                assert_eq!(propagate(&s, r, regime).unwrap(), vec![a, b]);
            }
        }
    }

    proptest! {
        #[test]
        fn mixed_radix_round_trip(r in 0u64..128) {
            let s = ResponseSpace::new(&MarginSpec::new(1, [0, 1, 2])).unwrap();
            let digits = s.decode(r);
            for (d, radix) in digits.iter().zip(&s.per_var_radix) {
                prop_assert!(*d < *radix);
            }
            prop_assert_eq!(s.encode(&digits), r);
        }

        #[test]
        fn full_intervention_ignores_response(r in 0u64..32768, forced in 0usize..16) {
            let s = ResponseSpace::new(&MarginSpec::new(1, [0, 1, 2, 3])).unwrap();
            let regime = Regime::from_assignment(crate::model::Assignment::from_bits(&s.margin.vars, forced));
            let vals = propagate(&s, r, &regime).unwrap();
            let bits = vals.iter().enumerate().fold(0usize, |b, (t, &v)| b | ((v as usize) << t));
            prop_assert_eq!(bits, forced);
        }
    }
}
