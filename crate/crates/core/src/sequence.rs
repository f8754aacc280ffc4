//! Maximal-length shift-register sequences and their window lookup.
//!
//! Register convention (Fibonacci form): bit `i` of the register holds the
//! sequence element `s[k + i]`. On every clock the feedback bit
//! `s[k] ^ XOR{ s[k + t] : t in taps, t < n }` is shifted in at the most
//! significant end, the register shifts right, and the new least-significant
//! bit is emitted. The taps `{n, t1, t2, ...}` are the exponents of the
//! characteristic polynomial `x^n + x^t1 + x^t2 + ... + 1`.
//!
//! Windows are read cyclically and packed most-significant-bit first: the
//! window starting at `p` has value `s[p] s[p+1] ... s[p+n-1]` in binary.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One primitive polynomial per register length, as tap lists.
const DEFAULT_TAPS: [&[u32]; 15] = [
    &[2, 1],
    &[3, 2],
    &[4, 1],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 11, 10, 4],
    &[13, 4, 3, 1],
    &[14, 5, 3, 1],
    &[15, 14],
    &[16, 15, 13, 4],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LfsrSpec {
    pub n: u32,
    pub taps: Vec<u32>,
    pub seed: u32,
}

impl LfsrSpec {
    /// Built-in primitive polynomial for `n`, seeded with `1`.
    pub fn default_for(n: u32) -> Result<Self> {
        if !(2..=16).contains(&n) {
            return Err(Error::InvalidArgument(format!(
                "register length {n} outside 2..=16"
            )));
        }
        Ok(Self {
            n,
            taps: DEFAULT_TAPS[(n - 2) as usize].to_vec(),
            seed: 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.n) {
            return Err(Error::InvalidArgument(format!(
                "register length {} outside 2..=16",
                self.n
            )));
        }
        if self.seed == 0 || self.seed >= (1 << self.n) {
            return Err(Error::InvalidArgument(format!(
                "seed {} must be a nonzero {}-bit value",
                self.seed, self.n
            )));
        }
        if !self.taps.contains(&self.n) {
            return Err(Error::InvalidArgument(format!(
                "taps {:?} must include {}",
                self.taps, self.n
            )));
        }
        if let Some(t) = self.taps.iter().find(|&&t| t == 0 || t > self.n) {
            return Err(Error::InvalidArgument(format!(
                "tap {t} outside 1..={}",
                self.n
            )));
        }
        Ok(())
    }

    fn feedback_mask(&self) -> u32 {
        // tap n reads bit 0, tap t < n reads bit t
        self.taps
            .iter()
            .fold(0, |m, &t| if t == self.n { m | 1 } else { m ^ (1 << t) })
    }
}

/// Tap lists of the shipped polynomials, each checked for maximal period once.
pub fn default_polynomials() -> &'static [LfsrSpec] {
    static TABLE: OnceLock<Vec<LfsrSpec>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (2..=16)
            .map(|n| {
                let spec = LfsrSpec::default_for(n).expect("n in range");
                generate_msequence(&spec).expect("shipped polynomial must be primitive");
                spec
            })
            .collect()
    })
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitSequence {
    bits: Vec<bool>,
}

impl BitSequence {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// Element at `i` modulo the sequence length.
    #[inline]
    pub fn cyclic(&self, i: usize) -> bool {
        self.bits[i % self.bits.len()]
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Packed value of the cyclic window of `n` bits starting at `pos`.
    pub fn window_value(&self, pos: usize, n: u32) -> u32 {
        (0..n as usize).fold(0, |v, i| (v << 1) | self.cyclic(pos + i) as u32)
    }
}

impl fmt::Debug for BitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitSequence(\"{self}\")")
    }
}

impl fmt::Display for BitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Runs the register for one full period and checks that the period is
/// exactly `2^n - 1`.
pub fn generate_msequence(spec: &LfsrSpec) -> Result<BitSequence> {
    spec.validate()?;
    let n = spec.n;
    let expected = (1usize << n) - 1;
    let mask = spec.feedback_mask();
    let mut state = spec.seed;
    let mut bits = Vec::with_capacity(expected);
    for step in 1..=expected {
        let fb = (state & mask).count_ones() & 1;
        state = (state >> 1) | (fb << (n - 1));
        bits.push(state & 1 == 1);
        if state == spec.seed && step < expected {
            return Err(Error::NonPrimitiveTaps {
                n,
                taps: spec.taps.clone(),
                period: step,
                expected,
            });
        }
    }
    if state != spec.seed {
        // the seed lies on a transient, which cannot happen for a valid
        // feedback polynomial with nonzero constant term; report it anyway
        return Err(Error::NonPrimitiveTaps {
            n,
            taps: spec.taps.clone(),
            period: 0,
            expected,
        });
    }
    Ok(BitSequence::new(bits))
}

/// Lookup from every cyclic `n`-bit window to its start position.
#[derive(Debug, Clone)]
pub struct WindowIndex {
    n: u32,
    table: Vec<u32>,
    sequence: BitSequence,
}

const NO_POSITION: u32 = u32::MAX;

impl WindowIndex {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn sequence(&self) -> &BitSequence {
        &self.sequence
    }

    /// Start position of the window with packed value `value`.
    pub fn position(&self, value: u32) -> Option<usize> {
        self.table
            .get(value as usize)
            .filter(|&&p| p != NO_POSITION)
            .map(|&p| p as usize)
    }

    /// Positions whose cyclic window of `window.len()` bits (any length
    /// `>= n`) agrees with every known bit.
    pub fn decode_span(&self, window: &[Option<bool>]) -> Vec<usize> {
        let n = self.n as usize;
        if window.len() < n {
            return Vec::new();
        }
        // seed candidates from the n-bit sub-window with the fewest unknowns
        let start = (0..=window.len() - n)
            .min_by_key(|&o| window[o..o + n].iter().filter(|b| b.is_none()).count())
            .unwrap_or(0);
        let len = self.sequence.len();
        let mut out: Vec<usize> = decode_window(self, &window[start..start + n])
            .into_iter()
            .map(|p| (p + len - start % len) % len)
            .filter(|&p| {
                window
                    .iter()
                    .enumerate()
                    .all(|(i, b)| b.is_none_or(|b| self.sequence.cyclic(p + i) == b))
            })
            .collect();
        out.sort_unstable();
        out
    }
}

pub fn build_window_index(seq: &BitSequence, n: u32) -> Result<WindowIndex> {
    if !(2..=16).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "window length {n} outside 2..=16"
        )));
    }
    if seq.len() != (1usize << n) - 1 {
        return Err(Error::InvalidArgument(format!(
            "sequence of length {} is not an m-sequence for n={n}",
            seq.len()
        )));
    }
    let mut table = vec![NO_POSITION; 1 << n];
    for p in 0..seq.len() {
        let v = seq.window_value(p, n);
        let slot = &mut table[v as usize];
        if *slot != NO_POSITION {
            return Err(Error::DuplicateWindow {
                window: v,
                first: *slot as usize,
                second: p,
            });
        }
        *slot = p as u32;
    }
    Ok(WindowIndex {
        n,
        table,
        sequence: seq.clone(),
    })
}

/// All positions whose stored window matches every known bit of `window`
/// (`None` marks an unknown bit). An empty result signals a decode failure.
pub fn decode_window(index: &WindowIndex, window: &[Option<bool>]) -> Vec<usize> {
    if window.len() != index.n as usize {
        return Vec::new();
    }
    let unknown: Vec<usize> = window
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_none())
        .map(|(i, _)| i)
        .collect();
    let n = index.n as usize;
    let base = window
        .iter()
        .enumerate()
        .fold(0u32, |v, (i, b)| v | ((b.unwrap_or(false) as u32) << (n - 1 - i)));
    let mut out: Vec<usize> = (0u32..1 << unknown.len())
        .filter_map(|combo| {
            let v = unknown.iter().enumerate().fold(base, |v, (k, &i)| {
                v | (((combo >> k) & 1) << (n - 1 - i))
            });
            index.position(v)
        })
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct recurrence s[k+n] = s[k] ^ XOR s[k+t] over t < n, started from
    /// the register contents, with no bit packing involved.
    fn recurrence_oracle(spec: &LfsrSpec, len: usize) -> Vec<bool> {
        let n = spec.n as usize;
        let mut s: Vec<bool> = (0..n).map(|i| (spec.seed >> i) & 1 == 1).collect();
        while s.len() < len + 1 {
            let k = s.len() - n;
            let mut b = s[k];
            for &t in &spec.taps {
                if (t as usize) < n {
                    b ^= s[k + t as usize];
                }
            }
            s.push(b);
        }
        // the register emits s[1], s[2], ...
        s[1..=len].to_vec()
    }

    fn parse(s: &str) -> Vec<Option<bool>> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect()
    }

    fn n4() -> LfsrSpec {
        LfsrSpec {
            n: 4,
            taps: vec![4, 1],
            seed: 0b0001,
        }
    }

    #[test]
    fn n4_reference_sequence() {
        let seq = generate_msequence(&n4()).unwrap();
        assert_eq!(seq.to_string(), "000100110101111");
        let oracle: String = recurrence_oracle(&n4(), 15)
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        assert_eq!(seq.to_string(), oracle);
        assert_eq!(seq.ones(), 8);
        assert_eq!(seq.len() - seq.ones(), 7);
    }

    #[test]
    fn non_primitive_taps_rejected() {
        let spec = LfsrSpec {
            n: 4,
            taps: vec![4, 3, 2, 1],
            seed: 1,
        };
        match generate_msequence(&spec) {
            Err(Error::NonPrimitiveTaps { period, .. }) => assert_eq!(period, 5),
            other => panic!("expected NonPrimitiveTaps, got {other:?}"),
        }
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            LfsrSpec { n: 1, taps: vec![1], seed: 1 },
            LfsrSpec { n: 4, taps: vec![4, 1], seed: 0 },
            LfsrSpec { n: 4, taps: vec![4, 1], seed: 16 },
            LfsrSpec { n: 4, taps: vec![3, 1], seed: 1 },
            LfsrSpec { n: 4, taps: vec![4, 5], seed: 1 },
        ] {
            assert!(generate_msequence(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn all_seeds_balanced_for_n4() {
        for seed in 1..16 {
            let spec = LfsrSpec { seed, ..n4() };
            let seq = generate_msequence(&spec).unwrap();
            assert_eq!(seq.ones(), 8);
            assert_eq!(
                seq.bits(),
                recurrence_oracle(&spec, 15).as_slice(),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn window_index_reference_positions() {
        let seq = generate_msequence(&n4()).unwrap();
        let index = build_window_index(&seq, 4).unwrap();
        assert_eq!(index.len(), 15);
        assert_eq!(index.position(0b0001), Some(0));
        // exhaustive scan for four aligned ones
        let s = seq.to_string();
        let scan = (0..15)
            .find(|&p| (0..4).all(|i| s.as_bytes()[(p + i) % 15] == b'1'))
            .unwrap();
        assert_eq!(scan, 11);
        assert_eq!(index.position(0b1111), Some(11));
        assert_eq!(index.position(0), None);
    }

    #[test]
    fn duplicate_windows_detected() {
        let seq = BitSequence::new(parse("001001001001001").into_iter().map(|b| b.unwrap()).collect());
        assert!(matches!(
            build_window_index(&seq, 4),
            Err(Error::DuplicateWindow { .. })
        ));
    }

    #[test]
    fn decode_with_erasures() {
        let seq = generate_msequence(&n4()).unwrap();
        let index = build_window_index(&seq, 4).unwrap();
        assert_eq!(decode_window(&index, &parse("0001")), vec![0]);
        assert_eq!(decode_window(&index, &parse("????")), (0..15).collect::<Vec<_>>());
        // brute-force filter over all cyclic windows
        let pattern = parse("00?1");
        let brute: Vec<usize> = (0..15)
            .filter(|&p| {
                pattern
                    .iter()
                    .enumerate()
                    .all(|(i, b)| b.is_none_or(|b| seq.cyclic(p + i) == b))
            })
            .collect();
        assert_eq!(decode_window(&index, &pattern), brute);
        assert!(!brute.is_empty());
        assert!(decode_window(&index, &parse("0000")).is_empty());
        assert!(decode_window(&index, &parse("000")).is_empty());
    }

    #[test]
    fn decode_span_longer_than_n() {
        let spec = LfsrSpec::default_for(8).unwrap();
        let seq = generate_msequence(&spec).unwrap();
        let index = build_window_index(&seq, 8).unwrap();
        for p in [0usize, 17, 200, 250] {
            let mut w: Vec<Option<bool>> = (0..13).map(|i| Some(seq.cyclic(p + i))).collect();
            assert_eq!(index.decode_span(&w), vec![p]);
            w[3] = None;
            w[9] = None;
            assert_eq!(index.decode_span(&w), vec![p]);
        }
    }

    #[test]
    fn shipped_polynomials_are_primitive() {
        let table = default_polynomials();
        assert_eq!(table.len(), 15);
        for spec in table.iter().filter(|s| s.n <= 12) {
            let seq = generate_msequence(spec).unwrap();
            assert_eq!(seq.len(), (1 << spec.n) - 1);
            assert_eq!(seq.ones(), 1 << (spec.n - 1));
            build_window_index(&seq, spec.n).unwrap();
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_every_position(n in 2u32..=10, pos_frac in 0.0f64..1.0, seed_frac in 0.0f64..1.0) {
                let mut spec = LfsrSpec::default_for(n).unwrap();
                spec.seed = 1 + (seed_frac * ((1u32 << n) - 2) as f64) as u32;
                let seq = generate_msequence(&spec).unwrap();
                let index = build_window_index(&seq, n).unwrap();
                let p = (pos_frac * seq.len() as f64) as usize % seq.len();
                let w: Vec<Option<bool>> = (0..n as usize).map(|i| Some(seq.cyclic(p + i))).collect();
                prop_assert_eq!(decode_window(&index, &w), vec![p]);
            }

            #[test]
            fn erasures_bound_candidates(n in 3u32..=10, pos in 0usize..1000, mask in any::<u16>()) {
                let spec = LfsrSpec::default_for(n).unwrap();
                let seq = generate_msequence(&spec).unwrap();
                let index = build_window_index(&seq, n).unwrap();
                let p = pos % seq.len();
                let w: Vec<Option<bool>> = (0..n as usize)
                    .map(|i| if (mask >> i) & 1 == 1 { None } else { Some(seq.cyclic(p + i)) })
                    .collect();
                let k = w.iter().filter(|b| b.is_none()).count();
                let got = decode_window(&index, &w);
                prop_assert!(got.len() <= 1 << k);
                prop_assert!(got.contains(&p));
            }
        }
    }
}
