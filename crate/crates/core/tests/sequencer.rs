use std::collections::HashSet;

use dotphase::sequence::{
    build_window_index, decode_window, default_polynomials, generate_msequence, LfsrSpec,
};
use proptest::prelude::*;

/// The sequence as a linear recurrence over GF(2): seed bit i is a[i],
/// a[k+n] = a[k] + sum of a[k+t] over taps t < n, and the output starts
/// one clock in, at a[1].
fn reference_lfsr(n: u32, taps: &[u32], seed: u32, len: usize) -> Vec<bool> {
    let n = n as usize;
    let mut a: Vec<bool> = (0..n).map(|i| seed >> i & 1 == 1).collect();
    while a.len() < len + 1 {
        let k = a.len() - n;
        let next = taps
            .iter()
            .map(|&t| t as usize)
            .fold(false, |acc, t| acc ^ if t == n { a[k] } else { a[k + t] });
        a.push(next);
    }
    a[1..=len].to_vec()
}

fn as_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

#[test]
fn matches_an_independent_register() {
    let seq = generate_msequence(&LfsrSpec { n: 4, taps: vec![4, 1], seed: 1 }).unwrap();
    assert_eq!(as_string(seq.bits()), "000100110101111");
    assert_eq!(as_string(seq.bits()), as_string(&reference_lfsr(4, &[4, 1], 1, 15)));
}

#[test]
fn shipped_table_covers_small_registers() {
    let table = default_polynomials();
    for n in [4u32, 8, 10, 12] {
        let spec = table.iter().find(|s| s.n == n).unwrap();
        assert!(spec.taps.contains(&n));
    }
    let find = |n| table.iter().find(|s| s.n == n).unwrap().taps.clone();
    assert_eq!(find(4), vec![4, 1]);
    assert_eq!(find(8), vec![8, 6, 5, 4]);
    assert_eq!(find(10), vec![10, 7]);
    assert_eq!(find(12), vec![12, 11, 10, 4]);
}

#[test]
fn non_primitive_polynomial_fails() {
    let r = generate_msequence(&LfsrSpec { n: 4, taps: vec![4, 3, 2, 1], seed: 1 });
    assert!(r.is_err());
    // the oracle repeats after 5 steps
    let bits = reference_lfsr(4, &[4, 3, 2, 1], 1, 10);
    assert_eq!(bits[..5], bits[5..]);
}

#[test]
fn partial_window_matches_brute_force() {
    let seq = generate_msequence(&LfsrSpec::default_for(4).unwrap()).unwrap();
    let index = build_window_index(&seq, 4).unwrap();
    let w = [Some(false), Some(false), None, Some(true)];
    let mut got = decode_window(&index, &w);
    got.sort_unstable();
    let bits = seq.bits();
    let expect: Vec<usize> = (0..15)
        .filter(|&p| !bits[p] && !bits[(p + 1) % 15] && bits[(p + 3) % 15])
        .collect();
    assert_eq!(got, expect);
    assert!(!got.is_empty());
    assert_eq!(decode_window(&index, &[None; 4]).len(), 15);
    assert_eq!(index.len(), 15);
}

#[test]
fn windows_unique_and_balanced_up_to_twelve_bits() {
    for spec in default_polynomials().iter().filter(|s| s.n <= 12) {
        let n = spec.n as usize;
        let seq = generate_msequence(spec).unwrap();
        let len = (1usize << n) - 1;
        assert_eq!(seq.len(), len);
        assert_eq!(seq.ones(), 1 << (n - 1));
        let bits = seq.bits();
        let windows: HashSet<Vec<bool>> =
            (0..len).map(|p| (0..n).map(|i| bits[(p + i) % len]).collect()).collect();
        assert_eq!(windows.len(), len, "n={n}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_window_round_trips(n in 2u32..=12, pos in any::<usize>(), seed in any::<u32>()) {
        let mut spec = LfsrSpec::default_for(n).unwrap();
        spec.seed = seed % ((1 << n) - 1) + 1;
        let seq = generate_msequence(&spec).unwrap();
        prop_assert_eq!(seq.bits(), &reference_lfsr(n, &spec.taps, spec.seed, seq.len())[..]);
        let index = build_window_index(&seq, n).unwrap();
        let p = pos % seq.len();
        let w: Vec<Option<bool>> = (0..n as usize).map(|i| Some(seq.cyclic(p + i))).collect();
        prop_assert_eq!(decode_window(&index, &w), vec![p]);
    }

    #[test]
    fn unknowns_bound_the_candidates(n in 3u32..=12, pos in any::<usize>(), mask in any::<u16>()) {
        let seq = generate_msequence(&LfsrSpec::default_for(n).unwrap()).unwrap();
        let index = build_window_index(&seq, n).unwrap();
        let p = pos % seq.len();
        let w: Vec<Option<bool>> = (0..n as usize)
            .map(|i| (mask >> i & 1 == 0).then(|| seq.cyclic(p + i)))
            .collect();
        let k = w.iter().filter(|b| b.is_none()).count();
        let got = decode_window(&index, &w);
        prop_assert!(got.contains(&p));
        prop_assert!(got.len() <= 1 << k);
    }
}
