//! Toeplitz hashing of the raw string.
//!
//! Bits are `u8` values 0/1. Input bit 0 is the earliest round, output bit 0
//! is row 0 of the matrix. The matrix is `T[i][j] = seed[n_out − 1 − i + j]`.

use crate::behavior::Outcome;
use crate::certifier::DiMode;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("seed has {got} bits, need n_in + n_out - 1 = {need}")]
    SeedLength { got: usize, need: usize },
    #[error("cannot extract {n_out} bits from {n_in}")]
    OutputTooLong { n_in: usize, n_out: usize },
    #[error("bit value {0} is not 0 or 1")]
    NotABit(u8),
    #[error("bad hex: {0}")]
    Hex(String),
    #[error("hex string holds {have} bits, {want} requested")]
    HexTooShort { have: usize, want: usize },
}

/// `floor(certified_bits − 2·security_exponent)`, clipped at 0.
pub fn output_length(certified_bits: f64, security_exponent: u32) -> usize {
    let l = (certified_bits - 2.0 * security_exponent as f64).floor();
    if l.is_nan() || l <= 0.0 {
        0
    } else {
        l as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToeplitzSeed {
    bits: Vec<u8>,
}

impl ToeplitzSeed {
    pub fn new(bits: Vec<u8>) -> Result<Self, ExtractError> {
        check_bits(&bits)?;
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn required_len(n_in: usize, n_out: usize) -> usize {
        (n_in + n_out).saturating_sub(1)
    }

    fn check(&self, n_in: usize, n_out: usize) -> Result<(), ExtractError> {
        if n_out > n_in {
            return Err(ExtractError::OutputTooLong { n_in, n_out });
        }
        let need = Self::required_len(n_in, n_out);
        if n_out > 0 && self.bits.len() != need {
            return Err(ExtractError::SeedLength { got: self.bits.len(), need });
        }
        Ok(())
    }

    /// The `n_out × n_in` matrix, row by row.
    pub fn matrix(&self, n_in: usize, n_out: usize) -> Result<Vec<Vec<u8>>, ExtractError> {
        self.check(n_in, n_out)?;
        Ok((0..n_out).map(|i| (0..n_in).map(|j| self.bits[n_out - 1 - i + j]).collect()).collect())
    }
}

fn check_bits(bits: &[u8]) -> Result<(), ExtractError> {
    match bits.iter().find(|&&b| b > 1) {
        Some(&b) => Err(ExtractError::NotABit(b)),
        None => Ok(()),
    }
}

/// Dense GF(2) product with the materialised matrix.
pub fn extract_naive(input: &[u8], seed: &ToeplitzSeed, n_out: usize) -> Result<Vec<u8>, ExtractError> {
    check_bits(input)?;
    let m = seed.matrix(input.len(), n_out)?;
    Ok(m.iter().map(|row| row.iter().zip(input).fold(0u8, |acc, (&t, &x)| acc ^ (t & x))).collect())
}

fn pack(bits: &[u8]) -> Vec<u64> {
    let mut w = vec![0u64; bits.len().div_ceil(64)];
    for (k, &b) in bits.iter().enumerate() {
        w[k / 64] |= (b as u64) << (k % 64);
    }
    w
}

/// 64 bits of `words` starting at bit `offset`.
fn window(words: &[u64], offset: usize) -> u64 {
    let (q, r) = (offset / 64, offset % 64);
    let lo = words.get(q).copied().unwrap_or(0) >> r;
    if r == 0 {
        lo
    } else {
        lo | (words.get(q + 1).copied().unwrap_or(0) << (64 - r))
    }
}

/// Row `i` is the seed slice starting at `n_out − 1 − i`; each output bit is
/// the parity of that slice ANDed with the input, 64 bits at a time.
pub fn extract(input: &[u8], seed: &ToeplitzSeed, n_out: usize) -> Result<Vec<u8>, ExtractError> {
    check_bits(input)?;
    seed.check(input.len(), n_out)?;
    let x = pack(input);
    let s = pack(&seed.bits);
    let out = (0..n_out)
        .map(|i| {
            let base = n_out - 1 - i;
            let acc = x.iter().enumerate().fold(0u64, |acc, (k, &xw)| acc ^ (window(&s, base + 64 * k) & xw));
            (acc.count_ones() & 1) as u8
        })
        .collect();
    Ok(out)
}

/// Raw client outcomes as bits: one bit per symbol in fully-DI mode, the
/// 2-bit code `0 → 00, 1 → 01, ∅ → 10` in semi-DI mode.
pub fn encode_raw(raw: &[Outcome], mode: DiMode) -> Vec<u8> {
    match mode {
        DiMode::FullyDi => raw.iter().map(|o| o.as_bit().unwrap_or(0)).collect(),
        DiMode::SemiDi => raw
            .iter()
            .flat_map(|o| match o {
                Outcome::Zero => [0, 0],
                Outcome::One => [0, 1],
                Outcome::Void => [1, 0],
            })
            .collect(),
    }
}

/// Bits packed MSB-first into bytes; the last byte is zero-padded.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | (b << (7 - k)))).collect()
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|&byte| (0..8).map(move |k| (byte >> (7 - k)) & 1)).collect()
}

pub fn bits_to_hex(bits: &[u8]) -> String {
    hex::encode(bits_to_bytes(bits))
}

/// Decode hex (whitespace ignored); `n_bits` truncates the trailing padding.
pub fn bits_from_hex(s: &str, n_bits: Option<usize>) -> Result<Vec<u8>, ExtractError> {
    let clean: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bytes = hex::decode(&clean).map_err(|e| ExtractError::Hex(e.to_string()))?;
    let mut bits = bytes_to_bits(&bytes);
    if let Some(n) = n_bits {
        if n > bits.len() {
            return Err(ExtractError::HexTooShort { have: bits.len(), want: n });
        }
        bits.truncate(n);
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn output_length_examples() {
        assert_eq!(output_length(100.0, 10), 80);
        assert_eq!(output_length(5.0, 10), 0);
        assert_eq!(output_length(0.0, 0), 0);
        assert_eq!(output_length(0.0, 64), 0);
        assert_eq!(output_length(-3.0, 1), 0);
        assert_eq!(output_length(20.9, 0), 20);
    }

    #[test]
    fn zero_seed_gives_zeros() {
        let seed = ToeplitzSeed::new(vec![0; 12]).unwrap();
        let out = extract(&[1, 0, 1, 1, 1, 0, 1, 1, 0], &seed, 4).unwrap();
        assert_eq!(out, vec![0; 4]);
    }

    #[test]
    fn one_by_one() {
        let seed = ToeplitzSeed::new(vec![1]).unwrap();
        assert_eq!(extract(&[1], &seed, 1).unwrap(), vec![1]);
        assert_eq!(extract_naive(&[1], &seed, 1).unwrap(), vec![1]);
    }

    #[test]
    fn small_hand_product() {
        // T = [[s1 s2 s3 s4], [s0 s1 s2 s3]] = [[0 1 1 0], [1 0 1 1]]
        let seed = ToeplitzSeed::new(vec![1, 0, 1, 1, 0]).unwrap();
        let x = [1, 1, 0, 1];
        let t = [[0, 1, 1, 0], [1, 0, 1, 1]];
        let by_hand: Vec<u8> = t.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum::<u8>() % 2).collect();
        assert_eq!(by_hand, vec![1, 0]);
        assert_eq!(extract(&x, &seed, 2).unwrap(), vec![1, 0]);
        assert_eq!(extract_naive(&x, &seed, 2).unwrap(), vec![1, 0]);
        assert_eq!(seed.matrix(4, 2).unwrap(), vec![vec![0, 1, 1, 0], vec![1, 0, 1, 1]]);
    }

    #[test]
    fn length_errors() {
        let seed = ToeplitzSeed::new(vec![1, 0, 1]).unwrap();
        assert_eq!(extract(&[1, 1], &seed, 3), Err(ExtractError::OutputTooLong { n_in: 2, n_out: 3 }));
        assert_eq!(extract(&[1, 1, 1], &seed, 2), Err(ExtractError::SeedLength { got: 3, need: 4 }));
        assert_eq!(ToeplitzSeed::new(vec![2]), Err(ExtractError::NotABit(2)));
        assert_eq!(extract(&[1, 1], &seed, 0).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn trit_encoding() {
        let raw = [Outcome::Zero, Outcome::One, Outcome::Void];
        assert_eq!(encode_raw(&raw, DiMode::SemiDi), vec![0, 0, 0, 1, 1, 0]);
        assert_eq!(encode_raw(&raw[..2], DiMode::FullyDi), vec![0, 1]);
    }

    #[test]
    fn hex_round_trip() {
        let bits = vec![1, 0, 1, 1, 0, 0, 0, 1, 1, 1];
        let h = bits_to_hex(&bits);
        assert_eq!(h, "b1c0");
        assert_eq!(bits_from_hex(&h, Some(10)).unwrap(), bits);
        assert!(bits_from_hex("zz", None).is_err());
        assert!(bits_from_hex("ff", Some(9)).is_err());
    }

    fn bits(n: usize) -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0u8..2, n)
    }

    fn case() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<u8>, usize)> {
        (1usize..300).prop_flat_map(|n_in| {
            (1..=n_in).prop_flat_map(move |n_out| (bits(n_in), bits(n_in), bits(n_in + n_out - 1), Just(n_out)))
        })
    }

    proptest! {
        #[test]
        fn fast_matches_naive((x, _y, s, n_out) in case()) {
            let seed = ToeplitzSeed::new(s).unwrap();
            prop_assert_eq!(extract(&x, &seed, n_out).unwrap(), extract_naive(&x, &seed, n_out).unwrap());
        }

        #[test]
        fn linear((x, y, s, n_out) in case()) {
            let seed = ToeplitzSeed::new(s).unwrap();
            let xy: Vec<u8> = x.iter().zip(&y).map(|(a, b)| a ^ b).collect();
            let fx = extract(&x, &seed, n_out).unwrap();
            let fy = extract(&y, &seed, n_out).unwrap();
            let sum: Vec<u8> = fx.iter().zip(&fy).map(|(a, b)| a ^ b).collect();
            prop_assert_eq!(extract(&xy, &seed, n_out).unwrap(), sum);
        }

        #[test]
        fn shift_structure((_x, _y, s, n_out) in case()) {
            let n_in = s.len() + 1 - n_out;
            let seed = ToeplitzSeed::new(s).unwrap();
            let m = seed.matrix(n_in, n_out).unwrap();
            for i in 1..n_out {
                for j in 1..n_in {
                    prop_assert_eq!(m[i][j], m[i - 1][j - 1]);
                }
            }
        }
    }
}
