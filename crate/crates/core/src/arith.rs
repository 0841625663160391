//! Stochastic arithmetic operators.
//!
//! The combinational operators (AND, OR, MUX) work word-at-a-time. The toggle
//! flip-flop (TFF) operators are sequential, but their state only changes on
//! cycles where the inputs differ, so the output within a word follows from a
//! prefix parity of the "inputs differ" mask. [`tff_step`] is the per-cycle
//! model the packed kernels are checked against.

use crate::bitstream::Bitstream;
use crate::error::{Error, Result};

/// `z_t = x_t AND y_t`. Computes `p_x * p_y` for uncorrelated inputs.
pub fn and_multiply(x: &Bitstream, y: &Bitstream) -> Result<Bitstream> {
    zip_words(x, y, |a, b| a & b)
}

/// `z_t = x_t OR y_t`. Approximates `p_x + p_y` when both are near zero.
pub fn or_add(x: &Bitstream, y: &Bitstream) -> Result<Bitstream> {
    zip_words(x, y, |a, b| a | b)
}

/// Multiplexer adder: `z_t = x_t` when `sel_t = 0`, else `y_t`.
///
/// With a select stream of value 1/2 that is uncorrelated with the data this
/// computes `0.5 * (p_x + p_y)`.
pub fn mux_add(x: &Bitstream, y: &Bitstream, sel: &Bitstream) -> Result<Bitstream> {
    x.check_same_len(y)?;
    x.check_same_len(sel)?;
    let words = x
        .words()
        .iter()
        .zip(y.words())
        .zip(sel.words())
        .map(|((&a, &b), &s)| (a & !s) | (b & s))
        .collect();
    Ok(Bitstream::from_words(words, x.len()))
}

fn zip_words(x: &Bitstream, y: &Bitstream, op: impl Fn(u64, u64) -> u64) -> Result<Bitstream> {
    x.check_same_len(y)?;
    let words = x
        .words()
        .iter()
        .zip(y.words())
        .map(|(&a, &b)| op(a, b))
        .collect();
    Ok(Bitstream::from_words(words, x.len()))
}

/// Toggle flip-flop state together with the initial state `S0` it started
/// from, which fixes the rounding direction of the TFF adder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TffState {
    state: bool,
    initial: bool,
}

impl TffState {
    pub fn new(s0: bool) -> Self {
        Self {
            state: s0,
            initial: s0,
        }
    }

    pub fn state(&self) -> bool {
        self.state
    }

    pub fn initial(&self) -> bool {
        self.initial
    }
}

/// One clock of the TFF: outputs the current state, then toggles if asked.
pub fn tff_step(tff: TffState, toggle: bool) -> (bool, TffState) {
    let out = tff.state;
    (
        out,
        TffState {
            state: tff.state ^ toggle,
            ..tff
        },
    )
}

/// Exclusive prefix XOR: bit `i` is the parity of bits `0..i` of `d`.
fn exclusive_prefix_parity(d: u64) -> u64 {
    let mut p = d;
    p ^= p << 1;
    p ^= p << 2;
    p ^= p << 4;
    p ^= p << 8;
    p ^= p << 16;
    p ^= p << 32;
    p ^ d
}

/// One word of the TFF merge: where `x` and `y` agree the bit passes
/// through, elsewhere the TFF state is emitted and the TFF toggles. Returns
/// the output word and the state after the word.
fn merge_word(x: u64, y: u64, state: bool) -> (u64, bool) {
    let differ = x ^ y;
    let broadcast = if state { u64::MAX } else { 0 };
    let out = (x & y) | (differ & (exclusive_prefix_parity(differ) ^ broadcast));
    (out, state ^ (differ.count_ones() & 1 == 1))
}

fn tff_merge(x: &[u64], y: &[u64], len: usize, s0: bool) -> Bitstream {
    let mut state = s0;
    let words = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let (out, next) = merge_word(a, b, state);
            state = next;
            out
        })
        .collect();
    Bitstream::from_words(words, len)
}

/// Halver `p_c = p_a / 2`: AND of the input with a TFF that toggles on every
/// input one. The output count is `floor(c_a / 2)` for `s0 = 0` and
/// `ceil(c_a / 2)` for `s0 = 1`.
pub fn tff_halve(a: &Bitstream, s0: bool) -> Bitstream {
    let zeros = vec![0u64; a.words().len()];
    tff_merge(a.words(), &zeros, a.len(), s0)
}

/// TFF scaled adder, `p_z = (p_x + p_y) / 2`.
///
/// Agreeing bits propagate; on disagreement the TFF state is output and the
/// TFF toggles. The output count is exactly `floor((c_x + c_y) / 2)` for
/// `s0 = 0` and the ceiling for `s0 = 1`, whatever the correlation between
/// or within the inputs.
pub fn tff_add(x: &Bitstream, y: &Bitstream, s0: bool) -> Result<Bitstream> {
    x.check_same_len(y)?;
    Ok(tff_merge(x.words(), y.words(), x.len(), s0))
}

/// How adder-tree nodes pick their TFF initial state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum S0Policy {
    /// Node `i` in breadth-first order (root = 0) starts at `i mod 2`.
    #[default]
    Alternating,
    Fixed(bool),
}

impl S0Policy {
    fn initial_state(&self, node: usize) -> bool {
        match self {
            S0Policy::Alternating => node % 2 == 1,
            S0Policy::Fixed(s0) => *s0,
        }
    }
}

/// Output of a balanced adder tree: the stream encodes `sum / 2^depth`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdderTreeResult {
    pub stream: Bitstream,
    pub depth: u32,
}

impl AdderTreeResult {
    /// Exponent of the implicit `2^-d` scale on the output.
    pub fn scale_exponent(&self) -> u32 {
        self.depth
    }
}

/// Balanced binary tree of [`tff_add`] nodes.
///
/// Fan-in is zero-padded to the next power of two, so `depth = ceil(log2 k)`.
/// The output count stays within `depth / 2` of `sum(c_i) / 2^depth`.
pub fn tff_add_tree(inputs: &[Bitstream], policy: S0Policy) -> Result<AdderTreeResult> {
    let first = inputs.first().ok_or(Error::EmptyTree)?;
    for s in &inputs[1..] {
        first.check_same_len(s)?;
    }
    let words = first.words().len();
    let width = inputs.len().next_power_of_two();
    let mut buf = vec![0u64; width * words];
    for (slot, s) in buf.chunks_exact_mut(words).zip(inputs) {
        slot.copy_from_slice(s.words());
    }
    let depth = tff_tree_in_place(&mut buf, words, policy);
    buf.truncate(words);
    Ok(AdderTreeResult {
        stream: Bitstream::from_words(buf, first.len()),
        depth,
    })
}

/// Reduces a power-of-two number of leaf streams, stored back to back in
/// `buf` with `words` words each, leaving the root in the first slot.
/// Returns the tree depth. Node `j` of a level overwrites slot `j` after its
/// children in slots `2j` and `2j + 1` have been read.
pub(crate) fn tff_tree_in_place(buf: &mut [u64], words: usize, policy: S0Policy) -> u32 {
    let width = buf.len() / words;
    debug_assert!(width.is_power_of_two() && width * words == buf.len());
    let depth = width.trailing_zeros();
    let mut nodes = width;
    for level in (0..depth).rev() {
        nodes /= 2;
        let base = (1usize << level) - 1;
        for j in 0..nodes {
            let mut state = policy.initial_state(base + j);
            for w in 0..words {
                let (out, next) =
                    merge_word(buf[2 * j * words + w], buf[(2 * j + 1) * words + w], state);
                buf[j * words + w] = out;
                state = next;
            }
        }
    }
    depth
}

/// Stochastic-to-binary conversion. The asynchronous counter is modelled as
/// an exact popcount, with its timing abstracted away.
pub fn to_binary(z: &Bitstream) -> u32 {
    z.popcount()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::Precision;
    use crate::sources::{sng, SourceKind};
    use proptest::prelude::*;

    fn bs(s: &str) -> Bitstream {
        s.parse().unwrap()
    }

    /// Cycle-by-cycle adder built directly on `tff_step`.
    fn tff_add_reference(x: &Bitstream, y: &Bitstream, s0: bool) -> Bitstream {
        let mut tff = TffState::new(s0);
        let bits: Vec<bool> = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| {
                if a == b {
                    a
                } else {
                    let (out, next) = tff_step(tff, true);
                    tff = next;
                    out
                }
            })
            .collect();
        Bitstream::from_bits(&bits).unwrap()
    }

    fn tff_halve_reference(a: &Bitstream, s0: bool) -> Bitstream {
        let mut tff = TffState::new(s0);
        let bits: Vec<bool> = a
            .iter()
            .map(|bit| {
                let (out, next) = tff_step(tff, bit);
                tff = next;
                bit && out
            })
            .collect();
        Bitstream::from_bits(&bits).unwrap()
    }

    #[test]
    fn and_examples() {
        let y = bs("0110 1001");
        assert_eq!(and_multiply(&Bitstream::ones(8).unwrap(), &y).unwrap(), y);
        assert_eq!(
            and_multiply(&Bitstream::zeros(8).unwrap(), &y).unwrap(),
            Bitstream::zeros(8).unwrap()
        );
        let p = Precision::new(4).unwrap();
        let x = sng(8, &SourceKind::Ramp, p).unwrap();
        let y = sng(8, &SourceKind::VanDerCorputBase2, p).unwrap();
        assert_eq!(and_multiply(&x, &y).unwrap().popcount(), 4);
        assert!(matches!(
            and_multiply(&bs("01"), &bs("011")),
            Err(Error::LengthMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn or_examples() {
        let z = or_add(&bs("1000"), &bs("0010")).unwrap();
        assert_eq!(z, bs("1010"));
        let ones = Bitstream::ones(4).unwrap();
        assert_eq!(or_add(&ones, &ones).unwrap(), ones);
        assert_eq!(or_add(&bs("1100"), &bs("1100")).unwrap().popcount(), 2);
        assert!(or_add(&bs("1"), &bs("10")).is_err());
    }

    #[test]
    fn mux_examples() {
        let z = mux_add(&bs("1111"), &bs("0000"), &bs("0101")).unwrap();
        assert_eq!(z, bs("1010"));
        let x = bs("0110 0011");
        assert_eq!(mux_add(&x, &x, &bs("1101 0010")).unwrap(), x);
        assert_eq!(
            mux_add(&x, &bs("1111 1111"), &Bitstream::zeros(8).unwrap()).unwrap(),
            x
        );
        assert!(mux_add(&x, &x, &bs("01")).is_err());
    }

    #[test]
    fn mux_with_alternating_select_takes_x_on_even_cycles() {
        let x = bs("1011 0010 1110");
        let y = bs("0110 1101 0011");
        let sel = Bitstream::from_fn(12, |t| t % 2 == 1).unwrap();
        let z = mux_add(&x, &y, &sel).unwrap();
        let expected = (0..12).filter(|t| t % 2 == 0 && x.get(*t)).count()
            + (0..12).filter(|t| t % 2 == 1 && y.get(*t)).count();
        assert_eq!(z.popcount() as usize, expected);
    }

    #[test]
    fn tff_step_examples() {
        let (out, next) = tff_step(TffState::new(false), true);
        assert!(!out);
        assert!(next.state());
        let (out, next) = tff_step(TffState::new(true), false);
        assert!(out);
        assert!(next.state());
        assert!(next.initial());
        let mut tff = TffState::new(false);
        let outs: Vec<bool> = (0..4)
            .map(|_| {
                let (o, n) = tff_step(tff, true);
                tff = n;
                o
            })
            .collect();
        assert_eq!(outs, [false, true, false, true]);
    }

    #[test]
    fn tff_halve_examples() {
        assert_eq!(tff_halve(&bs("1111"), true), bs("1010"));
        assert_eq!(tff_halve(&bs("1111"), false), bs("0101"));
        assert_eq!(tff_halve(&bs("10101"), false).popcount(), 1);
    }

    #[test]
    fn worked_example_twenty_bits() {
        let x = bs("0110 0011 0101 0111 1000");
        let y = bs("1011 1111 0101 0111 1111");
        let z = tff_add(&x, &y, false).unwrap();
        assert_eq!(format!("{z:#}"), "0110 1011 0101 0111 1101");
        assert_eq!(z.popcount(), 13);
    }

    #[test]
    fn rounding_follows_initial_state() {
        // counts 3 and 2 at N = 8: the sum 5/16 is not representable
        let x = bs("0110 0100");
        let y = bs("1000 0001");
        assert_eq!(tff_add(&x, &y, false).unwrap().popcount(), 2);
        assert_eq!(tff_add(&x, &y, true).unwrap().popcount(), 3);
    }

    #[test]
    fn equal_inputs_pass_through() {
        let x = bs("0110 1110 0101");
        assert_eq!(tff_add(&x, &x, true).unwrap(), x);
        assert!(tff_add(&x, &bs("01"), false).is_err());
    }

    #[test]
    fn tff_exact_with_sorted_inputs() {
        for b in 2..=6u32 {
            let p = Precision::new(b).unwrap();
            for x in 0..p.levels() {
                for y in 0..p.levels() {
                    let sx = sng(x, &SourceKind::Ramp, p).unwrap();
                    let sy = sng(y, &SourceKind::Ramp, p).unwrap();
                    for s0 in [false, true] {
                        let c = tff_add(&sx, &sy, s0).unwrap().popcount();
                        assert_eq!(c, (x + y) / 2 + u32::from(s0) * ((x + y) % 2));
                    }
                }
            }
        }
    }

    #[test]
    fn tree_examples() {
        let streams: Vec<Bitstream> = (0..4)
            .map(|k| Bitstream::from_fn(16, |t| t % 4 == k).unwrap())
            .collect();
        let r = tff_add_tree(&streams, S0Policy::Alternating).unwrap();
        assert_eq!(r.depth, 2);
        assert_eq!(r.stream.popcount(), 4);

        let one = bs("0110 1");
        let r = tff_add_tree(std::slice::from_ref(&one), S0Policy::Alternating).unwrap();
        assert_eq!(r.depth, 0);
        assert_eq!(r.stream, one);

        let three = vec![Bitstream::ones(8).unwrap(); 3];
        let r = tff_add_tree(&three, S0Policy::Fixed(false)).unwrap();
        assert_eq!(r.scale_exponent(), 2);
        // (8 + 8) / 2 = 8, (8 + 0) / 2 = 4, (8 + 4) / 2 = 6
        assert_eq!(r.stream.popcount(), 6);

        assert!(matches!(
            tff_add_tree(&[], S0Policy::Alternating),
            Err(Error::EmptyTree)
        ));
        assert!(tff_add_tree(&[bs("01"), bs("011")], S0Policy::Alternating).is_err());
    }

    #[test]
    fn alternating_policy_uses_breadth_first_index() {
        // two leaves with counts 1 and 0: the root is node 0, so S0 = 0
        let r = tff_add_tree(&[bs("1000"), bs("0000")], S0Policy::Alternating).unwrap();
        assert_eq!(r.stream.popcount(), 0);
        // depth 2: nodes 1 (S0 = 1) and 2 (S0 = 0) feed root 0
        let leaves = [bs("1000"), bs("0000"), bs("0100"), bs("0000")];
        let r = tff_add_tree(&leaves, S0Policy::Alternating).unwrap();
        // node 1 rounds up to 1, node 2 rounds down to 0, root rounds 1/2 down
        assert_eq!(r.stream.popcount(), 0);
        let r = tff_add_tree(&leaves, S0Policy::Fixed(true)).unwrap();
        assert_eq!(r.stream.popcount(), 1);
    }

    #[test]
    fn to_binary_is_popcount() {
        assert_eq!(to_binary(&Bitstream::zeros(16).unwrap()), 0);
        assert_eq!(to_binary(&bs("0110 1011 0101 0111 1101")), 13);
        assert_eq!(
            to_binary(&Bitstream::from_fn(256, |t| t % 2 == 1).unwrap()),
            128
        );
    }

    fn stream_pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
        (1usize..400).prop_flat_map(|n| {
            (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn packed_adder_matches_cycle_model((xb, yb) in stream_pair(), s0 in any::<bool>()) {
            let x = Bitstream::from_bits(&xb).unwrap();
            let y = Bitstream::from_bits(&yb).unwrap();
            let z = tff_add(&x, &y, s0).unwrap();
            prop_assert_eq!(&z, &tff_add_reference(&x, &y, s0));
            let total = x.popcount() + y.popcount();
            prop_assert_eq!(z.popcount(), total / 2 + u32::from(s0) * (total % 2));
        }

        #[test]
        fn packed_halver_matches_cycle_model(bits in prop::collection::vec(any::<bool>(), 1..400), s0 in any::<bool>()) {
            let a = Bitstream::from_bits(&bits).unwrap();
            let c = tff_halve(&a, s0);
            prop_assert_eq!(&c, &tff_halve_reference(&a, s0));
            let ca = a.popcount();
            prop_assert_eq!(c.popcount(), if s0 { ca.div_ceil(2) } else { ca / 2 });
        }

        #[test]
        fn halver_output_is_subset_of_input(bits in prop::collection::vec(any::<bool>(), 1..200), s0 in any::<bool>()) {
            let a = Bitstream::from_bits(&bits).unwrap();
            let c = tff_halve(&a, s0);
            prop_assert_eq!(and_multiply(&a, &c).unwrap(), c);
        }
    }
}
