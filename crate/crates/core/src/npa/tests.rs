use super::*;
use crate::sdp::SolverOptions;
use proptest::prelude::*;

const A00: Letter = Letter::new(Party::A, 0, 0);
const A10: Letter = Letter::new(Party::A, 0, 1);
const C01: Letter = Letter::new(Party::C, 1, 0);

fn routed_letters() -> Vec<Letter> {
    Scenario::routed(3, &Scenario::all_eve_contexts()).all_letters()
}

fn chsh_objective(s: &Scenario) -> Polynomial<f64> {
    let mut obj = Polynomial::zero();
    for x in 0..2u8 {
        for y in 0..2u8 {
            for a in 0..2u8 {
                for b in 0..2u8 {
                    if (a ^ b) == (x & y) {
                        let t = &Polynomial::projector(s, Party::A, x, a) * &Polynomial::projector(s, Party::B, y, b);
                        obj.add_scaled(0.25, &t);
                    }
                }
            }
        }
    }
    obj
}

fn optimum(s: &Scenario, level: &str, obj: &Polynomial<f64>, cons: &[(Polynomial<f64>, f64)]) -> NpaSolution<f64> {
    let mons = generate_monomials(s, &level.parse().unwrap());
    let m = build_moment_sdp(&mons, obj, cons).unwrap();
    m.solve(&SolverOptions::default()).unwrap()
}

#[test]
fn idempotence_and_orthogonality() {
    assert_eq!(canonicalize(&[A00, A00]).word, vec![A00]);
    assert!(canonicalize(&[A00, A10]).is_zero);
}

#[test]
fn commuting_letters_sorted_by_party() {
    assert_eq!(canonicalize(&[C01, A00]).word, vec![A00, C01]);
    let b = Letter::new(Party::B, 0, 0);
    assert_eq!(canonicalize(&[C01, b]).word, vec![C01, b]);
    assert_eq!(canonicalize(&[b, C01]).word, vec![b, C01]);
    assert_eq!(canonicalize(&[b, A00]).word, vec![A00, b]);
}

#[test]
fn separated_repeats_reduce_through_commuting_letters() {
    let c00 = Letter::new(Party::C, 0, 0);
    let c01 = Letter::new(Party::C, 0, 1);
    assert!(canonicalize(&[c00, A00, c01]).is_zero);
    assert_eq!(canonicalize(&[c00, A00, c00]).word, vec![A00, c00]);
    let b = Letter::new(Party::B, 0, 0);
    assert_eq!(canonicalize(&[c00, b, c00]).word, vec![c00, b, c00]);
}

#[test]
fn level_one_counts() {
    let chsh = generate_monomials(&Scenario::chsh(), &"1".parse().unwrap());
    assert_eq!(chsh.len(), 5);
    let full = generate_monomials(&Scenario::routed(3, &Scenario::all_eve_contexts()), &"1".parse().unwrap());
    assert_eq!(full.len(), 25);
}

#[test]
fn chsh_level_one_plus_ab_count_matches_enumeration() {
    // Oracle: A and B commute and act on different inputs, so every product
    // A_{0|x} B_{0|y} is a distinct operator: 2 × 2 new words.
    let mut pairs = std::collections::BTreeSet::new();
    for x in 0..2 {
        for y in 0..2 {
            pairs.insert((x, y));
        }
    }
    let got = generate_monomials(&Scenario::chsh(), &"1+AB".parse().unwrap());
    assert_eq!(got.len(), 1 + 4 + pairs.len());
    assert_eq!(got.len(), 9);
}

#[test]
fn level_spec_round_trip() {
    let l: LevelSpec = "1+AC+AE+CE+AB".parse().unwrap();
    assert_eq!(l, LevelSpec::default());
    assert_eq!(l.to_string(), "1+AC+AE+CE+AB");
    assert!("0".parse::<LevelSpec>().is_err());
    assert!("1+AX".parse::<LevelSpec>().is_err());
    assert!("x".parse::<LevelSpec>().is_err());
}

#[test]
fn tsirelson_bound() {
    let s = Scenario::chsh();
    let sol = optimum(&s, "1+AB", &chsh_objective(&s), &[]);
    let tsirelson = (2.0 + 2f64.sqrt()) / 4.0;
    assert!((sol.value - tsirelson).abs() < 1e-6, "{}", sol.value);
    assert!(sol.upper_bound >= tsirelson - 1e-9 && sol.upper_bound - tsirelson < 1e-6);
}

#[test]
fn level_monotonicity_on_chsh() {
    let s = Scenario::chsh();
    let obj = chsh_objective(&s);
    let v1 = optimum(&s, "1", &obj, &[]).value;
    let v1ab = optimum(&s, "1+AB", &obj, &[]).value;
    let v2 = optimum(&s, "2", &obj, &[]).value;
    assert!(v1 >= v1ab - 1e-7 && v1ab >= v2 - 1e-7, "{v1} {v1ab} {v2}");
}

#[test]
fn normalisation_objective() {
    let s = Scenario::chsh();
    let sol = optimum(&s, "1", &Polynomial::constant(1.0), &[]);
    assert!((sol.value - 1.0).abs() < 1e-12);
}

#[test]
fn deterministic_behavior_is_fully_guessable() {
    let s = Scenario {
        a_outcomes: vec![2, 2],
        b_outcomes: vec![2, 2],
        c_outcomes: vec![],
        e_measurements: vec![(0, 2)],
    };
    let mut cons = Vec::new();
    for x in 0..2 {
        cons.push((Polynomial::projector(&s, Party::A, x, 0), 1.0));
        cons.push((Polynomial::projector(&s, Party::B, x, 0), 1.0));
        for y in 0..2 {
            let ab = &Polynomial::projector(&s, Party::A, x, 0) * &Polynomial::projector(&s, Party::B, y, 0);
            cons.push((ab, 1.0));
        }
    }
    let mut obj = Polynomial::zero();
    for a in 0..2 {
        obj.add_scaled(
            1.0,
            &(&Polynomial::projector(&s, Party::A, 0, a) * &Polynomial::projector(&s, Party::E, 0, a)),
        );
    }
    let sol = optimum(&s, "1+AE+AB", &obj, &cons);
    assert!((sol.value - 1.0).abs() < 1e-6, "{}", sol.value);
    assert!(sol.upper_bound >= 1.0 - 1e-9);
}

#[test]
fn missing_moment_is_reported() {
    let s = Scenario::chsh();
    let mons = generate_monomials(&s, &"1".parse().unwrap());
    let w = Polynomial::<f64>::word(&[
        Letter::new(Party::A, 0, 0),
        Letter::new(Party::B, 0, 0),
        Letter::new(Party::A, 1, 0),
    ]);
    assert!(matches!(build_moment_sdp(&mons, &w, &[]), Err(NpaError::MissingMoment(_))));
}

#[test]
fn inconsistent_constraints_are_rejected() {
    let s = Scenario::chsh();
    let mons = generate_monomials(&s, &"1".parse().unwrap());
    let a = Polynomial::word(&[Letter::new(Party::A, 0, 0)]);
    let r = build_moment_sdp(&mons, &Polynomial::constant(1.0), &[(a.clone(), 0.5), (a, 0.25)]);
    assert!(matches!(r, Err(NpaError::Inconsistent(_))));
}

#[test]
fn certificate_bounds_nearby_values() {
    // The affine certificate obtained at one behaviour must upper-bound the
    // optimum at another.
    let s = Scenario::chsh();
    let mons = generate_monomials(&s, &"1+AB".parse().unwrap());
    let obj = Polynomial::projector(&s, Party::A, 0, 0);
    let chsh = chsh_objective(&s);
    let m = build_moment_sdp(&mons, &obj, &[(chsh, 0.8)]).unwrap();
    let o = SolverOptions::default();
    let at = m.solve(&o).unwrap();
    let other = m.solve_with_values(&[0.83], &o).unwrap();
    assert!(at.certificate.evaluate(&[0.83]) >= other.value - 1e-9);
}

fn letter_strategy() -> impl Strategy<Value = Letter> {
    let ls = routed_letters();
    (0..ls.len()).prop_map(move |i| ls[i])
}

fn word_strategy(max: usize) -> impl Strategy<Value = Vec<Letter>> {
    proptest::collection::vec(letter_strategy(), 0..=max)
}

/// All words obtained from `w` by swapping adjacent commuting letters.
fn commutation_class(w: &[Letter]) -> Vec<Vec<Letter>> {
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![w.to_vec()];
    seen.insert(w.to_vec());
    while let Some(v) = stack.pop() {
        for i in 0..v.len().saturating_sub(1) {
            if v[i].party.commutes_with(v[i + 1].party) {
                let mut u = v.clone();
                u.swap(i, i + 1);
                if seen.insert(u.clone()) {
                    stack.push(u);
                }
            }
        }
    }
    seen.into_iter().collect()
}

proptest! {
    #[test]
    fn canonicalize_is_idempotent(w in word_strategy(6)) {
        let c = canonicalize(&w);
        if !c.is_zero {
            prop_assert_eq!(canonicalize(&c.word), c);
        }
    }

    #[test]
    fn reversal_shares_moment(w in word_strategy(6)) {
        let mut r = w.clone();
        r.reverse();
        prop_assert_eq!(moment_key(&w), moment_key(&r));
    }

    #[test]
    fn canonical_form_is_unique_over_commutations(w in word_strategy(5)) {
        let c = canonicalize(&w);
        for v in commutation_class(&w) {
            prop_assert_eq!(&canonicalize(&v), &c);
        }
    }

    #[test]
    fn b_never_crosses_c_or_e(w in word_strategy(6)) {
        let distinct = w.iter().enumerate().all(|(i, a)| w[i + 1..].iter().all(|b| !a.same_measurement(b)));
        prop_assume!(distinct);
        let c = canonicalize(&w);
        let pos = |v: &[Letter], l: &Letter| v.iter().position(|x| x == l).unwrap();
        for b in w.iter().filter(|l| l.party == Party::B) {
            for o in w.iter().filter(|l| matches!(l.party, Party::C | Party::E)) {
                prop_assert_eq!(pos(&w, b) < pos(&w, o), pos(&c.word, b) < pos(&c.word, o));
            }
        }
    }
}
