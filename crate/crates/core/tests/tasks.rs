use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sxnet_core::heads::{PadMode, PAD};
use sxnet_core::tasks::*;

fn value_of(bits: &[u8]) -> u128 {
    bits.iter().rev().fold(0, |acc, &b| acc * 2 + b as u128)
}

/// Reads little-endian digit tokens back into an integer.
fn value_of_tokens(tokens: &[usize]) -> u128 {
    tokens.iter().rev().fold(0, |acc, &t| {
        assert!(t == DIGIT_ZERO || t == DIGIT_ONE, "not a digit token: {t}");
        acc * 2 + (t == DIGIT_ONE) as u128
    })
}

fn check_sample(task: TaskKind, raw: &RawSample) {
    let Target::Tokens(target) = &raw.target else {
        let Target::Position(p) = raw.target else {
            unreachable!()
        };
        assert_eq!(task, TaskKind::Select);
        let (context, tail) = raw.input.split_at(raw.input.len() - 2);
        assert_eq!(tail[0], SELECT_SEP);
        assert_eq!(context[p], tail[1]);
        assert_eq!(context.iter().filter(|&&s| s == tail[1]).count(), 1);
        return;
    };
    let input = &raw.input;
    assert!(input.iter().all(|&t| t != PAD));
    match task {
        TaskKind::Dup => assert_eq!(*target, [input.as_slice(), input.as_slice()].concat()),
        TaskKind::Copy => assert_eq!(target, input),
        TaskKind::Rev => assert!(target.iter().eq(input.iter().rev())),
        TaskKind::Sort => {
            assert!(target.windows(2).all(|w| w[0] <= w[1]));
            let mut sorted = input.clone();
            sorted.sort();
            assert_eq!(*target, sorted);
        }
        TaskKind::Add | TaskKind::Mul => {
            let op = if task == TaskKind::Add { PLUS } else { TIMES };
            let split = input.iter().position(|&t| t == op).expect("operator present");
            let a = value_of_tokens(&input[..split]);
            let b = value_of_tokens(&input[split + 1..]);
            let expected = if task == TaskKind::Add { a + b } else { a * b };
            assert_eq!(value_of_tokens(target), expected);
            // Results are written without high-order zeros.
            assert!(target.len() == 1 || *target.last().unwrap() == DIGIT_ONE);
        }
        TaskKind::Select => unreachable!(),
    }
}

#[test]
fn generated_samples_are_correct_and_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for task in TaskKind::ALL {
        for len in task.min_len()..=70 {
            for _ in 0..20 {
                let raw = task.generate(len, &mut rng);
                check_sample(task, &raw);
                assert!(raw.encoded_len() <= encoded_budget(task, len), "{task} len {len}");
            }
        }
    }
}

#[test]
fn encoding_keeps_input_and_target_aligned() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for task in TaskKind::ALL {
        for _ in 0..200 {
            let raw = task.generate(20, &mut rng);
            let s = encode(&raw, 32, task.pad_mode(), &mut rng).unwrap();
            assert_eq!(s.padded_len(), 32);
            let n = raw.input.len();
            assert_eq!(&s.input[s.offset..s.offset + n], raw.input.as_slice());
            assert_eq!(s.input.iter().filter(|&&t| t != PAD).count(), n);
            match (&raw.target, &s.target) {
                (Target::Tokens(t), Target::Tokens(padded)) => {
                    assert_eq!(s.offset, 0);
                    assert_eq!(&padded[..t.len()], t.as_slice());
                    assert!(padded[t.len()..].iter().all(|&x| x == PAD));
                }
                (Target::Position(p), Target::Position(q)) => {
                    assert_eq!(*q, p + s.offset);
                    assert_eq!(s.input[*q], *raw.input.last().unwrap());
                }
                _ => panic!("target kind changed"),
            }
        }
    }
    let raw = TaskKind::Rev.generate(20, &mut rng);
    assert!(encode(&raw, 16, PadMode::FixedStart, &mut rng).is_err());
}

#[test]
fn selection_padding_moves() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let offsets: std::collections::BTreeSet<usize> = (0..200)
        .map(|_| {
            let raw = TaskKind::Select.generate(40, &mut rng);
            encode(&raw, 64, TaskKind::Select.pad_mode(), &mut rng).unwrap().offset
        })
        .collect();
    assert!(offsets.len() > 10, "{offsets:?}");
    assert!(selection_sample(&[1, 2, 1], 1).is_err());
    assert!(selection_sample(&[1, 2, 3], 4).is_err());
}

#[test]
fn curriculum_widens_to_full_range() {
    let c = Curriculum::new(TaskKind::Rev, 2, 32, 3000);
    assert_eq!(c.current_max(0), 2);
    assert_eq!(c.current_max(c.window), 32);
    assert_eq!(c.current_max(10 * c.window), 32);
    let maxima: Vec<usize> = (0..=c.window).map(|s| c.current_max(s)).collect();
    assert!(maxima.windows(2).all(|w| w[0] <= w[1]));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for step in 0..3000 {
        let (raw, n) = c.next(step, &mut rng);
        assert!((2..=c.current_max(step)).contains(&raw));
        assert_eq!(n, padded_length(raw));
    }
    let select = Curriculum::new(TaskKind::Select, 4, 40, 100);
    assert_eq!(select.instance_len(5), 64);
}

#[test]
fn sample_dump_parses_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for task in TaskKind::ALL {
        let raw = task.generate(12, &mut rng);
        let s = encode(&raw, 16, task.pad_mode(), &mut rng).unwrap();
        let (input, target) = parse_sample_line(&dump_sample(&s)).unwrap();
        assert_eq!(input, s.input);
        assert_eq!(target, s.target);
    }
    assert!(parse_sample_line("input=1 2").is_err());
    assert!(parse_sample_line("input=1 x target=1").is_err());
}

#[test]
fn task_names_round_trip() {
    for task in TaskKind::ALL {
        assert_eq!(task.name().parse::<TaskKind>().unwrap(), task);
    }
    assert!("reverse".parse::<TaskKind>().is_err());
}

proptest! {
    #[test]
    fn binary_arithmetic_matches_integers(a in 0u64.., b in 0u64..) {
        let (x, y) = (bits_of(a as u128), bits_of(b as u128));
        prop_assert_eq!(value_of(&x), a as u128);
        prop_assert_eq!(value_of(&add_bits(&x, &y)), a as u128 + b as u128);
        prop_assert_eq!(value_of(&mul_bits(&x, &y)), a as u128 * b as u128);
        prop_assert_eq!(&normalize(add_bits(&x, &y)), &add_bits(&x, &y));
    }

    #[test]
    fn leading_zeros_do_not_change_results(a in 0u32.., b in 0u32.., pad in 0usize..5) {
        let mut x = bits_of(a as u128);
        x.extend(std::iter::repeat_n(0, pad));
        let y = bits_of(b as u128);
        prop_assert_eq!(mul_bits(&x, &y), bits_of(a as u128 * b as u128));
        prop_assert_eq!(add_bits(&x, &y), bits_of(a as u128 + b as u128));
    }

    #[test]
    fn padded_length_is_smallest_power(n in 0usize..100_000) {
        let p = padded_length(n);
        prop_assert!(p.is_power_of_two() && p >= n.max(2));
        prop_assert!(p / 2 < n.max(2));
    }
}
