//! MemoryBank against a plain Vec shadow that appends and keeps the last `capacity` rows.

use lgdn::banks::MemoryBank;
use lgdn::Error;
use proptest::prelude::*;

const WIDTH: usize = 3;

fn unit(tag: u32) -> Vec<f64> {
    let t = f64::from(tag) * 0.731;
    let v = [t.cos(), t.sin(), (0.5 * t).cos()];
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn ops() -> impl Strategy<Value = (usize, Vec<Vec<u32>>)> {
    (1usize..=64).prop_flat_map(|cap| (Just(cap), prop::collection::vec(prop::collection::vec(any::<u32>(), 0..=cap + 8), 1..12)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bank_matches_truncated_tail(case in ops()) {
        let (cap, batches) = case;
        let mut bank = MemoryBank::<f64>::new(cap, WIDTH).unwrap();
        let mut shadow: Vec<Vec<f64>> = Vec::new();
        for tags in batches {
            let batch: Vec<Vec<f64>> = tags.iter().map(|&t| unit(t)).collect();
            let before = bank.clone();
            match bank.enqueue(&batch) {
                Ok(()) => {
                    prop_assert!(batch.len() <= cap);
                    shadow.extend(batch);
                    let keep = shadow.len().saturating_sub(cap);
                    shadow.drain(..keep);
                }
                Err(Error::BatchLargerThanCapacity { batch: b, capacity }) => {
                    prop_assert_eq!((b, capacity), (batch.len(), cap));
                    prop_assert_eq!(&bank, &before);
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
            prop_assert_eq!(bank.len(), shadow.len());
            prop_assert_eq!(bank.negatives(), shadow.clone());
            prop_assert_eq!(bank.flat(), shadow.concat());
        }
    }
}

#[test]
fn rejected_rows_leave_the_bank_untouched() {
    let mut bank = MemoryBank::<f64>::new(4, WIDTH).unwrap();
    bank.enqueue(&[unit(1)]).unwrap();
    let snapshot = bank.clone();
    assert!(matches!(bank.enqueue(&[unit(2), vec![1.0, 1.0, 0.0]]), Err(Error::NotUnitNorm { .. })));
    assert!(bank.enqueue(&[vec![1.0, 0.0]]).is_err());
    assert_eq!(bank, snapshot);
}
