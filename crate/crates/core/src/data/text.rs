//! Templated text-only tasks: small-integer arithmetic, copy and word reversal.

use rand::Rng;

use super::vocab::{COLORS, COLS, ROWS, SHAPES, SIZES};

/// `(prompt, answer)` strings for one templated task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextQa {
    pub prompt: String,
    pub answer: String,
}

fn random_words<R: Rng + ?Sized>(rng: &mut R) -> Vec<&'static str> {
    let pool: Vec<&'static str> = COLORS
        .iter()
        .chain(SHAPES.iter())
        .chain(SIZES.iter())
        .chain(ROWS.iter())
        .chain(COLS.iter())
        .copied()
        .collect();
    let n = rng.random_range(1..=4);
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

pub fn random_qa<R: Rng + ?Sized>(rng: &mut R) -> TextQa {
    match rng.random_range(0..5) {
        0 => {
            let (a, b) = (rng.random_range(0..50), rng.random_range(0..50));
            TextQa {
                prompt: format!("what is {a} plus {b}"),
                answer: (a + b).to_string(),
            }
        }
        1 => {
            let (a, b) = (rng.random_range(0..100), rng.random_range(0..100));
            let (a, b) = (a.max(b), a.min(b));
            TextQa {
                prompt: format!("what is {a} minus {b}"),
                answer: (a - b).to_string(),
            }
        }
        2 => {
            let (a, b) = (rng.random_range(0..10), rng.random_range(0..10));
            TextQa {
                prompt: format!("what is {a} times {b}"),
                answer: (a * b).to_string(),
            }
        }
        3 => {
            let w = random_words(rng).join(" ");
            TextQa {
                prompt: format!("repeat: {w}"),
                answer: w,
            }
        }
        _ => {
            let w = random_words(rng);
            let rev: Vec<&str> = w.iter().rev().copied().collect();
            TextQa {
                prompt: format!("reverse: {}", w.join(" ")),
                answer: rev.join(" "),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn answers_fit_the_vocabulary() {
        let v = crate::data::vocab::Vocab::standard();
        for i in 0..500 {
            let qa = random_qa(&mut rng_for(3, "text", i));
            assert!(v.encode(&qa.prompt).is_ok(), "{}", qa.prompt);
            assert!(!v.encode(&qa.answer).unwrap().is_empty());
        }
    }
}
