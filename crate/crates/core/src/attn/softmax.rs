/// Streaming softmax normalizer over a row of logits.
///
/// Keeps the running maximum `max`, `sum = Σ e^(x − max)` and
/// `sq_sum = Σ e^(2(x − max))`. When the maximum grows both sums are rescaled,
/// `sum` by `e^(max_old − max_new)` and `sq_sum` by its square, so after any
/// sequence of updates `probability(x) = e^(x − max) / sum` and
/// `Σ p² = sq_sum / sum²` match a direct softmax over the same logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineSoftmax {
    pub max: f64,
    pub sum: f64,
    pub sq_sum: f64,
}

impl Default for OnlineSoftmax {
    fn default() -> Self {
        Self::new()
    }
}

impl OnlineSoftmax {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            sq_sum: 0.0,
        }
    }

    fn rescale_to(&mut self, new_max: f64) {
        if new_max > self.max {
            let factor = if self.max == f64::NEG_INFINITY {
                0.0
            } else {
                (self.max - new_max).exp()
            };
            self.sum *= factor;
            self.sq_sum *= factor * factor;
            self.max = new_max;
        }
    }

    pub fn push(&mut self, logit: f64) {
        self.rescale_to(logit);
        let e = (logit - self.max).exp();
        self.sum += e;
        self.sq_sum += e * e;
    }

    /// Folds a block of logits with one rescale.
    pub fn push_block(&mut self, logits: &[f32]) {
        let block_max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
        if block_max == f32::NEG_INFINITY {
            return;
        }
        self.rescale_to(block_max as f64);
        let m = self.max;
        for &x in logits {
            let e = (x as f64 - m).exp();
            self.sum += e;
            self.sq_sum += e * e;
        }
    }

    /// Combines two accumulators over disjoint logit sets.
    pub fn merge(&mut self, other: &OnlineSoftmax) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        self.rescale_to(other.max);
        let f = (other.max - self.max).exp();
        self.sum += other.sum * f;
        self.sq_sum += other.sq_sum * f * f;
    }

    pub fn probability(&self, logit: f64) -> f64 {
        (logit - self.max).exp() / self.sum
    }

    /// `Σ p²` over every logit seen so far.
    pub fn sum_sq_probability(&self) -> f64 {
        self.sq_sum / (self.sum * self.sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct(logits: &[f64]) -> Vec<f64> {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn matches_direct_softmax(logits in prop::collection::vec(-50.0f64..50.0, 1..200), split in 1usize..16) {
            let mut one = OnlineSoftmax::new();
            logits.iter().for_each(|&x| one.push(x));

            let mut blocks = OnlineSoftmax::new();
            for b in logits.chunks(split) {
                let b32: Vec<f32> = b.iter().map(|&x| x as f32).collect();
                blocks.push_block(&b32);
            }

            let mut merged = OnlineSoftmax::new();
            for b in logits.chunks(split).rev() {
                let mut part = OnlineSoftmax::new();
                b.iter().for_each(|&x| part.push(x));
                merged.merge(&part);
            }

            let want = direct(&logits);
            let want_sq: f64 = want.iter().map(|p| p * p).sum();
            for (x, p) in logits.iter().zip(&want) {
                prop_assert!((one.probability(*x) - p).abs() < 1e-6);
                prop_assert!((merged.probability(*x) - p).abs() < 1e-6);
                prop_assert!((blocks.probability(*x as f32 as f64) - p).abs() < 1e-5);
            }
            prop_assert!((one.sum_sq_probability() - want_sq).abs() < 1e-6);
            prop_assert!((merged.sum_sq_probability() - want_sq).abs() < 1e-6);
        }
    }

    #[test]
    fn single_logit_has_probability_one() {
        let mut s = OnlineSoftmax::new();
        s.push(-3.0);
        assert_eq!(s.probability(-3.0), 1.0);
        assert_eq!(s.sum_sq_probability(), 1.0);
    }
}
