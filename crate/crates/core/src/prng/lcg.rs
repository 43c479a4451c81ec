/// Textbook 64-bit LCG (Knuth's MMIX constants). Its output is its entire
/// state, so a single observed word predicts every later one. Only used to
/// stand in for a demonstrably weak generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeakLcg {
    state: u64,
}

const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
const INCREMENT: u64 = 1_442_695_040_888_963_407;

impl WeakLcg {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_word_predicts_the_next() {
        let mut g = WeakLcg::new(12345);
        let first = g.next_u64();
        let mut clone = WeakLcg::new(first);
        assert_eq!(clone.next_u64(), g.next_u64());
    }
}
