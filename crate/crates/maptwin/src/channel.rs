//! Two-state Markov uplink model and the per-slot upload budget.
//!
//! The device uploads over a high-rate link that drops to a low-rate backup
//! and recovers according to per-slot transition probabilities. A slot's
//! budget is the number of whole frames that fit through the link:
//! `floor(rate * slot_seconds / frame_bits)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelState {
    High,
    Low,
}

impl ChannelState {
    pub fn is_high(self) -> bool {
        matches!(self, ChannelState::High)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// High-rate state, bits per second.
    pub r_high: f64,
    /// Low-rate backup, bits per second.
    pub r_low: f64,
    /// Probability of leaving the high-rate state per slot.
    pub p_hl: f64,
    /// Probability of entering the high-rate state per slot.
    pub p_lh: f64,
    /// Upload size of one frame, bits.
    pub frame_bits: f64,
    /// Slot duration, seconds.
    pub slot_seconds: f64,
    /// State assigned to the first slot.
    pub initial: ChannelState,
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("rates must satisfy r_high > r_low > 0, got {r_high} / {r_low}")]
    BadRates { r_high: f64, r_low: f64 },
    #[error("transition probabilities must lie in [0, 1], got p_hl={p_hl}, p_lh={p_lh}")]
    BadProbabilities { p_hl: f64, p_lh: f64 },
    #[error("frame_bits and slot_seconds must be positive")]
    BadSlotShape,
    #[error("high-rate ratio must lie strictly inside (0, 1), got {0}")]
    BadRatio(f64),
}

impl ChannelModel {
    pub fn new(
        r_high: f64,
        r_low: f64,
        p_hl: f64,
        p_lh: f64,
        frame_bits: f64,
        slot_seconds: f64,
    ) -> Result<Self, ChannelError> {
        let m = ChannelModel {
            r_high,
            r_low,
            p_hl,
            p_lh,
            frame_bits,
            slot_seconds,
            initial: ChannelState::High,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.r_high.is_nan() || self.r_low.is_nan() || self.r_high <= self.r_low || self.r_low <= 0.0 {
            return Err(ChannelError::BadRates { r_high: self.r_high, r_low: self.r_low });
        }
        if !((0.0..=1.0).contains(&self.p_hl) && (0.0..=1.0).contains(&self.p_lh)) {
            return Err(ChannelError::BadProbabilities { p_hl: self.p_hl, p_lh: self.p_lh });
        }
        if self.frame_bits.is_nan()
            || self.slot_seconds.is_nan()
            || self.frame_bits <= 0.0
            || self.slot_seconds <= 0.0
        {
            return Err(ChannelError::BadSlotShape);
        }
        Ok(())
    }

    /// The measured simulation parameters: 20/8 Mbit/s rates, 2 s slots,
    /// 2 Mbit frames.
    pub fn table1() -> Self {
        ChannelModel {
            r_high: 20e6,
            r_low: 8e6,
            p_hl: 0.2,
            p_lh: 0.2,
            frame_bits: 2e6,
            slot_seconds: 2.0,
            initial: ChannelState::High,
        }
    }

    /// Reparameterizes the chain by its stationary high-rate fraction `rho`
    /// and a mixing rate `mu`: `p_lh = mu*rho`, `p_hl = mu*(1-rho)`.
    pub fn with_high_rate_ratio(mut self, rho: f64, mu: f64) -> Result<Self, ChannelError> {
        if rho.is_nan() || rho <= 0.0 || rho >= 1.0 {
            return Err(ChannelError::BadRatio(rho));
        }
        self.p_lh = mu * rho;
        self.p_hl = mu * (1.0 - rho);
        self.validate()?;
        Ok(self)
    }

    pub fn rate(&self, s: ChannelState) -> f64 {
        match s {
            ChannelState::High => self.r_high,
            ChannelState::Low => self.r_low,
        }
    }
}

/// One Markov transition. High leaves with `p_hl`, Low recovers with `p_lh`.
pub fn next_state(s: ChannelState, m: &ChannelModel, rng: &mut impl Rng) -> ChannelState {
    let draw = rng.gen::<f64>();
    match s {
        ChannelState::High if draw < m.p_hl => ChannelState::Low,
        ChannelState::Low if draw < m.p_lh => ChannelState::High,
        same => same,
    }
}

/// Whole frames that fit through the slot's uplink.
pub fn budget(s: ChannelState, m: &ChannelModel) -> usize {
    (m.rate(s) * m.slot_seconds / m.frame_bits).floor() as usize
}

/// Long-run fraction of high-rate slots, `p_lh / (p_lh + p_hl)`. A frozen
/// chain (both probabilities zero) stays in its initial state forever.
pub fn stationary_high_fraction(m: &ChannelModel) -> f64 {
    let total = m.p_lh + m.p_hl;
    if total == 0.0 {
        return if m.initial.is_high() { 1.0 } else { 0.0 };
    }
    m.p_lh / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn absorbing_and_forced_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut absorbing = ChannelModel::table1();
        absorbing.p_hl = 0.0;
        for _ in 0..100 {
            assert_eq!(next_state(ChannelState::High, &absorbing, &mut rng), ChannelState::High);
        }

        let mut forced = ChannelModel::table1();
        forced.p_hl = 1.0;
        for _ in 0..100 {
            assert_eq!(next_state(ChannelState::High, &forced, &mut rng), ChannelState::Low);
        }
    }

    #[test]
    fn budget_from_measured_parameters() {
        let m = ChannelModel::table1();
        assert_eq!(budget(ChannelState::High, &m), 20);
        assert_eq!(budget(ChannelState::Low, &m), 8);

        let tiny = ChannelModel::new(2e6, 1e6, 0.1, 0.1, 5e6, 2.0).unwrap();
        assert_eq!(budget(ChannelState::Low, &tiny), 0);
    }

    #[test]
    fn budget_monotonicity() {
        let base = ChannelModel::table1();
        let mut longer = base;
        longer.slot_seconds = 4.0;
        let mut heavier = base;
        heavier.frame_bits = 4e6;
        assert!(budget(ChannelState::High, &base) >= budget(ChannelState::Low, &base));
        assert!(budget(ChannelState::High, &longer) >= budget(ChannelState::High, &base));
        assert!(budget(ChannelState::High, &heavier) <= budget(ChannelState::High, &base));
    }

    #[test]
    fn stationary_fraction_examples() {
        let mut m = ChannelModel::table1();
        m.p_hl = 0.2;
        m.p_lh = 0.2;
        assert_eq!(stationary_high_fraction(&m), 0.5);

        m.p_hl = 0.1;
        m.p_lh = 0.3;
        assert!((stationary_high_fraction(&m) - 0.75).abs() < 1e-12);

        m.p_hl = 0.0;
        m.p_lh = 0.4;
        assert_eq!(stationary_high_fraction(&m), 1.0);

        m.p_hl = 0.0;
        m.p_lh = 0.0;
        assert_eq!(stationary_high_fraction(&m), 1.0);
        m.initial = ChannelState::Low;
        assert_eq!(stationary_high_fraction(&m), 0.0);
    }

    #[test]
    fn empirical_frequency_matches_stationary_fraction() {
        let m = ChannelModel::table1().with_high_rate_ratio(0.75, 0.4).unwrap();
        assert!((stationary_high_fraction(&m) - 0.75).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut state = ChannelState::High;
        let mut highs = 0u64;
        let slots = 100_000;
        for _ in 0..slots {
            state = next_state(state, &m, &mut rng);
            highs += u64::from(state.is_high());
        }
        let frac = highs as f64 / slots as f64;
        assert!((frac - 0.75).abs() < 0.02, "empirical {frac}");
    }

    #[test]
    fn ratio_reparameterization_validates() {
        assert_eq!(
            ChannelModel::table1().with_high_rate_ratio(1.0, 0.2).unwrap_err(),
            ChannelError::BadRatio(1.0)
        );
        assert!(ChannelModel::table1().with_high_rate_ratio(0.5, 0.2).is_ok());
        let m = ChannelModel::table1().with_high_rate_ratio(0.25, 0.2).unwrap();
        assert!((m.p_lh - 0.05).abs() < 1e-12);
        assert!((m.p_hl - 0.15).abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(proptest::test_runner::Config::with_cases(8))]
            #[test]
            fn empirical_matches_stationary(p_hl in 0.05f64..0.95, p_lh in 0.05f64..0.95, seed in 0u64..1000) {
                let mut m = ChannelModel::table1();
                m.p_hl = p_hl;
                m.p_lh = p_lh;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut state = ChannelState::High;
                let mut highs = 0u64;
                for _ in 0..100_000 {
                    state = next_state(state, &m, &mut rng);
                    highs += u64::from(state.is_high());
                }
                let frac = highs as f64 / 100_000.0;
                prop_assert!((frac - stationary_high_fraction(&m)).abs() < 0.02);
            }
        }
    }
}
