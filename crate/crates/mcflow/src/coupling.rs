//! Conversion-unit residuals.
//!
//! A coupling node replaces nodal balances with its unit's own equations:
//! the electrolyser splits converted power between gas output and residual
//! heat, power-to-gas routes all of it to gas, the electric boiler all of it
//! to heat. Inputs are the dummy-link slot values in SI units.

use crate::carrier::terminal_heat_power_residual;

/// Electrolyser energy balance: `η·P = HHV·q + Δφ`, as a residual.
pub fn electrolyser_energy_balance_residual(p: f64, q: f64, dphi: f64, eta: f64, hhv: f64) -> f64 {
    eta * p - hhv * q - dphi
}

/// Electrolyser residual-heat split: `η_h·η·P = Δφ`, as a residual.
/// In free-efficiency mode `eta_h` is the current value of the extra unknown.
pub fn electrolyser_residual_heat_residual(p: f64, dphi: f64, eta: f64, eta_h: f64) -> f64 {
    eta_h * eta * p - dphi
}

/// Power-to-gas: `η·P = HHV·q`, as a residual.
pub fn p2g_residual(p: f64, q: f64, eta: f64, hhv: f64) -> f64 {
    eta * p - hhv * q
}

/// Electric boiler: `Δφ = η·P`, as a residual.
pub fn eboiler_residual(p: f64, dphi: f64, eta: f64) -> f64 {
    eta * p - dphi
}

/// Heat-side closure of a coupling's dummy link, identical in shape to a
/// terminal's total heat power: `C_p·m·(T^s - T^r) = Δφ`.
pub fn coupling_heat_terminal_residual(m: f64, t_s: f64, t_r: f64, dphi: f64, c_p: f64) -> f64 {
    terminal_heat_power_residual(m, t_s, t_r, dphi, c_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    const ETA: f64 = 0.9;
    const HHV: f64 = 1.418e8;

    #[test]
    fn all_residuals_vanish_at_the_zero_state() {
        assert_eq!(
            electrolyser_energy_balance_residual(0.0, 0.0, 0.0, ETA, HHV),
            0.0
        );
        assert_eq!(
            electrolyser_residual_heat_residual(0.0, 0.0, ETA, 1.0 / 6.0),
            0.0
        );
        assert_eq!(p2g_residual(0.0, 0.0, ETA, HHV), 0.0);
        assert_eq!(eboiler_residual(0.0, 0.0, ETA), 0.0);
        assert_eq!(
            coupling_heat_terminal_residual(0.0, 338.15, 323.15, 0.0, 4182.0),
            0.0
        );
    }

    #[test]
    fn energy_balance_closed_form_gas_flow() {
        // With Δφ = 0, the balance pins q = η·P/HHV: 1 MW -> 6.347e-3 kg/s.
        let q = ETA * 1.0e6 / HHV;
        assert_relative_eq!(q, 6.346_967_559_94e-3, max_relative = 1e-9);
        assert_abs_diff_eq!(
            electrolyser_energy_balance_residual(1.0e6, q, 0.0, ETA, HHV),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn residual_heat_split_reproduces_published_operating_point() {
        // P = 2.434 MW, η = 0.9, η_h = 1/6: Δφ = 0.3651 MW and the remaining
        // balance gives q = 0.0129 kg/s.
        let p = 2.434e6;
        let eta_h = 1.0 / 6.0;
        let dphi = eta_h * ETA * p;
        assert_relative_eq!(dphi, 0.365e6, max_relative = 5e-3);
        assert_abs_diff_eq!(
            electrolyser_residual_heat_residual(p, dphi, ETA, eta_h),
            0.0,
            epsilon = 1e-9
        );
        let q = (ETA * p - dphi) / HHV;
        assert_relative_eq!(q, 0.0129, max_relative = 1e-2);
        assert_abs_diff_eq!(
            electrolyser_energy_balance_residual(p, q, dphi, ETA, HHV),
            0.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn p2g_closed_form() {
        // 2 MW in -> 0.012694 kg/s out.
        let q = ETA * 2.0e6 / HHV;
        assert_relative_eq!(q, 0.012_693_935_119_887, max_relative = 1e-12);
        assert_abs_diff_eq!(p2g_residual(2.0e6, q, ETA, HHV), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn eboiler_closed_form() {
        assert_abs_diff_eq!(eboiler_residual(2.0e6, 1.8e6, ETA), 0.0);
        assert_abs_diff_eq!(eboiler_residual(1.0e6, 0.0, ETA), 0.9e6);
    }

    #[test]
    fn electrolyser_degenerates_to_p2g_and_boiler() {
        for p in [0.3e6, 1.0e6, 2.434e6] {
            let q = ETA * p / HHV;
            // η_h = 0: heat output zero, energy balance collapses onto p2g.
            assert_abs_diff_eq!(
                electrolyser_energy_balance_residual(p, q, 0.0, ETA, HHV),
                p2g_residual(p, q, ETA, HHV),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(electrolyser_residual_heat_residual(p, 0.0, ETA, 0.0), 0.0);
            // η_h = 1: gas output zero, both equations collapse onto the boiler.
            let dphi = ETA * p;
            assert_abs_diff_eq!(
                electrolyser_energy_balance_residual(p, 0.0, dphi, ETA, HHV),
                eboiler_residual(p, dphi, ETA),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                electrolyser_residual_heat_residual(p, dphi, ETA, 1.0),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn coupling_heat_terminal_reproduces_published_mass_flow() {
        // Δφ = 0.365 MW across T^s = 338.15 K, T^r = 322.942 K -> m = 5.74 kg/s.
        let m = 0.365e6 / (4182.0 * (338.15 - 322.942));
        assert_relative_eq!(m, 5.74, max_relative = 5e-3);
        assert_abs_diff_eq!(
            coupling_heat_terminal_residual(m, 338.15, 322.942, 0.365e6, 4182.0),
            0.0,
            epsilon = 1e-6
        );
    }

    proptest! {
        #[test]
        fn outputs_are_linear_in_input_power(
            p in 0.0..10.0e6f64,
            eta_h in 0.0..=1.0f64,
        ) {
            // At fixed η_h the balance solves to Δφ = η_h·η·P and
            // q = (1 - η_h)·η·P/HHV, both linear in P.
            let dphi = eta_h * ETA * p;
            let q = (1.0 - eta_h) * ETA * p / HHV;
            prop_assert!(electrolyser_residual_heat_residual(p, dphi, ETA, eta_h).abs() <= 1e-9 * p.max(1.0));
            prop_assert!(electrolyser_energy_balance_residual(p, q, dphi, ETA, HHV).abs() <= 1e-8 * p.max(1.0));
            // Doubling P doubles both outputs exactly.
            let dphi2 = eta_h * ETA * (2.0 * p);
            prop_assert!((dphi2 - 2.0 * dphi).abs() <= 1e-9 * dphi.abs().max(1.0));
        }
    }
}
